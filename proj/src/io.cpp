#include "masm/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace masm {

namespace {

constexpr unsigned char kMagic[8] = {'M', 'M', 'V', 'O', 'L', 0, 0, 1};
constexpr std::size_t kMaxExtent = 1u << 12;
constexpr std::size_t kMaxVoxels = 1u << 28;
constexpr std::size_t kMaxRank = 8;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::vector<unsigned char>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

// Bounded forward-only reader over a byte buffer.
struct Cursor {
  const unsigned char* p;
  std::size_t left;
  const char* what;  // file kind, for error messages

  void need(std::size_t n) const {
    if (left < n)
      throw IoError(std::string(what) + ": truncated file");
  }
  std::uint32_t u32() {
    need(4);
    const std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                            (static_cast<std::uint32_t>(p[1]) << 8) |
                            (static_cast<std::uint32_t>(p[2]) << 16) |
                            (static_cast<std::uint32_t>(p[3]) << 24);
    p += 4;
    left -= 4;
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    need(8);
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    left -= 8;
    return v;
  }
  double f32() {
    return static_cast<double>(std::bit_cast<float>(u32()));
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
  unsigned char byte() {
    need(1);
    --left;
    return *p++;
  }
};

}  // namespace

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path + "'");
  return bytes;
}

void write_file_bytes(const std::string& path,
                      const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failure on '" + path + "'");
}

void write_volume(const std::string& path, const MultiModalVolume& vol) {
  const std::size_t n = vol.voxel_count();
  for (std::size_t e : vol.extents)
    if (e == 0 || e > kMaxExtent)
      throw IoError("write_volume: extent " + std::to_string(e) +
                    " out of range");
  if (n > kMaxVoxels) throw IoError("write_volume: volume too large");
  if (vol.voxels.size() > 4)
    throw IoError("write_volume: more than 4 modalities");
  for (const auto& raster : vol.voxels)
    if (raster.size() != n)
      throw IoError("write_volume: modality raster length " +
                    std::to_string(raster.size()) + " does not match extents");
  if (vol.has_label)
    for (const auto& channel : vol.label)
      if (channel.size() != n)
        throw IoError("write_volume: label raster length does not match extents");

  std::vector<unsigned char> out;
  out.reserve(28 + vol.voxels.size() * n * 4 + (vol.has_label ? 3 * n : 0));
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(out, static_cast<std::uint32_t>(vol.extents[0]));
  put_u32(out, static_cast<std::uint32_t>(vol.extents[1]));
  put_u32(out, static_cast<std::uint32_t>(vol.extents[2]));
  put_u32(out, static_cast<std::uint32_t>(vol.voxels.size()));
  put_u32(out, vol.has_label ? 1u : 0u);
  for (const auto& raster : vol.voxels)
    for (double v : raster) put_f32(out, v);
  if (vol.has_label)
    for (const auto& channel : vol.label)
      for (std::uint8_t b : channel) {
        if (b > 1) throw IoError("write_volume: label byte not 0/1");
        out.push_back(b);
      }
  write_file_bytes(path, out);
}

MultiModalVolume read_volume(const std::string& path) {
  const std::vector<unsigned char> bytes = read_file_bytes(path);
  Cursor c{bytes.data(), bytes.size(), "volume"};
  c.need(8);
  if (std::memcmp(c.p, kMagic, 8) != 0)
    throw IoError("volume: bad magic in '" + path + "'");
  c.p += 8;
  c.left -= 8;

  MultiModalVolume vol;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::uint32_t e = c.u32();
    if (e == 0 || e > kMaxExtent)
      throw IoError("volume: extent " + std::to_string(e) + " out of range");
    vol.extents[i] = e;
  }
  const std::uint32_t mods = c.u32();
  const std::uint32_t has_label = c.u32();
  if (mods > 4)
    throw IoError("volume: modality count " + std::to_string(mods) +
                  " out of range");
  if (has_label > 1) throw IoError("volume: has_label flag not 0/1");
  const std::size_t n = vol.voxel_count();
  if (n > kMaxVoxels) throw IoError("volume: volume too large");

  vol.voxels.resize(mods);
  for (auto& raster : vol.voxels) {
    raster.resize(n);
    for (double& v : raster) v = c.f32();
  }
  if (has_label) {
    vol.has_label = true;
    for (auto& channel : vol.label) {
      channel.resize(n);
      for (std::uint8_t& b : channel) {
        b = c.byte();
        if (b > 1) throw IoError("volume: label byte not 0/1");
      }
    }
  }
  if (c.left != 0)
    throw IoError("volume: " + std::to_string(c.left) +
                  " trailing bytes in '" + path + "'");

  const std::size_t slash = path.find_last_of("/\\");
  std::string stem = slash == std::string::npos ? path : path.substr(slash + 1);
  const std::size_t dot = stem.rfind('.');
  if (dot != std::string::npos) stem = stem.substr(0, dot);
  vol.case_id = stem;
  return vol;
}

std::uint64_t fnv1a64(const unsigned char* data, std::size_t len,
                      std::uint64_t state) {
  for (std::size_t i = 0; i < len; ++i) {
    state ^= data[i];
    state *= 1099511628211ull;
  }
  return state;
}

void save_checkpoint(const std::string& path,
                     const std::vector<NamedValues>& params) {
  std::vector<unsigned char> out;
  std::uint64_t digest = 14695981039346656037ull;
  for (const NamedValues& p : params) {
    if (p.name.empty() || p.name.size() > 4096)
      throw IoError("checkpoint: bad parameter name length");
    if (p.shape.size() > kMaxRank)
      throw IoError("checkpoint: parameter '" + p.name + "' rank too large");
    if (shape_numel(p.shape) != p.values.size())
      throw IoError("checkpoint: parameter '" + p.name +
                    "' value count does not match shape");
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t e : p.shape)
      put_u32(out, static_cast<std::uint32_t>(e));
    const std::size_t payload_start = out.size();
    for (double v : p.values) put_f32(out, v);
    digest = fnv1a64(out.data() + payload_start, out.size() - payload_start,
                     digest);
  }
  put_u64(out, digest);
  write_file_bytes(path, out);
}

std::vector<NamedValues> load_checkpoint(const std::string& path) {
  const std::vector<unsigned char> bytes = read_file_bytes(path);
  if (bytes.size() < 8) throw IoError("checkpoint: truncated file");
  Cursor c{bytes.data(), bytes.size() - 8, "checkpoint"};

  std::vector<NamedValues> params;
  std::uint64_t digest = 14695981039346656037ull;
  while (c.left > 0) {
    NamedValues p;
    const std::uint32_t name_len = c.u32();
    if (name_len == 0 || name_len > 4096)
      throw IoError("checkpoint: bad parameter name length");
    p.name = c.str(name_len);
    const std::uint32_t rank = c.u32();
    if (rank > kMaxRank)
      throw IoError("checkpoint: parameter '" + p.name + "' rank too large");
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t e = c.u32();
      if (e == 0 || e > kMaxVoxels)
        throw IoError("checkpoint: parameter '" + p.name +
                      "' extent out of range");
      p.shape.push_back(e);
      numel *= e;
      if (numel > kMaxVoxels)
        throw IoError("checkpoint: parameter '" + p.name + "' too large");
    }
    c.need(4 * numel);
    digest = fnv1a64(c.p, 4 * numel, digest);
    p.values.resize(numel);
    for (double& v : p.values) v = c.f32();
    params.push_back(std::move(p));
  }
  Cursor tail{bytes.data() + (bytes.size() - 8), 8, "checkpoint"};
  if (tail.u64() != digest)
    throw IoError("checkpoint: digest mismatch (corrupt or edited file)");
  return params;
}

}  // namespace masm
