#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "masm/tensor.hpp"
#include "masm/volume.hpp"

namespace masm {

/// MMV1 container: 8-byte magic "MMVOL\0\0\1"; little-endian u32 fields
/// D, H, W, num_modalities, has_label; num_modalities rasters of row-major
/// little-endian 32-bit floats; optional label payload of 3 channels of
/// 0/1 bytes (ET, WT, TC). A label-only file has num_modalities = 0.
/// File contents are exact: stray trailing bytes are rejected.
MultiModalVolume read_volume(const std::string& path);
void write_volume(const std::string& path, const MultiModalVolume& vol);

/// One named parameter as stored in a checkpoint.
struct NamedValues {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Checkpoint: ordered records of (u32 name length, name bytes, u32 rank,
/// u32 extents, 32-bit float payload) followed by a u64 FNV-1a digest of all
/// payload bytes in record order. Values are quantized to 32-bit on save and
/// widened on load.
void save_checkpoint(const std::string& path,
                     const std::vector<NamedValues>& params);
std::vector<NamedValues> load_checkpoint(const std::string& path);

/// FNV-1a 64-bit running digest (offset basis 14695981039346656037,
/// prime 1099511628211).
std::uint64_t fnv1a64(const unsigned char* data, std::size_t len,
                      std::uint64_t state = 14695981039346656037ull);

/// Whole-file helpers used by the formats above and the CLI.
std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path,
                      const std::vector<unsigned char>& bytes);

}  // namespace masm
