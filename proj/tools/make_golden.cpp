// Regenerates the committed golden files. Run with the golden directory as
// the only argument; the byte-compare tests then pin the formats against
// these files.

#include <cstdio>
#include <filesystem>
#include <string>

#include "golden_fixtures.hpp"
#include "masm/io.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: make_golden GOLDEN_DIR\n");
    return 1;
  }
  const std::string dir = argv[1];
  std::filesystem::create_directories(dir);

  masm::write_volume(dir + "/sample.mmv", golden::sample_volume());
  masm::save_checkpoint(dir + "/sample.ckpt", golden::sample_records());

  auto bytes = masm::read_file_bytes(dir + "/sample.ckpt");
  bytes.at(golden::kCorruptOffset) ^= 0x01;
  masm::write_file_bytes(dir + "/corrupt.ckpt", bytes);

  std::printf("wrote sample.mmv, sample.ckpt, corrupt.ckpt under %s\n",
              dir.c_str());
  return 0;
}
