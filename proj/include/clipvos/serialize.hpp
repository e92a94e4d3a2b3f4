#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "clipvos/tensor.hpp"

namespace clipvos {

// Weight file layout, all integers little-endian:
//   magic "CLIPVOSW" (8 bytes), version byte (1)
//   repeated until EOF:
//     u64 name length, utf-8 name bytes, u64 rank, rank x u64 dims,
//     numel x float32 payload
inline constexpr char kWeightMagic[8] = {'C', 'L', 'I', 'P', 'V', 'O', 'S', 'W'};
inline constexpr unsigned char kWeightVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> read_weights(const std::filesystem::path& path);

}  // namespace clipvos
