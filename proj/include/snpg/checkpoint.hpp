#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "snpg/ndarray.hpp"

namespace snpg {

struct NamedTensor {
  std::string name;
  NdArray<float> tensor;
};

// Binary layout: magic "SNPG1", then records of
//   u64 name length, name bytes, u64 rank, rank x u64 dims, values as f32,
// all little-endian, until end of file.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

}  // namespace snpg
