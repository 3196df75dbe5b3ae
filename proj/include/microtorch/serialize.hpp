#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "microtorch/tensor.hpp"

namespace microtorch {

// MTNS layout: "MTNS", u8 dtype code, u8 rank, rank x u64 dims, raw
// row-major little-endian payload.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// A checkpoint is a directory of MTNS files plus manifest.json mapping each
// name to its file.
using NamedTensors = std::map<std::string, Tensor>;

void save_checkpoint(const std::filesystem::path& dir, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& dir);

}  // namespace microtorch
