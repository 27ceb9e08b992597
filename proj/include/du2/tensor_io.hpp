#pragma once

// Binary tensor records:
//   "DU2T" | u32 version | u32 rank | u64 extents[rank] | f64 payload
// all little-endian. A parameter archive is a sequence of
//   u32 name length | UTF-8 name | tensor record
// read until end of file.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "du2/tensor.hpp"

namespace du2 {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void save_archive(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_archive(const std::filesystem::path& path);

}  // namespace du2
