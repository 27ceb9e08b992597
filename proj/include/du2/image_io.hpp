#pragma once

// PFM (float maps), 8-bit RGB PNG, and false-color rendering of disparity.

#include <filesystem>
#include <utility>

#include "du2/tensor.hpp"

namespace du2 {

/// Writes [H, W] as "Pf" or [3, H, W] as "PF", little-endian, rows bottom-up.
void write_pfm(const std::filesystem::path& path, const Tensor& t);
/// Returns [H, W] for "Pf" and [3, H, W] for "PF".
Tensor read_pfm(const std::filesystem::path& path);

/// [3, H, W] in [0, 1], rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Tensor& rgb);
/// [3, H, W] in [0, 1]; gray and alpha inputs are expanded or dropped.
Tensor read_png(const std::filesystem::path& path);

/// Maps [H, W] to [3, H, W] with a turbo-style ramp over [lo, hi].
Tensor colorize(const Tensor& map, double lo, double hi);
/// Min and max over the map.
std::pair<double, double> value_range(const Tensor& map);

}  // namespace du2
