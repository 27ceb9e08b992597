#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "du2/tensor.hpp"

namespace du2 {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor: entries whose gradients are both below this are
  /// compared absolutely at tolerance * floor.
  double magnitude_floor = 1e-4;
  /// 0 checks every entry; otherwise a seeded sample of this many per input.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 0;
  /// Test hook: perturbs the analytic gradient before comparison.
  bool corrupt_analytic = false;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  bool passed = false;
};

/// Compares backward() of `loss_fn` against central differences on every
/// tensor in `inputs`. relative error = |a - n| / max(|a|, |n|, floor).
GradCheckReport check_gradients(const std::string& name, const std::function<Tensor()>& loss_fn,
                                std::vector<Tensor> inputs, const GradCheckOptions& options = {});

}  // namespace du2
