#pragma once

// Shared helpers for the unit tests.

#include "du2/layers.hpp"
#include "du2/tensor.hpp"

namespace du2::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  t.set_requires_grad(grad);
  return t;
}

}  // namespace du2::testing
