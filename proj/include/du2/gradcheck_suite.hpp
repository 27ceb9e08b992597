#pragma once

// Finite-difference checks over every differentiable operator and the
// end-to-end training graph, on small fixed-seed instances.

#include <string>
#include <vector>

#include "du2/gradcheck.hpp"

namespace du2 {

struct GradCheckSuiteOptions {
  std::uint64_t seed = 1;
  /// Name of a check whose analytic gradient is perturbed (harness self-test).
  std::string corrupt;
  /// Run only checks whose name contains this string.
  std::string filter;
};

std::vector<std::string> gradcheck_suite_names();

std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

}  // namespace du2
