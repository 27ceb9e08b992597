#include "du2/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "du2/errors.hpp"
#include "du2/layers.hpp"

namespace du2 {

GradCheckReport check_gradients(const std::string& name, const std::function<Tensor()>& loss_fn,
                                std::vector<Tensor> inputs, const GradCheckOptions& options) {
  GradCheckReport report;
  report.name = name;

  for (auto& t : inputs) {
    if (!t.requires_grad()) throw UsageError("gradcheck " + name + ": input does not require grad");
    t.zero_grad();
  }
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    auto g = t.grad();
    std::vector<double> a(t.size(), 0.0);
    std::copy(g.begin(), g.end(), a.begin());
    if (options.corrupt_analytic) {
      for (double& v : a) v = v * 1.01 + 1e-3;
    }
    analytic.push_back(std::move(a));
  }

  Rng rng(options.seed);
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].data();
    std::vector<std::size_t> entries(values.size());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries_per_input && entries.size() > options.max_entries_per_input) {
      for (std::size_t i = 0; i < options.max_entries_per_input; ++i) {
        const auto j = static_cast<std::size_t>(
            rng.integer(static_cast<std::int64_t>(i), static_cast<std::int64_t>(entries.size() - 1)));
        std::swap(entries[i], entries[j]);
      }
      entries.resize(options.max_entries_per_input);
    }
    for (std::size_t i : entries) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = loss_fn().item();
      values[i] = saved - options.step;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.magnitude_floor});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      ++report.entries;
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace du2
