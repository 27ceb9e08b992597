#pragma once

// Adam training with batch size 1, checkpoints and a per-step loss log.

#include <filesystem>
#include <string>
#include <vector>

#include "du2/config.hpp"
#include "du2/model.hpp"
#include "du2/tensor_io.hpp"

namespace du2 {

/// Adam over a parameter set; moments live alongside the parameters.
class Adam {
 public:
  Adam(const ParameterSet& params, const TrainConfig& config);

  /// One update from the current gradients. lr = 0 leaves values untouched.
  void step();
  std::size_t steps() const { return t_; }

  NamedTensors state() const;
  void load_state(const NamedTensors& archive);

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> m_, v_;
  TrainConfig config_;
  std::size_t t_ = 0;
};

/// Writes parameters, optimizer moments and the step counter.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const Adam* adam);
/// Copies stored values into `params` (names and shapes must match) and
/// restores `adam` when given. Returns the stored step counter.
std::size_t load_checkpoint(const std::filesystem::path& path, const ParameterSet& params, Adam* adam);

struct StepLog {
  std::size_t step = 0;
  std::size_t sample = 0;
  double total = 0, dp = 0, dc = 0, unref = 0, ref = 0;
  double alpha = 0, beta = 0;
};

/// Index of the training sample used at `step`: a fresh seeded
/// permutation of the set every epoch.
std::size_t sample_for_step(std::uint64_t seed, std::size_t n, std::size_t step);

struct TrainOptions {
  std::filesystem::path out;  // checkpoint.bin, loss.csv and config.json go here
  /// Resume from <out>/checkpoint.bin when present.
  bool resume = false;
  /// Progress lines on stderr every this many steps; 0 disables.
  std::size_t report_every = 0;
};

/// Trains `net` until config.train.steps and returns the steps taken in
/// this call. Throws NumericError naming the step on a non-finite loss.
std::vector<StepLog> train_model(DualNet& net, const std::vector<SceneSample>& data, const RunConfig& config,
                                 const TrainOptions& options);

std::vector<SceneSample> load_samples(const std::filesystem::path& dir);

}  // namespace du2
