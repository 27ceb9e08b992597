#pragma once

// Run configuration: one JSON document covering data generation, the
// model, training and evaluation. Every run writes the resolved config
// next to its outputs.

#include <cstdint>
#include <filesystem>
#include <string>

#include "du2/losses.hpp"
#include "du2/model.hpp"
#include "du2/mvs.hpp"
#include "du2/synthgen.hpp"

namespace du2 {

struct TrainConfig {
  std::size_t steps = 2000;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t checkpoint_every = 500;
  double huber_delta = 1.0;
  LossWeights weights;
};

struct MvsConfig {
  MultiviewConfig scene;
  std::size_t planes = 64;
  BilateralParams bilateral;
  double cutoff_px = 1.0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  SceneConfig data;
  std::size_t n_train = 64;
  std::size_t n_test = 16;
  ModelConfig model;
  TrainConfig train;
  bool eval_affine_fit = false;
  MvsConfig mvs;
};

/// Applies the keys present in `json_text` on top of `base`. Unknown keys
/// and wrong types raise ConfigError naming the key.
RunConfig parse_run_config(const std::string& json_text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Full document with every key, indented.
std::string to_json_text(const RunConfig& config);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

/// Propagates the run seed into the scene and multiview configs.
SceneConfig scene_config(const RunConfig& config);

}  // namespace du2
