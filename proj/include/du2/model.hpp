#pragma once

// The end-to-end network: DC features and cost volume, DP confidence
// volume, affine alignment, fusion and refinement.

#include <string>
#include <string_view>
#include <vector>

#include "du2/costvol.hpp"
#include "du2/fusion.hpp"
#include "du2/losses.hpp"
#include "du2/refine.hpp"
#include "du2/synthgen.hpp"

namespace du2 {

/// How the DP branch enters the low-resolution estimate.
///   dc_only     no DP anywhere (refinement falls back to rgb_only)
///   dp_dc_2d    fuse the DC disparity with the aligned DP disparity map
///   dp_dc_cost  fuse logit volumes, zero-padded in logit space
///   dp_dc_conf  fuse confidence volumes
enum class FusionMode { dc_only, dp_dc_2d, dp_dc_cost, dp_dc_conf };

FusionMode parse_fusion_mode(std::string_view name);
std::string_view to_string(FusionMode mode);

struct ModelConfig {
  DcFeatureConfig dc;
  DpNetworkConfig dp;
  FusionConfig fusion;
  RefineConfig refine;
  FusionMode fusion_mode = FusionMode::dp_dc_conf;
  double gamma = 0.1;
  double dc_temperature = 0.5;
  std::size_t factor = 8;    // low-resolution divisor of the RGB extent
  std::size_t dp_scale = 2;  // DP extent / RGB extent
};

struct ModelInputs {
  Tensor left, right;        // [3, H, W]
  Tensor dp_top, dp_bottom;  // [1, dp_scale H, dp_scale W]
  WarpMap w_r;               // [2, H, W]
};

ModelInputs model_inputs(const SceneSample& sample);

struct ModelOutputs {
  LossOutputs loss;
  AffineParams affine;
  Tensor dc_cost;  // [h, w, 17] matching cost behind c_dc
  ConfidenceVolume c_dc;
  ConfidenceVolume fused;  // undefined in dp_dc_2d mode
  Tensor validity;         // [h, w], zeros in dc_only mode
  Tensor d_ref;            // [H, W]
};

class DualNet {
 public:
  DualNet() = default;
  DualNet(const ModelConfig& config, Rng& rng);

  ModelOutputs operator()(const ModelInputs& in) const;
  void register_parameters(ParameterSet& set) const;
  const ModelConfig& config() const { return config_; }
  bool uses_dp() const { return config_.fusion_mode != FusionMode::dc_only; }

  /// Loss weights with the DP term dropped when the model has no DP branch.
  LossWeights effective_weights(LossWeights w) const;

 private:
  ModelConfig config_;
  DcFeatureExtractor dc_;
  DpCostNetwork dp_;
  FusionNetwork fusion_;
  std::vector<Conv2dLayer> fusion2d_;
  Refiner refine_;
};

}  // namespace du2
