#pragma once

// Full-resolution refinement: D_ref = upsample(D_unref) + R, with R
// predicted from guide features of the right RGB image and/or the DP pair.

#include <string>
#include <string_view>
#include <vector>

#include "du2/costvol.hpp"
#include "du2/fusion.hpp"
#include "du2/layers.hpp"

namespace du2 {

enum class RefineMode { rgb_only, dp_only, dp_image_warp, rgb_plus_dp };

RefineMode parse_refine_mode(std::string_view name);
std::string_view to_string(RefineMode mode);

struct RefineConfig {
  RefineMode mode = RefineMode::rgb_plus_dp;
  std::size_t guide_channels = 16;  // per guide branch
  std::size_t trunk_channels = 8;
  std::size_t residual_blocks = 6;
  double slope = 0.2;
  std::size_t factor = 8;  // D_unref resolution divisor
};

/// Configuration for an ablation mode with the other knobs at defaults.
RefineConfig refine_ablation_mode(RefineMode mode);

struct RefineInputs {
  Tensor d_unref;    // [h, w]
  Tensor rgb_right;  // [3, H, W]
  Tensor dp_top;     // [1, Hd, Wd]
  Tensor dp_bottom;  // [1, Hd, Wd]
  WarpMap w_r;       // [2, H, W] positions in DP pixels
};

/// Bilinear upsampling by `factor` on pixel centers (clamped at the
/// border), values multiplied by `factor`.
Tensor upsample_disparity(const Tensor& d, std::size_t factor);

/// Two 3x3 convs with leaky ReLU. The second conv has stride `stride`.
struct GuideBranch {
  Conv2dLayer first;
  Conv2dLayer second;

  GuideBranch() = default;
  GuideBranch(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);
  Tensor operator()(const Tensor& x, double slope) const;
  void register_parameters(ParameterSet& set, const std::string& prefix) const;
};

class Refiner {
 public:
  Refiner() = default;
  Refiner(const RefineConfig& config, Rng& rng);

  Tensor operator()(const RefineInputs& in) const;
  void register_parameters(ParameterSet& set, const std::string& prefix) const;

  const RefineConfig& config() const { return config_; }
  Conv2dLayer& output_layer() { return out_; }
  /// Parameter count of the guide branches that read DP data.
  std::size_t dp_parameter_count() const;

 private:
  Tensor rgb_features(const GuideBranch& branch, const Tensor& rgb) const;
  Tensor dp_features(const GuideBranch& branch, const RefineInputs& in) const;

  RefineConfig config_;
  std::vector<GuideBranch> rgb_;
  std::vector<GuideBranch> dp_;
  Conv2dLayer in_;
  std::vector<ResidualBlock> blocks_;
  Conv2dLayer out_;
};

}  // namespace du2
