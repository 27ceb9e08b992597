#pragma once

// Affine alignment of DP disparity to DC disparity, volume warping from
// the DP frame to the DC grid, and 3D-conv fusion of the two volumes.

#include <string>
#include <vector>

#include "du2/costvol.hpp"
#include "du2/layers.hpp"

namespace du2 {

/// Tensor [2] holding (alpha, beta) of d_dc = alpha + beta * d_dp.
struct AffineParams {
  Tensor ab;

  double alpha() const { return ab[0]; }
  double beta() const { return ab[1]; }
  static AffineParams identity() { return {Tensor({2}, {0.0, 1.0})}; }
};

/// argmin sum_p (alpha + beta*d_dp - d_dc)^2 + gamma*(beta-1)^2 + gamma*alpha^2,
/// solved in closed form. Differentiable in both maps.
AffineParams fit_affine(const Tensor& d_dp, const Tensor& d_dc, double gamma = 0.1);

/// Absolute source positions [2, H, W] (x then y).
struct WarpMap {
  Tensor coords;
};

/// Samples a full-resolution warp at the centers of `factor` x `factor`
/// blocks and converts the positions from source pixels to the pixels of
/// a source downscaled by `source_factor`.
WarpMap downscale_warp(const WarpMap& full, std::size_t factor, double source_factor);

/// Raw lookup out(y, x, k) = C(w(x,y), (z_k - alpha)/beta),
/// bilinear in space, linear along hypotheses, zero padded on all axes.
/// Differentiable in the volume and the affine parameters.
Tensor warp_volume_raw(const ConfidenceVolume& c_dp, const WarpMap& w, const AffineParams& affine,
                       const DisparityGrid& target_grid);

struct WarpedVolume {
  ConfidenceVolume volume;  // rows renormalized, uniform where empty
  Tensor validity;          // [H, W], raw row mass
};

WarpedVolume warp_dp_volume(const ConfidenceVolume& c_dp, const WarpMap& w, const AffineParams& affine,
                            const DisparityGrid& target_grid);

struct FusionConfig {
  std::size_t hidden = 8;
  double slope = 0.2;
  double temperature = 0.5;
  double log_eps = 1e-6;
  bool validity_channel = true;
};

/// Three 3x3x3 conv3d layers over [log c_dc, log c_dp_warp, validity]
/// stacked as channels of a [C, N, h, w] tensor, then softmax over N.
class FusionNetwork {
 public:
  FusionNetwork() = default;
  FusionNetwork(const FusionConfig& config, Rng& rng);

  std::size_t input_channels() const { return config_.validity_channel ? 3 : 2; }
  const FusionConfig& config() const { return config_; }
  std::vector<Conv3dLayer>& layers() { return layers_; }
  const std::vector<Conv3dLayer>& layers() const { return layers_; }
  void register_parameters(ParameterSet& set, const std::string& prefix) const;

  /// Score tensor [1, N, h, w] for a stacked input [C, N, h, w].
  Tensor scores(const Tensor& stacked) const;

 private:
  FusionConfig config_;
  std::vector<Conv3dLayer> layers_;
};

/// Volume [h, w, N] -> [N, h, w].
Tensor volume_to_slices(const Tensor& v);
/// [N, h, w] -> volume [h, w, N].
Tensor slices_to_volume(const Tensor& s);

ConfidenceVolume fuse_volumes(const ConfidenceVolume& c_dc, const ConfidenceVolume& c_dp_warp,
                              const Tensor& validity, const FusionNetwork& net);

/// Soft-argmax of the fused volume, in 1/8-resolution pixels.
DisparityMap unrefined_disparity(const ConfidenceVolume& fused);

/// Sets weights so the fused volume reproduces c_dc up to the log epsilon.
void set_pass_through(FusionNetwork& net);

}  // namespace du2
