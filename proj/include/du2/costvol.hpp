#pragma once

// Cost and confidence volumes. Volumes are laid out [H, W, N] with the
// hypothesis axis last; feature maps are [C, H, W].

#include <filesystem>
#include <string>
#include <vector>

#include "du2/layers.hpp"
#include "du2/tensor.hpp"

namespace du2 {

/// Hypothesis i has value first + i * step.
struct DisparityGrid {
  double first = 0.0;
  double step = 1.0;
  std::size_t count = 17;

  double value(std::size_t i) const { return first + static_cast<double>(i) * step; }
  double last() const { return value(count - 1); }
  double midpoint() const { return 0.5 * (first + last()); }
  bool operator==(const DisparityGrid&) const = default;

  /// 0..16 step 1, in 1/8-resolution pixels.
  static DisparityGrid dc() { return {0.0, 1.0, 17}; }
  /// -4..4 step 0.5, in DP pixels.
  static DisparityGrid dp() { return {-4.0, 0.5, 17}; }
};

struct ConfidenceVolume {
  Tensor values;  // [H, W, count]
  DisparityGrid grid;

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
};

/// Disparity [H, W] with a per-pixel confidence in [0, 1].
struct DisparityMap {
  Tensor disparity;
  Tensor confidence;
};

struct DcFeatureConfig {
  std::size_t channels = 16;
  std::size_t residual_blocks = 6;
  double slope = 0.2;
};

/// Three stride-2 convs to 1/8 resolution followed by residual blocks.
class DcFeatureExtractor {
 public:
  DcFeatureExtractor() = default;
  DcFeatureExtractor(const DcFeatureConfig& config, Rng& rng);

  /// image [3, H, W] with H, W divisible by 8 -> [C, H/8, W/8].
  Tensor operator()(const Tensor& image) const;
  void register_parameters(ParameterSet& set, const std::string& prefix) const;
  const DcFeatureConfig& config() const { return config_; }

 private:
  DcFeatureConfig config_;
  std::vector<Conv2dLayer> down_;
  std::vector<ResidualBlock> blocks_;
};

/// cost(y, x, i) = sum_c |feat_r(c, y, x) - feat_l(c, y, x + d_i)|, where
/// d_i must be an integer. Left taps outside the map read as zero.
Tensor build_dc_cost_volume(const Tensor& feat_l, const Tensor& feat_r, const DisparityGrid& grid);

struct DpNetworkConfig {
  std::size_t channels = 16;
  std::size_t residual_blocks = 6;
  double slope = 0.2;
  double temperature = 0.5;
  DisparityGrid grid = DisparityGrid::dp();
};

/// Stride-2 convs from the DP pair down to the target grid, residual
/// blocks, then a conv emitting one channel per hypothesis.
class DpCostNetwork {
 public:
  DpCostNetwork() = default;
  /// `ratio` is DP extent / target extent and must be a power of two.
  DpCostNetwork(const DpNetworkConfig& config, std::size_t ratio, Rng& rng);

  /// Scores [count, h, w] before normalization.
  Tensor scores(const Tensor& dp_top, const Tensor& dp_bottom) const;
  void register_parameters(ParameterSet& set, const std::string& prefix) const;
  const DpNetworkConfig& config() const { return config_; }
  std::size_t ratio() const { return ratio_; }
  Conv2dLayer& head() { return head_; }

 private:
  DpNetworkConfig config_;
  std::size_t ratio_ = 1;
  std::vector<Conv2dLayer> down_;
  std::vector<ResidualBlock> blocks_;
  Conv2dLayer head_;
};

/// Softmax over the DP network scores, laid out as a volume on the DP grid.
ConfidenceVolume build_dp_confidence_volume(const Tensor& dp_top, const Tensor& dp_bottom,
                                            const DpCostNetwork& net);

/// exp(-cost / t) normalized along the hypothesis axis.
ConfidenceVolume to_confidence(const Tensor& cost, const DisparityGrid& grid, double t = 0.5);

/// Expected hypothesis value per pixel. Rows summing below 1e-6 yield the
/// grid midpoint with confidence 0; other pixels get confidence 1.
DisparityMap soft_argmax(const ConfidenceVolume& volume);

/// Writes the values as a tensor record and `path` + ".json" holding
/// {"first", "step", "count"}.
void dump_volume(const std::filesystem::path& path, const ConfidenceVolume& volume);
ConfidenceVolume load_volume(const std::filesystem::path& path);

}  // namespace du2
