#pragma once

// Confidence-weighted Huber losses, weighted evaluation metrics and the
// evaluation-time affine fit.

#include <optional>
#include <vector>

#include "du2/fusion.hpp"
#include "du2/tensor.hpp"

namespace du2 {

/// 0.5 x^2 for |x| <= delta, else delta (|x| - delta/2).
double huber(double x, double delta = 1.0);

/// Elementwise huber as a differentiable op.
Tensor huber_tensor(const Tensor& x, double delta = 1.0);

/// sum H(d - d_gt) c / sum c; zero (with a warning on stderr) when sum c = 0.
Tensor weighted_loss(const Tensor& d, const Tensor& d_gt, const Tensor& c_gt, double delta = 1.0);

struct LossWeights {
  double lambda_dp = 1.0;
  double lambda_dc = 10.0;
  double lambda_unref = 1.0;
  double lambda_ref = 1.0;
};

/// Network outputs in their native units: the three low-resolution maps
/// are in 1/factor pixels, d_ref in full-resolution pixels. Absent terms
/// are allowed only if their weight is zero.
struct LossOutputs {
  std::optional<Tensor> d_dp;  // raw DP-branch disparity on the low-res grid
  std::optional<Tensor> d_dc;
  std::optional<Tensor> d_unref;
  std::optional<Tensor> d_ref;
};

struct GroundTruthMaps {
  Tensor d_gt;  // [H, W] full resolution
  Tensor c_gt;  // [H, W]
};

/// Area average of disparity divided by `factor`; confidence by block minimum.
GroundTruthMaps downsample_ground_truth(const GroundTruthMaps& gt, std::size_t factor);

struct LossTerms {
  Tensor total;
  double dp = 0, dc = 0, unref = 0, ref = 0;
};

LossTerms total_loss(const LossOutputs& outputs, const AffineParams& affine, const GroundTruthMaps& gt,
                     const LossWeights& weights, std::size_t factor = 8, double delta = 1.0);

struct Metrics {
  bool defined = false;
  double mae = 0;
  double rmse = 0;
  std::vector<double> bad;  // percent, one per threshold
};

inline const std::vector<double> kDefaultThresholds{1.25, 2.0, 3.0};

Metrics eval_metrics(const Tensor& d, const Tensor& d_gt, const Tensor& c,
                     const std::vector<double>& thresholds = kDefaultThresholds);

/// alpha + beta * d_raw with (alpha, beta) minimizing ||c (alpha + beta d_raw - d_gt)||^2.
/// Returns d_raw unchanged (and warns) when the weighted fit is degenerate.
Tensor eval_affine_fit(const Tensor& d_raw, const Tensor& d_gt, const Tensor& c_gt);

}  // namespace du2
