#pragma once

// Plane-sweep ground truth: inverse-depth plane sweep with cross-bilateral
// cost filtering, multi-view consistency confidence and the stereo
// occlusion set.

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "du2/tensor.hpp"

namespace du2 {

struct CameraView {
  Tensor image;  // [3, H, W], values in [0, 1]
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world to camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  /// Throws ParameterError if the intrinsics or rotation are malformed.
  void validate() const;
};

/// 1/Z_k = 1/z_min + k/(n-1) * (1/z_max - 1/z_min).
std::vector<double> inverse_depth_planes(double z_min, double z_max, std::size_t n);

struct BilateralParams {
  double sigma_spatial = 3.0;
  /// In 0-255 gray levels; infinity disables the range term.
  double sigma_range = 12.5;
};

/// Gray guide in 0-255: 255 * (0.299 R + 0.587 G + 0.114 B).
Tensor gray_guide(const Tensor& rgb);

/// Filters each [H, W] slice of `volume` [H, W, N] with weights
/// exp(-|p-q|^2 / 2 s^2) exp(-(g_p-g_q)^2 / 2 r^2) over a square window of
/// radius round(3 s), normalized over the taps inside the image.
Tensor cross_bilateral_filter(const Tensor& volume, const Tensor& guide, const BilateralParams& params);

struct PlaneSweepResult {
  Tensor depth;                  // [H, W] meters
  Tensor cost;                   // [H, W, N] raw
  Tensor filtered;               // [H, W, N]
  std::vector<std::size_t> index;  // per-pixel argmin plane
};

/// Per plane and neighbor, warps the neighbor onto the reference through
/// the plane-induced homography and takes the RGB SAD on a 0-255 scale.
/// The per-pixel cost is the mean over neighbors that see the point times
/// the neighbor count (max cost when none does). Ties go to the smaller
/// plane index, i.e. the nearer plane.
PlaneSweepResult plane_sweep_depth(const CameraView& reference, const std::vector<CameraView>& neighbors,
                                   const std::vector<double>& planes, const BilateralParams& params = {});

/// Per-neighbor score max(0, 1 - f B |1/z_proj - 1/z_nb| / cutoff) where
/// z_proj is the depth of the reference point in the neighbor frame, z_nb the
/// neighbor's depth at the projected pixel (nearest), f the neighbor focal
/// length and B the camera baseline. Points projecting outside score 0.
/// Returns [K, H, W] scores.
Tensor consistency_scores(const Tensor& depth_ref, const CameraView& reference,
                          const std::vector<Tensor>& depth_neighbors, const std::vector<CameraView>& neighbors,
                          double cutoff_px = 1.0);

/// Product of the two largest per-neighbor scores; 0 with < 2 neighbors.
Tensor consistency_confidence(const Tensor& depth_ref, const CameraView& reference,
                              const std::vector<Tensor>& depth_neighbors,
                              const std::vector<CameraView>& neighbors, double cutoff_px = 1.0);

struct MultiviewGroundTruth {
  std::vector<Tensor> depth;  // one [H, W] map per view, reference first
  Tensor confidence;          // reference view [H, W]
};

/// Sweeps every view against all others, then scores the reference depth
/// by consistency with the neighbors' estimates. views[0] is the reference.
MultiviewGroundTruth multiview_ground_truth(const std::vector<CameraView>& views, const std::vector<double>& planes,
                                            const BilateralParams& params = {}, double cutoff_px = 1.0);

/// Occlusion confidence of the right view. With x' = round(x + D_r(x, y)),
/// a pixel is in the occlusion set when x' is inside the image, the pair
/// fails |D_r(x) + D_l(x')| <= delta, the left pixel x' passes the same
/// check against its own match x'' = round(x' + D_l(x')), and
/// |D_l(x')| > |D_r(x)|. Then c_occ = c_r(x) c_l(x'), else 0.
Tensor occlusion_confidence(const Tensor& d_r, const Tensor& d_l, const Tensor& c_r, const Tensor& c_l,
                            double delta = 1.0);

}  // namespace du2
