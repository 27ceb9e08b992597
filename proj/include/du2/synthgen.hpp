#pragma once

// Layered fronto-parallel scenes, ray-cast into a rectified stereo pair
// (right camera at the origin, left camera at (-b, 0, 0)) and a dual-pixel
// pair rendered in a homography-warped frame of the right camera.
//
// Layer geometry and textures are expressed in right-image pixel
// coordinates (pixel centers at integers), so a layer at depth Z appears in
// the left image shifted by +f b / Z.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "du2/fusion.hpp"
#include "du2/mvs.hpp"
#include "du2/tensor.hpp"

namespace du2 {

enum class TextureKind { noise, stripes_horizontal, stripes_vertical, checker };

TextureKind parse_texture(const std::string& name);
std::string to_string(TextureKind kind);

/// Procedural RGB texture over continuous plane coordinates.
struct Texture {
  TextureKind kind = TextureKind::noise;
  std::uint64_t seed = 0;
  double period = 6.0;  // pixels
  Eigen::Vector3d color_a{0.2, 0.2, 0.2};
  Eigen::Vector3d color_b{0.8, 0.8, 0.8};

  Eigen::Vector3d rgb(double u, double v) const;
  double gray(double u, double v) const;
};

struct Layer {
  double depth = 1.0;  // meters
  double x0 = -std::numeric_limits<double>::infinity();
  double x1 = std::numeric_limits<double>::infinity();
  double y0 = -std::numeric_limits<double>::infinity();
  double y1 = std::numeric_limits<double>::infinity();
  Texture texture;

  bool covers(double u, double v) const { return u >= x0 && u < x1 && v >= y0 && v < y1; }
};

enum class SceneFamily { occluders, stripes_band, plane };

SceneFamily parse_family(const std::string& name);
std::string to_string(SceneFamily family);

struct SceneConfig {
  std::uint64_t seed = 1;
  std::size_t width = 80;
  std::size_t height = 64;
  std::size_t dp_scale = 2;
  double focal = 100.0;     // pixels
  double baseline = 0.12;   // meters
  double z_min = 0.4;
  double z_max = 1.5;
  SceneFamily family = SceneFamily::occluders;
  std::size_t max_occluders = 2;
  /// Empty means a random mix.
  std::optional<TextureKind> texture;
  bool integer_disparity = false;
  double warp_perturbation = 2.0;  // max corner displacement in DP pixels
  double dp_max_disparity = 3.5;
  /// Explicit DP model D_DP = alpha + beta / Z; random focus otherwise.
  std::optional<double> alpha_dp;
  std::optional<double> beta_dp;
  /// Explicit layers replace the family's random layout.
  std::vector<Layer> layers;
};

struct Pinhole {
  double focal = 100.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // rotation is identity
};

/// Index of the nearest layer hit by the ray through pixel (u, v), or -1.
/// `tex` receives the hit position in right-image coordinates.
int cast_ray(const std::vector<Layer>& layers, const Pinhole& cam, double u, double v, Eigen::Vector2d* tex);

struct DpModel {
  double alpha = 0.0;
  double beta = 0.0;
  Eigen::Matrix3d homography = Eigen::Matrix3d::Identity();  // right pixel -> DP pixel

  double disparity(double depth) const { return alpha + beta / depth; }
};

enum class DpView { top, bottom, full_disc, sharp };

/// Renders one DP-frame image [1, Hd, Wd]. Each DP pixel integrates the
/// layer visible at its center over a half (or full) disc of radius
/// |D_DP|, split along y. Swapping the sign of D_DP swaps top and bottom.
Tensor render_dp(const std::vector<Layer>& layers, const Pinhole& right, const DpModel& dp, std::size_t dp_height,
                 std::size_t dp_width, DpView view);

struct SceneSample {
  Tensor left, right;          // [3, H, W]
  Tensor dp_top, dp_bottom;    // [1, Hd, Wd]
  WarpMap w_r;                 // [2, H, W], DP pixels
  Tensor d_gt, c_gt, c_occ;    // right view [H, W]
  Tensor d_gt_left;            // left view, negative disparities
  Tensor dp_gt;                // D_DP at right pixels
  double alpha = 0.0, beta = 0.0;
  double baseline = 0.0, focal = 0.0;
  std::uint64_t seed = 0;
  std::vector<Layer> layers;
};

/// Throws ConfigError if the DP disparity of any layer leaves [-4, 4].
SceneSample generate_scene(const SceneConfig& config);

/// Layout of a scene for the given config (no rendering).
std::vector<Layer> scene_layers(const SceneConfig& config);

struct MultiviewConfig {
  std::uint64_t seed = 1;
  std::size_t width = 120;
  std::size_t height = 96;
  double focal = 110.0;
  double baseline = 0.3;
  double z_near = 1.0;
  double z_far = 3.5;
  std::size_t occluders = 2;
};

struct MultiviewScene {
  CameraView reference;
  std::vector<CameraView> neighbors;
  Tensor depth_reference;               // [H, W]
  std::vector<Tensor> depth_neighbors;  // [H, W] each
};

/// Reference camera at the origin and four neighbors at (+-b, 0, 0), (0, +-b, 0).
MultiviewScene generate_multiview(const MultiviewConfig& config);

/// Writes view_<i>.png (0 is the reference), depth_<i>.pfm and cameras.json.
void write_multiview(const std::filesystem::path& dir, const MultiviewScene& scene);
MultiviewScene read_multiview(const std::filesystem::path& dir);

/// Writes left.png, right.png, dp_t.pfm, dp_b.pfm, warp.pfm, d_gt.pfm,
/// c_gt.pfm, c_occ.pfm and meta.json.
void write_sample(const std::filesystem::path& dir, const SceneSample& sample);
SceneSample read_sample(const std::filesystem::path& dir);

/// Problems found in a sample; empty when it is valid.
std::vector<std::string> validate_sample(const SceneSample& sample);

/// Seed of the i-th train or test sample derived from the base seed.
std::uint64_t sample_seed(std::uint64_t base, bool test, std::size_t index);

/// Creates <out>/train/NNNNNN and <out>/test/NNNNNN sample directories.
void make_dataset(const SceneConfig& config, std::size_t n_train, std::size_t n_test,
                  const std::filesystem::path& out);

/// Sample directories under `dir` in sorted order.
std::vector<std::filesystem::path> list_samples(const std::filesystem::path& dir);

}  // namespace du2
