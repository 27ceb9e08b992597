#include "du2/refine.hpp"

#include <algorithm>

#include "du2/errors.hpp"
#include "du2/ops.hpp"

namespace du2 {

RefineMode parse_refine_mode(std::string_view name) {
  if (name == "rgb_only") return RefineMode::rgb_only;
  if (name == "dp_only") return RefineMode::dp_only;
  if (name == "dp_image_warp") return RefineMode::dp_image_warp;
  if (name == "rgb_plus_dp") return RefineMode::rgb_plus_dp;
  throw ConfigError("unknown refine mode '" + std::string(name) +
                    "' (expected rgb_only, dp_only, dp_image_warp or rgb_plus_dp)");
}

std::string_view to_string(RefineMode mode) {
  switch (mode) {
    case RefineMode::rgb_only: return "rgb_only";
    case RefineMode::dp_only: return "dp_only";
    case RefineMode::dp_image_warp: return "dp_image_warp";
    case RefineMode::rgb_plus_dp: return "rgb_plus_dp";
  }
  return "?";
}

RefineConfig refine_ablation_mode(RefineMode mode) {
  RefineConfig c;
  c.mode = mode;
  return c;
}

Tensor upsample_disparity(const Tensor& d, std::size_t factor) {
  if (d.rank() != 2) throw ShapeError("upsample_disparity: expected [h,w], got " + shape_str(d.shape()));
  const std::size_t h = d.dim(0), w = d.dim(1);
  const std::size_t ho = h * factor, wo = w * factor;
  const double f = static_cast<double>(factor);
  Tensor coords({2, ho, wo});
  for (std::size_t y = 0; y < ho; ++y) {
    const double sy = std::clamp((static_cast<double>(y) + 0.5) / f - 0.5, 0.0, static_cast<double>(h - 1));
    for (std::size_t x = 0; x < wo; ++x) {
      const double sx = std::clamp((static_cast<double>(x) + 0.5) / f - 0.5, 0.0, static_cast<double>(w - 1));
      coords[y * wo + x] = sx;
      coords[ho * wo + y * wo + x] = sy;
    }
  }
  return reshape(scale(sample_bilinear2d(reshape(d, {1, h, w}), coords), f), {ho, wo});
}

GuideBranch::GuideBranch(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
    : first(ConvSpec{in, out, 3, 1, 1, {}}, rng), second(ConvSpec{out, out, 3, stride, 1, {}}, rng) {}

Tensor GuideBranch::operator()(const Tensor& x, double slope) const {
  return leaky_relu(second(leaky_relu(first(x), slope)), slope);
}

void GuideBranch::register_parameters(ParameterSet& set, const std::string& prefix) const {
  first.register_parameters(set, prefix + ".a");
  second.register_parameters(set, prefix + ".b");
}

namespace {

// DP guides read (top, bottom, top - bottom) so that DP and RGB branches
// share the same input width and parameter count.
Tensor dp_stack(const Tensor& top, const Tensor& bottom) { return concat({top, bottom, top - bottom}, 0); }

}  // namespace

Refiner::Refiner(const RefineConfig& config, Rng& rng) : config_(config) {
  const std::size_t g = config.guide_channels;
  // Branches that run at DP resolution (twice the RGB extent) use stride 2.
  switch (config.mode) {
    case RefineMode::rgb_only:
      rgb_.emplace_back(3, g, 1, rng);
      rgb_.emplace_back(3, g, 1, rng);
      break;
    case RefineMode::dp_only:
      dp_.emplace_back(3, g, 2, rng);
      dp_.emplace_back(3, g, 2, rng);
      break;
    case RefineMode::dp_image_warp:
      rgb_.emplace_back(3, g, 1, rng);
      dp_.emplace_back(3, g, 1, rng);
      break;
    case RefineMode::rgb_plus_dp:
      rgb_.emplace_back(3, g, 1, rng);
      dp_.emplace_back(3, g, 2, rng);
      break;
  }
  in_ = Conv2dLayer(ConvSpec{2 * g + 1, config.trunk_channels, 3, 1, 1, {}}, rng);
  for (std::size_t i = 0; i < config.residual_blocks; ++i) {
    blocks_.emplace_back(config.trunk_channels, config.slope, rng);
  }
  out_ = Conv2dLayer(ConvSpec{config.trunk_channels, 1, 3, 1, 1, {}}, rng);
}

Tensor Refiner::rgb_features(const GuideBranch& branch, const Tensor& rgb) const {
  return branch(rgb, config_.slope);
}

Tensor Refiner::dp_features(const GuideBranch& branch, const RefineInputs& in) const {
  const Tensor& coords = in.w_r.coords;
  if (config_.mode == RefineMode::dp_image_warp) {
    const Tensor warped = sample_bilinear2d(concat({in.dp_top, in.dp_bottom}, 0), coords);
    return branch(dp_stack(slice0(warped, 0, 1), slice0(warped, 1, 2)), config_.slope);
  }
  // Features at DP resolution, then one sampling step to RGB resolution.
  // Feature pixel j of a stride-2 conv is centered on DP pixel 2j.
  const Tensor feat = branch(dp_stack(in.dp_top, in.dp_bottom), config_.slope);
  const double stride = static_cast<double>(branch.second.spec.stride);
  return sample_bilinear2d(feat, scale(coords.detach(), 1.0 / stride));
}

Tensor Refiner::operator()(const RefineInputs& in) const {
  const std::size_t f = config_.factor;
  const std::size_t h = in.d_unref.dim(0), w = in.d_unref.dim(1);
  if (in.rgb_right.rank() != 3 || in.rgb_right.dim(1) != h * f || in.rgb_right.dim(2) != w * f) {
    throw ShapeError("refine: rgb " + shape_str(in.rgb_right.shape()) + " is not " +
                     std::to_string(f) + "x the disparity " + shape_str(in.d_unref.shape()));
  }
  if (in.w_r.coords.shape() != Shape{2, h * f, w * f}) {
    throw ShapeError("refine: warp " + shape_str(in.w_r.coords.shape()) + " does not match the rgb extent");
  }
  if (!dp_.empty() && config_.mode != RefineMode::dp_image_warp &&
      (in.dp_top.dim(1) != 2 * h * f || in.dp_top.dim(2) != 2 * w * f)) {
    throw ShapeError("refine: DP extent " + shape_str(in.dp_top.shape()) +
                     " must be twice the rgb extent");
  }
  const Tensor up = upsample_disparity(in.d_unref, f);
  std::vector<Tensor> parts;
  for (const auto& b : rgb_) parts.push_back(rgb_features(b, in.rgb_right));
  for (const auto& b : dp_) parts.push_back(dp_features(b, in));
  parts.push_back(reshape(up, {1, h * f, w * f}));
  Tensor x = leaky_relu(in_(concat(parts, 0)), config_.slope);
  for (const auto& block : blocks_) x = block(x);
  const Tensor r = reshape(out_(x), {h * f, w * f});
  return up + r;
}

void Refiner::register_parameters(ParameterSet& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < rgb_.size(); ++i) rgb_[i].register_parameters(set, prefix + ".rgb" + std::to_string(i));
  for (std::size_t i = 0; i < dp_.size(); ++i) dp_[i].register_parameters(set, prefix + ".dp" + std::to_string(i));
  in_.register_parameters(set, prefix + ".in");
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].register_parameters(set, prefix + ".res" + std::to_string(i));
  }
  out_.register_parameters(set, prefix + ".out");
}

std::size_t Refiner::dp_parameter_count() const {
  ParameterSet s;
  for (std::size_t i = 0; i < dp_.size(); ++i) dp_[i].register_parameters(s, "dp" + std::to_string(i));
  return s.scalar_count();
}

}  // namespace du2
