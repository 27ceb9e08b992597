#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <set>

#include "du2/errors.hpp"
#include "du2/gradcheck.hpp"
#include "du2/ops.hpp"
#include "du2/refine.hpp"
#include "test_util.hpp"

using namespace du2;
using du2::testing::random_tensor;

namespace {

constexpr RefineMode kModes[] = {RefineMode::rgb_only, RefineMode::dp_only, RefineMode::dp_image_warp,
                                 RefineMode::rgb_plus_dp};

// RGB extent h*8 x w*8, DP extent twice that, warp x2 + small offsets.
RefineInputs make_inputs(std::size_t h, std::size_t w, Rng& rng) {
  const std::size_t hh = h * 8, ww = w * 8;
  RefineInputs in{random_tensor({h, w}, rng, 0, 4), random_tensor({3, hh, ww}, rng, 0, 1),
                  random_tensor({1, 2 * hh, 2 * ww}, rng, 0, 1), random_tensor({1, 2 * hh, 2 * ww}, rng, 0, 1),
                  {Tensor({2, hh, ww})}};
  for (std::size_t y = 0; y < hh; ++y) {
    for (std::size_t x = 0; x < ww; ++x) {
      in.w_r.coords[y * ww + x] = 2.0 * x + 0.5 + rng.uniform(-0.3, 0.3);
      in.w_r.coords[hh * ww + y * ww + x] = 2.0 * y + 0.5 + rng.uniform(-0.3, 0.3);
    }
  }
  return in;
}

std::size_t total_parameters(const Refiner& r) {
  ParameterSet s;
  r.register_parameters(s, "refine");
  return s.scalar_count();
}

// True if `target` is reachable from `from` without passing a node whose op is `blocker`.
bool reachable_avoiding(const Tensor& from, const void* target, const std::string& blocker) {
  std::set<const void*> seen;
  std::function<bool(const Tensor&)> visit = [&](const Tensor& t) {
    if (t.id() == target) return true;
    if (!seen.insert(t.id()).second || t.op() == blocker) return false;
    for (const auto& in : t.inputs()) {
      if (visit(in)) return true;
    }
    return false;
  };
  return visit(from);
}

std::vector<Tensor> nodes_with_op(const Tensor& root, const std::string& op) {
  std::set<const void*> seen;
  std::vector<Tensor> found;
  std::function<void(const Tensor&)> visit = [&](const Tensor& t) {
    if (!seen.insert(t.id()).second) return;
    if (t.op() == op) found.push_back(t);
    for (const auto& in : t.inputs()) visit(in);
  };
  visit(root);
  return found;
}

Tensor mirror_x(const Tensor& t) {
  Tensor out(t.shape());
  const std::size_t w = t.dim(t.rank() - 1), rows = t.size() / w;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = t[r * w + (w - 1 - x)];
  }
  return out;
}

}  // namespace

TEST(Upsample, ConstantScalesByFactor) {
  const auto up = upsample_disparity(Tensor({2, 3}, 1.75), 8);
  ASSERT_EQ(up.shape(), (Shape{16, 24}));
  for (double v : up.data()) EXPECT_DOUBLE_EQ(v, 14.0);
}

TEST(Upsample, LinearRampInTheInterior) {
  Tensor ramp({1, 4});
  for (std::size_t x = 0; x < 4; ++x) ramp[x] = static_cast<double>(x);
  const auto up = upsample_disparity(ramp, 8);
  // Output pixel X sits at (X + 0.5)/8 - 0.5 in the source, clamped to [0, 3].
  for (std::size_t x = 0; x < 32; ++x) {
    const double s = std::clamp((x + 0.5) / 8.0 - 0.5, 0.0, 3.0);
    EXPECT_NEAR(up[x], 8.0 * s, 1e-12);
  }
}

TEST(Refine, ZeroFinalConvGivesUpsampling) {
  Rng rng(1);
  for (RefineMode mode : kModes) {
    Refiner r(refine_ablation_mode(mode), rng);
    fill(r.output_layer().weight, 0.0);
    fill(r.output_layer().bias, 0.0);
    auto in = make_inputs(2, 3, rng);
    const auto out = r(in);
    const auto up = upsample_disparity(in.d_unref, 8);
    ASSERT_EQ(out.shape(), (Shape{16, 24})) << to_string(mode);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], up[i]);
  }
}

TEST(Refine, ConstantDisparityUpsamplesToEightTimes) {
  Rng rng(2);
  Refiner r(RefineConfig{}, rng);
  fill(r.output_layer().weight, 0.0);
  auto in = make_inputs(2, 2, rng);
  in.d_unref = Tensor({2, 2}, 0.625);
  const auto out = r(in);
  for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 5.0);
}

TEST(Refine, ParameterCountsMatchAcrossModes) {
  Rng rng(3);
  const Refiner rgb(refine_ablation_mode(RefineMode::rgb_only), rng);
  const Refiner dp(refine_ablation_mode(RefineMode::dp_only), rng);
  const Refiner img(refine_ablation_mode(RefineMode::dp_image_warp), rng);
  const Refiner both(refine_ablation_mode(RefineMode::rgb_plus_dp), rng);
  EXPECT_EQ(rgb.dp_parameter_count(), 0u);
  EXPECT_GT(both.dp_parameter_count(), 0u);
  EXPECT_EQ(total_parameters(img), total_parameters(both));
  EXPECT_EQ(total_parameters(rgb), total_parameters(both));
  EXPECT_EQ(total_parameters(dp), total_parameters(both));
  EXPECT_EQ(dp.dp_parameter_count(), 2 * both.dp_parameter_count());
}

TEST(Refine, AllModesShareTheOutputShape) {
  Rng rng(4);
  const auto in = make_inputs(2, 3, rng);
  for (RefineMode mode : kModes) {
    Refiner r(refine_ablation_mode(mode), rng);
    EXPECT_EQ(r(in).shape(), (Shape{16, 24})) << to_string(mode);
  }
}

TEST(Refine, ShapeErrorsAndModeNames) {
  Rng rng(5);
  Refiner r(RefineConfig{}, rng);
  auto in = make_inputs(2, 2, rng);
  auto bad = in;
  bad.rgb_right = Tensor({3, 16, 15});
  EXPECT_THROW(r(bad), ShapeError);
  bad = in;
  bad.dp_top = Tensor({1, 16, 16});
  bad.dp_bottom = Tensor({1, 16, 16});
  EXPECT_THROW(r(bad), ShapeError);
  bad = in;
  bad.w_r.coords = Tensor({2, 8, 8});
  EXPECT_THROW(r(bad), ShapeError);
  for (RefineMode m : kModes) EXPECT_EQ(parse_refine_mode(to_string(m)), m);
  EXPECT_THROW(parse_refine_mode("rgb+dp"), ConfigError);
}

TEST(Refine, DpFeaturesAreComputedBeforeWarping) {
  Rng rng(6);
  auto in = make_inputs(2, 2, rng);
  in.dp_top.set_requires_grad(true);
  const void* top = in.dp_top.id();

  Refiner both(RefineConfig{}, rng);
  const auto out = both(in);
  const auto samples = nodes_with_op(out, "sample_bilinear2d");
  std::size_t reading_dp = 0;
  for (const auto& s : samples) {
    if (!reachable_avoiding(s, top, "")) continue;
    ++reading_dp;
    // Every route from the sampler back to the raw DP image passes a conv.
    EXPECT_FALSE(reachable_avoiding(s, top, "conv2d"));
    for (const auto& c : nodes_with_op(s.inputs()[0], "conv2d")) EXPECT_LT(c.sequence(), s.sequence());
  }
  EXPECT_EQ(reading_dp, 1u);

  Refiner image_warp(refine_ablation_mode(RefineMode::dp_image_warp), rng);
  const auto warped_first = image_warp(in);
  bool raw_sampled = false;
  for (const auto& s : nodes_with_op(warped_first, "sample_bilinear2d")) {
    raw_sampled = raw_sampled || reachable_avoiding(s, top, "conv2d");
  }
  EXPECT_TRUE(raw_sampled);
}

TEST(Refine, MirrorEquivarianceOfZeroResidualPath) {
  Rng rng(7);
  Refiner r(RefineConfig{}, rng);
  fill(r.output_layer().weight, 0.0);
  fill(r.output_layer().bias, 0.0);
  auto in = make_inputs(2, 3, rng);
  auto flipped = in;
  flipped.d_unref = mirror_x(in.d_unref);
  flipped.rgb_right = mirror_x(in.rgb_right);
  flipped.dp_top = mirror_x(in.dp_top);
  flipped.dp_bottom = mirror_x(in.dp_bottom);
  const auto a = mirror_x(r(in)), b = r(flipped);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Refine, GradientWithRespectToDpTop) {
  Rng rng(8);
  RefineConfig cfg;
  cfg.guide_channels = 4;
  cfg.trunk_channels = 4;
  cfg.residual_blocks = 2;
  Refiner r(cfg, rng);
  auto in = make_inputs(2, 2, rng);  // 16 x 16 RGB, 32 x 32 DP
  in.dp_top.set_requires_grad(true);
  const auto probe = random_tensor({16, 16}, rng);
  const auto report =
      check_gradients("refine d/d dp_top", [&] { return weighted_sum(r(in), probe); }, {in.dp_top});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Refine, GradientFullCapacityAllInputs) {
  Rng rng(9);
  Refiner r(RefineConfig{}, rng);
  auto in = make_inputs(2, 2, rng);
  in.d_unref.set_requires_grad(true);
  in.rgb_right.set_requires_grad(true);
  in.dp_bottom.set_requires_grad(true);
  ParameterSet params;
  r.register_parameters(params, "refine");
  std::vector<Tensor> inputs{in.d_unref, in.rgb_right, in.dp_bottom};
  for (const auto& [_, t] : params.entries()) inputs.push_back(t);
  const auto probe = random_tensor({16, 16}, rng);
  // A smaller step keeps the probe from crossing leaky ReLU kinks in a
  // network of this width.
  GradCheckOptions opts;
  opts.step = 1e-6;
  opts.max_entries_per_input = 24;
  opts.seed = 3;
  const auto report = check_gradients("refine", [&] { return weighted_sum(r(in), probe); }, inputs, opts);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}
