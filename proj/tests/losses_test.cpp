#include <gtest/gtest.h>

#include <cmath>

#include "du2/errors.hpp"
#include "du2/gradcheck.hpp"
#include "du2/losses.hpp"
#include "du2/ops.hpp"
#include "test_util.hpp"

using namespace du2;
using du2::testing::random_tensor;

namespace {

GroundTruthMaps random_gt(std::size_t h, std::size_t w, Rng& rng) {
  GroundTruthMaps gt{random_tensor({h, w}, rng, 8, 30), random_tensor({h, w}, rng, 0.2, 1)};
  return gt;
}

LossOutputs exact_outputs(const GroundTruthMaps& gt) {
  const auto low = downsample_ground_truth(gt, 8);
  return {low.d_gt, low.d_gt, low.d_gt, gt.d_gt};
}

double weighted_mse(const Tensor& d, const Tensor& gt, const Tensor& c) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    num += c[i] * c[i] * (d[i] - gt[i]) * (d[i] - gt[i]);
    den += c[i] * c[i];
  }
  return num / den;
}

}  // namespace

TEST(Huber, KnownValues) {
  EXPECT_EQ(huber(0.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(huber(0.5, 1.0), 0.125);
  EXPECT_DOUBLE_EQ(huber(3.0, 1.0), 2.5);
  EXPECT_THROW(huber(1.0, 0.0), ParameterError);
  EXPECT_THROW(huber_tensor(Tensor({2}), -1.0), ParameterError);
}

TEST(Huber, EvenMonotoneBoundedAndSmooth) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-6, 6), delta = rng.uniform(0.1, 3);
    EXPECT_DOUBLE_EQ(huber(x, delta), huber(-x, delta));
    EXPECT_LE(huber(x, delta), 0.5 * x * x + 1e-15);
    EXPECT_LE(huber(0.9 * x, delta), huber(x, delta));
  }
  // Value and slope agree on both sides of the switching point.
  const double d = 1.3, h = 1e-7;
  EXPECT_NEAR(huber(d - h, d), huber(d + h, d), 1e-6);
  EXPECT_NEAR((huber(d, d) - huber(d - h, d)) / h, (huber(d + h, d) - huber(d, d)) / h, 1e-5);
}

TEST(Huber, TensorGradient) {
  Rng rng(2);
  auto x = random_tensor({20}, rng, -3, 3, true);
  const auto probe = random_tensor({20}, rng);
  const auto report = check_gradients("huber", [&] { return weighted_sum(huber_tensor(x, 1.0), probe); }, {x});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(WeightedLoss, KnownValuesAndScaleInvariance) {
  const Tensor d({2}, {1.0, 5.0}), gt({2}, {1.0, 3.0}), c({2}, {1.0, 1.0});
  EXPECT_DOUBLE_EQ(weighted_loss(d, gt, c).item(), 0.75);
  EXPECT_EQ(weighted_loss(gt, gt, c).item(), 0.0);
  EXPECT_EQ(weighted_loss(d, gt, Tensor({2})).item(), 0.0);

  Rng rng(3);
  const auto a = random_tensor({5, 6}, rng, -3, 3), b = random_tensor({5, 6}, rng, -3, 3);
  const auto w = random_tensor({5, 6}, rng, 0, 1);
  EXPECT_NEAR(weighted_loss(a, b, w).item(), weighted_loss(a, b, scale(w, 7.5)).item(), 1e-12);
  EXPECT_THROW(weighted_loss(a, Tensor({6, 5}), w), ShapeError);
}

TEST(DownsampleGroundTruth, AreaMeanOverFactorAndBlockMin) {
  Tensor d({8, 16}), c({8, 16}, 1.0);
  for (std::size_t i = 0; i < 128; ++i) d[i] = static_cast<double>(i % 16 < 8 ? 16 : 24);
  c[3 * 16 + 10] = 0.25;
  const auto low = downsample_ground_truth({d, c}, 8);
  ASSERT_EQ(low.d_gt.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(low.d_gt[0], 2.0);
  EXPECT_DOUBLE_EQ(low.d_gt[1], 3.0);
  EXPECT_DOUBLE_EQ(low.c_gt[0], 1.0);
  EXPECT_DOUBLE_EQ(low.c_gt[1], 0.25);
  EXPECT_THROW(downsample_ground_truth({Tensor({9, 16}), Tensor({9, 16})}, 8), ShapeError);
}

TEST(TotalLoss, ExactOutputsAndSingleTermExpansion) {
  Rng rng(4);
  const auto gt = random_gt(16, 24, rng);
  auto out = exact_outputs(gt);
  EXPECT_NEAR(total_loss(out, AffineParams::identity(), gt, {}).total.item(), 0.0, 1e-24);

  const double e = 0.6;
  out.d_dc = add_scalar(*out.d_dc, e);
  const auto terms = total_loss(out, AffineParams::identity(), gt, {});
  EXPECT_NEAR(terms.total.item(), 10 * 0.5 * e * e, 1e-12);
  EXPECT_NEAR(terms.dc, 0.5 * e * e, 1e-12);

  // The DP term is scored after the affine map.
  auto shifted = exact_outputs(gt);
  const AffineParams ab{Tensor({2}, {1.0, 2.0})};
  shifted.d_dp = scale(add_scalar(*shifted.d_dp, -1.0), 0.5);
  EXPECT_NEAR(total_loss(shifted, ab, gt, {}).dp, 0.0, 1e-24);
}

TEST(TotalLoss, NonnegativeAndMissingOutputs) {
  Rng rng(5);
  const auto gt = random_gt(16, 16, rng);
  for (int i = 0; i < 20; ++i) {
    const LossOutputs out{random_tensor({2, 2}, rng, -5, 5), random_tensor({2, 2}, rng, -5, 5),
                          random_tensor({2, 2}, rng, -5, 5), random_tensor({16, 16}, rng, -5, 40)};
    const AffineParams ab{random_tensor({2}, rng, -2, 2)};
    EXPECT_GE(total_loss(out, ab, gt, {}).total.item(), 0.0);
  }
  LossOutputs partial = exact_outputs(gt);
  partial.d_dp.reset();
  EXPECT_THROW(total_loss(partial, AffineParams::identity(), gt, {}), ConfigError);
  LossWeights no_dp;
  no_dp.lambda_dp = 0.0;
  EXPECT_NO_THROW(total_loss(partial, AffineParams::identity(), gt, no_dp));
}

TEST(TotalLoss, GradientWithRespectToOutputsAndAffine) {
  Rng rng(6);
  const auto gt = random_gt(16, 16, rng);
  auto a = random_tensor({2, 2}, rng, 0, 4, true), b = random_tensor({2, 2}, rng, 0, 4, true);
  auto u = random_tensor({2, 2}, rng, 0, 4, true), r = random_tensor({16, 16}, rng, 5, 35, true);
  auto ab = Tensor({2}, {0.3, 1.4});
  ab.set_requires_grad(true);
  const auto report = check_gradients(
      "total_loss", [&] { return total_loss({a, b, u, r}, {ab}, gt, {}).total; }, {a, b, u, r, ab});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Metrics, KnownValues) {
  const Tensor d({2}, {1.0, 2.0}), gt({2}, {1.0, 4.0});
  const auto m = eval_metrics(d, gt, Tensor({2}, {1.0, 1.0}), {1.0});
  ASSERT_TRUE(m.defined);
  EXPECT_DOUBLE_EQ(m.mae, 1.0);
  EXPECT_DOUBLE_EQ(m.rmse, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(m.bad[0], 50.0);

  const auto masked = eval_metrics(d, gt, Tensor({2}, {1.0, 0.0}), {1.0});
  EXPECT_EQ(masked.mae, 0.0);
  EXPECT_EQ(masked.rmse, 0.0);
  EXPECT_EQ(masked.bad[0], 0.0);

  const auto empty = eval_metrics(d, gt, Tensor({2}));
  EXPECT_FALSE(empty.defined);
  EXPECT_TRUE(std::isnan(empty.mae));
  EXPECT_EQ(empty.bad.size(), 3u);
}

TEST(Metrics, UniformWeightsMatchUnweightedForms) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = random_tensor({7, 9}, rng, 0, 20), gt = random_tensor({7, 9}, rng, 0, 20);
    const auto m = eval_metrics(d, gt, Tensor({7, 9}, rng.uniform(0.1, 3)));
    double abs_sum = 0, sq_sum = 0;
    std::vector<double> bad(3, 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double e = std::abs(d[i] - gt[i]);
      abs_sum += e;
      sq_sum += e * e;
      for (std::size_t t = 0; t < 3; ++t) bad[t] += e > kDefaultThresholds[t];
    }
    const double n = static_cast<double>(d.size());
    EXPECT_NEAR(m.mae, abs_sum / n, 1e-12);
    EXPECT_NEAR(m.rmse, std::sqrt(sq_sum / n), 1e-12);
    for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(m.bad[t], 100.0 * bad[t] / n, 1e-12);
  }
}

TEST(EvalAffineFit, IdentityExactAndOptimal) {
  Rng rng(8);
  const auto gt = random_tensor({6, 6}, rng, 1, 20);
  const auto c = random_tensor({6, 6}, rng, 0.1, 1);
  const auto same = eval_affine_fit(gt, gt, c);
  for (std::size_t i = 0; i < gt.size(); ++i) EXPECT_NEAR(same[i], gt[i], 1e-10);

  Tensor raw({6, 6});
  for (std::size_t i = 0; i < gt.size(); ++i) raw[i] = (gt[i] - 2.0) / 3.0;
  const auto back = eval_affine_fit(raw, gt, Tensor({6, 6}, 1.0));
  for (std::size_t i = 0; i < gt.size(); ++i) EXPECT_NEAR(back[i], gt[i], 1e-10);

  for (int trial = 0; trial < 50; ++trial) {
    const auto r = random_tensor({6, 6}, rng, -4, 4);
    const auto fitted = eval_affine_fit(r, gt, c);
    EXPECT_LE(weighted_mse(fitted, gt, c), weighted_mse(r, gt, c) + 1e-12);
  }

  const auto flat = eval_affine_fit(Tensor({6, 6}, 2.0), gt, c);
  for (double v : flat.data()) EXPECT_EQ(v, 2.0);
}
