#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "du2/errors.hpp"
#include "du2/fusion.hpp"
#include "du2/gradcheck.hpp"
#include "du2/ops.hpp"
#include "test_util.hpp"

using namespace du2;
using du2::testing::random_tensor;

namespace {

// Ridge regression written as an augmented least-squares problem, solved by QR.
Eigen::Vector2d ridge_oracle(const std::vector<double>& x, const std::vector<double>& y, double gamma) {
  const Eigen::Index n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 2, 2);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n + 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    a(i, 0) = 1.0;
    a(i, 1) = x[i];
    b(i) = y[i];
  }
  const double r = std::sqrt(gamma);
  a(n, 0) = r;  // gamma * alpha^2
  a(n + 1, 1) = r;  // gamma * (beta - 1)^2
  b(n + 1) = r;
  return a.colPivHouseholderQr().solve(b);
}

ConfidenceVolume random_volume(std::size_t h, std::size_t w, const DisparityGrid& grid, Rng& rng, double spread = 3.0) {
  return to_confidence(random_tensor({h, w, grid.count}, rng, 0, spread), grid);
}

double fit_error(const Tensor& x, const Tensor& y, double a, double b) {
  double e = 0;
  for (std::size_t i = 0; i < x.size(); ++i) e += std::pow(a + b * x[i] - y[i], 2);
  return e;
}

}  // namespace

TEST(FitAffine, KnownValues) {
  Rng rng(1);
  const auto d = random_tensor({3, 4}, rng, -3, 3);
  const auto same = fit_affine(d, d, 0.1);
  EXPECT_NEAR(same.alpha(), 0.0, 1e-14);
  EXPECT_NEAR(same.beta(), 1.0, 1e-14);

  const Tensor x({3}, {0.0, 1.0, 2.0}), y({3}, {1.0, 3.0, 5.0});
  const auto ab = fit_affine(x, y, 0.1);
  EXPECT_NEAR(ab.alpha(), 0.96916, 1e-4);
  EXPECT_NEAR(ab.beta(), 1.99853, 1e-4);
  const auto oracle = ridge_oracle({0, 1, 2}, {1, 3, 5}, 0.1);
  EXPECT_NEAR(ab.alpha(), oracle(0), 1e-12);
  EXPECT_NEAR(ab.beta(), oracle(1), 1e-12);

  Tensor target({3, 4});
  for (std::size_t i = 0; i < d.size(); ++i) target[i] = 2.0 + 3.0 * d[i];
  const auto exact = fit_affine(d, target, 0.0);
  EXPECT_NEAR(exact.alpha(), 2.0, 1e-12);
  EXPECT_NEAR(exact.beta(), 3.0, 1e-12);
}

TEST(FitAffine, ConstantInputAndErrors) {
  const auto flat = fit_affine(Tensor({4, 5}, 1.5), Tensor({4, 5}, 7.0), 0.1);
  EXPECT_TRUE(std::isfinite(flat.alpha()));
  EXPECT_TRUE(std::isfinite(flat.beta()));
  EXPECT_THROW(fit_affine(Tensor({4, 5}, 1.5), Tensor({4, 5}, 7.0), 0.0), NumericError);
  EXPECT_THROW(fit_affine(Tensor({4, 5}), Tensor({5, 4}), 0.1), ShapeError);
  EXPECT_THROW(fit_affine(Tensor({4, 5}), Tensor({4, 5}), -1.0), ParameterError);
}

TEST(FitAffine, NeverWorseThanIdentityAndMatchesOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_tensor({2, 5}, rng, -4, 4);
    const double a = rng.uniform(-5, 5), b = rng.uniform(-3, 3);
    Tensor y({2, 5});
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = a + b * x[i] + rng.uniform(-1, 1);
    const auto ab = fit_affine(x, y, 0.1);
    EXPECT_LE(fit_error(x, y, ab.alpha(), ab.beta()), fit_error(x, y, 0.0, 1.0) + 1e-9);
    const auto o = ridge_oracle({x.data().begin(), x.data().end()}, {y.data().begin(), y.data().end()}, 0.1);
    EXPECT_NEAR(ab.alpha(), o(0), 1e-9);
    EXPECT_NEAR(ab.beta(), o(1), 1e-9);
  }
}

TEST(FitAffine, Gradient) {
  Rng rng(3);
  auto x = random_tensor({3, 4}, rng, -2, 2, true);
  auto y = random_tensor({3, 4}, rng, 0, 5, true);
  const Tensor probe({2}, {0.7, -1.3});
  const auto report = check_gradients("fit_affine", [&] { return weighted_sum(fit_affine(x, y).ab, probe); }, {x, y});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(WarpVolume, IdentityIsExact) {
  Rng rng(4);
  const auto grid = DisparityGrid::dp();
  const auto c = random_volume(3, 4, grid, rng);
  const auto out = warp_dp_volume(c, {identity_grid(3, 4)}, AffineParams::identity(), grid);
  for (std::size_t i = 0; i < c.values.size(); ++i) EXPECT_NEAR(out.volume.values[i], c.values[i], 1e-15);
  for (double v : out.validity.data()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(WarpVolume, OffsetShiftsOneSlot) {
  Rng rng(5);
  const auto grid = DisparityGrid::dp();
  const auto c = random_volume(2, 3, grid, rng);
  const AffineParams shift{Tensor({2}, {grid.step, 1.0})};
  const auto raw = warp_volume_raw(c, {identity_grid(2, 3)}, shift, grid);
  for (std::size_t p = 0; p < 6; ++p) {
    EXPECT_EQ(raw[p * 17], 0.0);
    for (std::size_t k = 1; k < 17; ++k) EXPECT_NEAR(raw[p * 17 + k], c.values[p * 17 + k - 1], 1e-15);
  }
}

TEST(WarpVolume, OutsideSourceGivesZeroValidity) {
  Rng rng(6);
  const auto c = random_volume(3, 3, DisparityGrid::dp(), rng);
  Tensor coords({2, 2, 2}, -5.0);
  const auto out = warp_dp_volume(c, {coords}, AffineParams::identity(), DisparityGrid::dc());
  for (double v : out.validity.data()) EXPECT_EQ(v, 0.0);
  for (double v : out.volume.values.data()) EXPECT_NEAR(v, 1.0 / 17.0, 1e-15);

  // A one-hot row mapped outside the target range carries no mass either.
  Tensor onehot({1, 1, 17});
  onehot[0] = 1.0;
  const AffineParams far{Tensor({2}, {-10.0, 1.0})};
  const auto gone = warp_dp_volume({onehot, DisparityGrid::dp()}, {identity_grid(1, 1)}, far, DisparityGrid::dc());
  EXPECT_EQ(gone.validity.item(), 0.0);
}

TEST(WarpVolume, MassIsConservedWhenHypothesesAreNotOversampled) {
  // Each source slot contributes to at most one target slot per unit of q, so
  // the row mass cannot grow while |beta| * step_dp <= step_dc.
  Rng rng(7);
  const auto src = DisparityGrid::dp(), dst = DisparityGrid::dc();
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_volume(4, 5, src, rng, 6.0);
    auto coords = random_tensor({2, 3, 3}, rng, -1.5, 5.5);
    const double beta = rng.uniform(0.2, 2.0) * (rng.uniform(0, 1) < 0.5 ? -1 : 1);
    const AffineParams ab{Tensor({2}, {rng.uniform(0, 16), beta})};
    const auto out = warp_dp_volume(c, {coords}, ab, dst);
    for (double v : out.validity.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
  }
}

TEST(WarpVolume, Gradient) {
  Rng rng(8);
  const DisparityGrid src{-2, 0.5, 9}, dst{0, 1, 7};
  auto vals = to_confidence(random_tensor({3, 3, 9}, rng, 0, 2), src).values.detach();
  vals.set_requires_grad(true);
  auto ab = Tensor({2}, {2.3, 0.83});
  ab.set_requires_grad(true);
  const auto coords = random_tensor({2, 2, 3}, rng, -0.7, 2.6);
  const auto probe = random_tensor({2, 3, 7}, rng);
  const auto report = check_gradients(
      "warp_dp_volume",
      [&] { return weighted_sum(warp_dp_volume({vals, src}, {coords}, {ab}, dst).volume.values, probe); },
      {vals, ab});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(DownscaleWarp, BlockCentersInScaledSourcePixels) {
  // Full-resolution warp x' = 2x + 1, y' = 2y.
  Tensor full({2, 16, 16});
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 16; ++x) {
      full[y * 16 + x] = 2.0 * x + 1.0;
      full[256 + y * 16 + x] = 2.0 * y;
    }
  }
  const auto low = downscale_warp({full}, 8, 16.0);
  ASSERT_EQ(low.coords.shape(), (Shape{2, 2, 2}));
  // Block 1 center is x = 11.5 -> 24 source pixels -> (24.5)/16 - 0.5.
  EXPECT_NEAR(low.coords[1], (2.0 * 11.5 + 1.0 + 0.5) / 16.0 - 0.5, 1e-12);
  EXPECT_NEAR(low.coords[4 + 2], (2.0 * 11.5 + 0.5) / 16.0 - 0.5, 1e-12);
}

TEST(FuseVolumes, NormalizedUniformAndGridChecks) {
  Rng rng(9);
  const auto grid = DisparityGrid::dc();
  const auto dc = random_volume(3, 4, grid, rng);
  const auto dp = random_volume(3, 4, grid, rng);
  const auto validity = random_tensor({3, 4}, rng, 0, 1);
  FusionNetwork net(FusionConfig{}, rng);
  const auto fused = fuse_volumes(dc, dp, validity, net);
  ASSERT_EQ(fused.values.shape(), (Shape{3, 4, 17}));
  for (std::size_t p = 0; p < 12; ++p) {
    double s = 0;
    for (std::size_t k = 0; k < 17; ++k) s += fused.values[p * 17 + k];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  fill(net.layers().back().weight, 0.0);
  const auto uni = fuse_volumes(dc, dp, validity, net);
  for (double v : uni.values.data()) EXPECT_NEAR(v, 1.0 / 17.0, 1e-15);

  EXPECT_THROW(fuse_volumes(dc, {dp.values, DisparityGrid::dp()}, validity, net), ShapeError);
  EXPECT_THROW(fuse_volumes(dc, random_volume(3, 5, grid, rng), validity, net), ShapeError);

  FusionConfig two;
  two.validity_channel = false;
  FusionNetwork small(two, rng);
  EXPECT_EQ(small.input_channels(), 2u);
  EXPECT_NO_THROW(fuse_volumes(dc, dp, Tensor(), small));
}

TEST(FuseVolumes, PassThroughReproducesDcVolume) {
  Rng rng(10);
  const auto grid = DisparityGrid::dc();
  const auto dc = random_volume(4, 5, grid, rng, 8.0);
  const ConfidenceVolume dp{Tensor({4, 5, 17}, 1.0 / 17.0), grid};
  FusionNetwork net(FusionConfig{}, rng);
  set_pass_through(net);
  const auto fused = fuse_volumes(dc, dp, Tensor({4, 5}), net);
  const double eps = net.config().log_eps;
  for (std::size_t p = 0; p < 20; ++p) {
    double z = 0;
    for (std::size_t k = 0; k < 17; ++k) z += dc.values[p * 17 + k] + eps;
    for (std::size_t k = 0; k < 17; ++k) {
      EXPECT_NEAR(fused.values[p * 17 + k], (dc.values[p * 17 + k] + eps) / z, 1e-12);
    }
  }
  const auto a = unrefined_disparity(fused), b = soft_argmax(dc);
  // The log epsilon moves at most 17 * eps of mass across a span of 16.
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(a.disparity[i], b.disparity[i], 17 * eps * 16);
}

TEST(UnrefinedDisparity, OneHotAndUniform) {
  Tensor onehot({2, 3, 17});
  for (std::size_t p = 0; p < 6; ++p) onehot[p * 17 + 7] = 1.0;
  const auto seven = unrefined_disparity({onehot, DisparityGrid::dc()});
  for (double v : seven.disparity.data()) EXPECT_DOUBLE_EQ(v, 7.0);
  const auto uni = unrefined_disparity({Tensor({2, 3, 17}, 1.0 / 17.0), DisparityGrid::dc()});
  for (double v : uni.disparity.data()) EXPECT_NEAR(v, 8.0, 1e-12);
}

TEST(FusionComposite, GradientThroughFitWarpFuseArgmax) {
  Rng rng(11);
  const std::size_t h = 4, w = 5;
  auto d_dp = random_tensor({h, w}, rng, -3, 3, true);
  Tensor d_dc_values({h, w});
  for (std::size_t i = 0; i < d_dp.size(); ++i) d_dc_values[i] = 4.0 + 0.6 * d_dp[i] + rng.uniform(-0.5, 0.5);
  auto d_dc = d_dc_values;
  d_dc.set_requires_grad(true);
  auto dp_cost = random_tensor({h, w, 17}, rng, 0, 2, true);
  auto dc_cost = random_tensor({h, w, 17}, rng, 0, 2, true);
  Tensor coords = identity_grid(h, w);
  for (double& v : coords.data()) v += rng.uniform(-0.4, 0.4);

  FusionNetwork net(FusionConfig{}, rng);
  ParameterSet params;
  net.register_parameters(params, "fusion");
  const auto probe = random_tensor({h, w}, rng);

  std::vector<Tensor> inputs{d_dp, d_dc, dp_cost, dc_cost};
  for (const auto& [_, t] : params.entries()) inputs.push_back(t);
  auto fn = [&] {
    const auto ab = fit_affine(d_dp, d_dc);
    const auto warped = warp_dp_volume(to_confidence(dp_cost, DisparityGrid::dp()), {coords}, ab, DisparityGrid::dc());
    const auto fused = fuse_volumes(to_confidence(dc_cost, DisparityGrid::dc()), warped.volume, warped.validity, net);
    return weighted_sum(unrefined_disparity(fused).disparity, probe);
  };
  const auto report = check_gradients("fusion composite", fn, inputs);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}
