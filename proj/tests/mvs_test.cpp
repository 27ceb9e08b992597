#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "du2/errors.hpp"
#include "du2/layers.hpp"
#include "du2/mvs.hpp"
#include "du2/synthgen.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace du2;
using du2::testing::occlusion_oracle;
using du2::testing::random_tensor;

namespace {

CameraView translated_camera(std::size_t h, std::size_t w, double f, const Eigen::Vector3d& center) {
  CameraView v;
  v.image = Tensor({3, h, w});
  v.intrinsics << f, 0, 0.5 * (w - 1), 0, f, 0.5 * (h - 1), 0, 0, 1;
  v.translation = -center;
  return v;
}

std::vector<CameraView> cross_rig(std::size_t h, std::size_t w, double f, double b) {
  return {translated_camera(h, w, f, {b, 0, 0}), translated_camera(h, w, f, {-b, 0, 0}),
          translated_camera(h, w, f, {0, b, 0}), translated_camera(h, w, f, {0, -b, 0})};
}

// Renders a fronto-parallel textured plane at depth z into each camera.
void render_plane(CameraView& v, double z, const Texture& tex) {
  const std::size_t h = v.image.dim(1), w = v.image.dim(2);
  const double f = v.intrinsics(0, 0), cx = v.intrinsics(0, 2), cy = v.intrinsics(1, 2);
  const Eigen::Vector3d c = v.center();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double wx = (x - cx) * z / f + c.x(), wy = (y - cy) * z / f + c.y();
      const Eigen::Vector3d rgb = tex.rgb(wx * 40.0, wy * 40.0);
      for (std::size_t k = 0; k < 3; ++k) v.image[(k * h + y) * w + x] = rgb(k);
    }
  }
}

}  // namespace

TEST(InverseDepthPlanes, EndpointsMidpointAndSpacing) {
  const auto z = inverse_depth_planes(0.2, 100.0, 256);
  EXPECT_NEAR(z.front(), 0.2, 1e-12);
  EXPECT_NEAR(z.back(), 100.0, 1e-9);
  const double step = 1.0 / z[1] - 1.0 / z[0];
  for (std::size_t k = 1; k < z.size(); ++k) {
    EXPECT_NEAR(1.0 / z[k] - 1.0 / z[k - 1], step, 1e-12);
    EXPECT_GT(z[k], z[k - 1]);
  }
  EXPECT_NEAR(inverse_depth_planes(1.0, 1e9, 3)[1], 2.0, 1e-8);
  EXPECT_THROW(inverse_depth_planes(0.0, 1.0, 4), ParameterError);
  EXPECT_THROW(inverse_depth_planes(2.0, 1.0, 4), ParameterError);
  EXPECT_THROW(inverse_depth_planes(1.0, 2.0, 1), ParameterError);
}

TEST(CrossBilateral, InfiniteRangeSigmaIsGaussianSmoothing) {
  Rng rng(1);
  const std::size_t h = 13, w = 17, n = 3;
  const auto vol = random_tensor({h, w, n}, rng, 0, 50);
  const auto guide = random_tensor({h, w}, rng, 0, 255);
  const BilateralParams p{1.7, std::numeric_limits<double>::infinity()};
  const auto out = cross_bilateral_filter(vol, guide, p);

  // Separable oracle: the border-normalized 2D Gaussian factors into a row
  // pass and a column pass, each normalized over its in-image taps.
  const long r = std::lround(3 * p.sigma_spatial);
  auto pass = [&](const std::vector<double>& src, bool horizontal) {
    std::vector<double> dst(src.size(), 0.0);
    for (long y = 0; y < static_cast<long>(h); ++y) {
      for (long x = 0; x < static_cast<long>(w); ++x) {
        for (std::size_t k = 0; k < n; ++k) {
          double acc = 0, norm = 0;
          for (long d = -r; d <= r; ++d) {
            const long yy = horizontal ? y : y + d, xx = horizontal ? x + d : x;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
            const double wt = std::exp(-0.5 * d * d / (p.sigma_spatial * p.sigma_spatial));
            acc += wt * src[(yy * w + xx) * n + k];
            norm += wt;
          }
          dst[(y * w + x) * n + k] = acc / norm;
        }
      }
    }
    return dst;
  };
  const auto oracle = pass(pass({vol.data().begin(), vol.data().end()}, true), false);
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(out[i], oracle[i], 1e-9);
}

TEST(CrossBilateral, EdgesAreRespected) {
  // Two flat guide regions: cost on one side must not leak across.
  Tensor guide({6, 12}), vol({6, 12, 1});
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t x = 0; x < 12; ++x) {
      guide[y * 12 + x] = x < 6 ? 0.0 : 255.0;
      vol[y * 12 + x] = x < 6 ? 1.0 : 9.0;
    }
  }
  const auto out = cross_bilateral_filter(vol, guide, {});
  EXPECT_NEAR(out[5], 1.0, 1e-12);
  EXPECT_NEAR(out[6], 9.0, 1e-12);
}

TEST(PlaneSweep, TexturedPlaneAtPlaneK) {
  const std::size_t h = 48, w = 64, k = 40;
  const double f = 80.0, b = 0.1;
  const double z = 2.0;
  // Choose the far end so that plane k lands exactly on z.
  const double inv_far = 1.0 + (1.0 / z - 1.0) * 63.0 / static_cast<double>(k);
  const auto planes = inverse_depth_planes(1.0, 1.0 / inv_far, 64);
  ASSERT_NEAR(planes[k], z, 1e-12);
  Texture tex;
  tex.seed = 7;
  CameraView ref = translated_camera(h, w, f, {0, 0, 0});
  auto nbs = cross_rig(h, w, f, b);
  render_plane(ref, z, tex);
  for (auto& v : nbs) render_plane(v, z, tex);
  const auto res = plane_sweep_depth(ref, nbs, planes);
  std::size_t hits = 0, total = 0;
  for (std::size_t y = 4; y + 4 < h; ++y) {
    for (std::size_t x = 4; x + 4 < w; ++x) {
      ++total;
      hits += res.index[y * w + x] == k;
    }
  }
  EXPECT_GE(static_cast<double>(hits), 0.99 * static_cast<double>(total));
  EXPECT_THROW(plane_sweep_depth(ref, {}, planes), ParameterError);
}

TEST(PlaneSweep, ConstantSceneTiesToNearestPlane) {
  const std::size_t h = 20, w = 24;
  CameraView ref = translated_camera(h, w, 50, {0, 0, 0});
  auto nbs = cross_rig(h, w, 50, 0.05);
  for (double& v : ref.image.data()) v = 0.4;
  for (auto& nb : nbs) {
    for (double& v : nb.image.data()) v = 0.4;
  }
  const auto res = plane_sweep_depth(ref, nbs, inverse_depth_planes(1.0, 10.0, 12));
  for (std::size_t p = 0; p < h * w; ++p) EXPECT_EQ(res.index[p], 0u);
}

TEST(PlaneSweep, NeighborBehindPlaneIsSkipped) {
  // A neighbor far in front of every plane never sees it: max cost.
  const std::size_t h = 8, w = 8;
  CameraView ref = translated_camera(h, w, 20, {0, 0, 0});
  std::vector<CameraView> nbs{translated_camera(h, w, 20, {0, 0, 50})};
  const auto res = plane_sweep_depth(ref, nbs, {1.0, 2.0});
  for (double c : res.cost.data()) EXPECT_DOUBLE_EQ(c, 3.0 * 255.0);
}

TEST(Consistency, PerfectAndSingleNeighbor) {
  const std::size_t h = 12, w = 16;
  const double f = 40, b = 0.05, z = 2.0;
  const auto ref = translated_camera(h, w, f, {0, 0, 0});
  const auto nbs = cross_rig(h, w, f, b);
  const Tensor depth({h, w}, z);
  std::vector<Tensor> nb_depth(4, depth);
  const auto conf = consistency_confidence(depth, ref, nb_depth, nbs);
  for (double c : conf.data()) EXPECT_DOUBLE_EQ(c, 1.0);

  std::vector<Tensor> one_good{depth, Tensor({h, w}, 0.5), Tensor({h, w}, 0.5), Tensor({h, w}, 0.5)};
  const auto lonely = consistency_confidence(depth, ref, one_good, nbs);
  for (double c : lonely.data()) EXPECT_EQ(c, 0.0);

  const auto few = consistency_confidence(depth, ref, {depth}, {nbs[0]});
  for (double c : few.data()) EXPECT_EQ(c, 0.0);
}

TEST(Consistency, MatchesSortOracleOnRandomDepths) {
  Rng rng(2);
  const std::size_t h = 10, w = 14;
  const double f = 30, b = 0.04;
  const auto ref = translated_camera(h, w, f, {0, 0, 0});
  const auto nbs = cross_rig(h, w, f, b);
  const auto depth = random_tensor({h, w}, rng, 1.0, 3.0);
  std::vector<Tensor> nb_depth;
  for (int j = 0; j < 4; ++j) nb_depth.push_back(random_tensor({h, w}, rng, 1.0, 3.0));
  const auto scores = consistency_scores(depth, ref, nb_depth, nbs);
  const auto conf = consistency_confidence(depth, ref, nb_depth, nbs);
  const double offsets[4][2] = {{b, 0}, {-b, 0}, {0, b}, {0, -b}};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double z = depth[y * w + x];
      std::vector<double> s;
      for (std::size_t j = 0; j < 4; ++j) {
        // Lateral camera shift: the point keeps its depth and moves by -f c / z.
        const double u = x - f * offsets[j][0] / z, v = y - f * offsets[j][1] / z;
        const long ui = std::lround(u), vi = std::lround(v);
        double score = 0;
        if (ui >= 0 && vi >= 0 && ui < static_cast<long>(w) && vi < static_cast<long>(h)) {
          const double zn = nb_depth[j][static_cast<std::size_t>(vi) * w + static_cast<std::size_t>(ui)];
          score = std::max(0.0, 1.0 - f * b * std::abs(1.0 / z - 1.0 / zn));
        }
        EXPECT_NEAR(scores[(j * h + y) * w + x], score, 1e-12);
        s.push_back(score);
      }
      std::sort(s.rbegin(), s.rend());
      EXPECT_NEAR(conf[y * w + x], s[0] * s[1], 1e-12);
      EXPECT_GE(conf[y * w + x], 0.0);
      EXPECT_LE(conf[y * w + x], 1.0);
    }
  }
}

TEST(Consistency, NonIncreasingInReprojectionError) {
  const std::size_t h = 6, w = 8;
  const auto ref = translated_camera(h, w, 30, {0, 0, 0});
  const auto nbs = cross_rig(h, w, 30, 0.02);
  const Tensor depth({h, w}, 2.0);
  double previous = 2.0;
  for (double zn : {2.0, 2.02, 2.05, 2.1, 2.3, 3.0}) {
    const auto s = consistency_scores(depth, ref, std::vector<Tensor>(4, Tensor({h, w}, zn)), nbs);
    const double centre = s[(0 * h + 3) * w + 4];
    EXPECT_LE(centre, previous);
    previous = centre;
  }
}

TEST(Occlusion, WorkedExample) {
  const Tensor dr({1, 6}, {3, 3, 1, 1, 1, 1}), dl({1, 6}, {-1, -1, -1, -3, -3, -1});
  const Tensor ones({1, 6}, 1.0);
  const auto occ = occlusion_confidence(dr, dl, ones, ones, 1.0);
  const double expected[6] = {0, 0, 1, 1, 0, 0};
  for (std::size_t x = 0; x < 6; ++x) EXPECT_EQ(occ[x], expected[x]) << x;
}

TEST(Occlusion, ConsistentAndOutOfViewGiveEmptySets) {
  Rng rng(3);
  Tensor dr({3, 10}), dl({3, 10});
  for (std::size_t i = 0; i < 30; ++i) {
    dr[i] = static_cast<double>(rng.integer(0, 4));
    dl[i] = -dr[i];
  }
  const Tensor ones({3, 10}, 1.0);
  const auto consistent = occlusion_confidence(dr, dl, ones, ones);
  for (double v : consistent.data()) EXPECT_EQ(v, 0.0);

  const Tensor far({3, 10}, 12.0);
  const auto outside = occlusion_confidence(far, random_tensor({3, 10}, rng, -12, 0), ones, ones);
  for (double v : outside.data()) EXPECT_EQ(v, 0.0);
}

TEST(Occlusion, MatchesBruteForceOnRandomInstances) {
  Rng rng(4);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t w = static_cast<std::size_t>(rng.integer(2, 16));
    const std::size_t h = static_cast<std::size_t>(rng.integer(1, 3));
    const bool quarter = trial % 2 == 1;  // quarter-pixel values exercise rounding ties
    Tensor dr({h, w}), dl({h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
      dr[i] = quarter ? 0.25 * static_cast<double>(rng.integer(0, 24)) : static_cast<double>(rng.integer(0, 6));
      dl[i] = quarter ? -0.25 * static_cast<double>(rng.integer(0, 24)) : -static_cast<double>(rng.integer(0, 6));
    }
    const auto cr = random_tensor({h, w}, rng, 0, 1), cl = random_tensor({h, w}, rng, 0, 1);
    const auto occ = occlusion_confidence(dr, dl, cr, cl, 1.0);
    const auto oracle = occlusion_oracle(dr, dl, 1.0);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const bool member = oracle.count({static_cast<long>(y), static_cast<long>(x)}) > 0;
        double expected = 0.0;
        if (member) {
          const std::size_t xl = static_cast<std::size_t>(std::round(x + dr[y * w + x]));
          expected = cr[y * w + x] * cl[y * w + xl];
        }
        mismatches += occ[y * w + x] != expected;
      }
    }
  }
  EXPECT_EQ(mismatches, 0u);
}

TEST(MultiviewGroundTruth, LayeredSceneRecovery) {
  MultiviewConfig cfg;
  cfg.seed = 3;
  const auto scene = generate_multiview(cfg);
  std::vector<CameraView> views{scene.reference};
  views.insert(views.end(), scene.neighbors.begin(), scene.neighbors.end());
  const auto planes = inverse_depth_planes(cfg.z_near, cfg.z_far, 64);
  const double spacing = 1.0 / planes[0] - 1.0 / planes[1];
  const auto gt = multiview_ground_truth(views, planes);
  std::size_t confident = 0, good = 0;
  for (std::size_t p = 0; p < gt.confidence.size(); ++p) {
    if (gt.confidence[p] <= 0.5) continue;
    ++confident;
    good += std::abs(1.0 / gt.depth[0][p] - 1.0 / scene.depth_reference[p]) <= spacing + 1e-12;
  }
  EXPECT_GT(confident, gt.confidence.size() / 2);
  EXPECT_GE(static_cast<double>(good), 0.95 * static_cast<double>(confident));
}
