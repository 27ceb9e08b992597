#include "du2/gradcheck_suite.hpp"

#include <functional>

#include "du2/costvol.hpp"
#include "du2/fusion.hpp"
#include "du2/layers.hpp"
#include "du2/losses.hpp"
#include "du2/model.hpp"
#include "du2/ops.hpp"
#include "du2/refine.hpp"

namespace du2 {

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool grad) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  t.set_requires_grad(grad);
  return t;
}

// Magnitudes in [0.1, 1] with random sign: clear of the leaky-ReLU kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    const double m = rng.uniform(0.1, 1.0);
    v = rng.uniform(0.0, 1.0) < 0.5 ? -m : m;
  }
  t.set_requires_grad(true);
  return t;
}

void add_parameters(std::vector<Tensor>& inputs, const ParameterSet& set) {
  for (const auto& [_, t] : set.entries()) inputs.push_back(t);
}

// Warp from a right image [H, W] into a DP frame twice as large.
WarpMap jittered_warp(std::size_t h, std::size_t w, Rng& rng) {
  WarpMap m{Tensor({2, h, w})};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      m.coords[y * w + x] = 2.0 * x + 0.5 + rng.uniform(-0.3, 0.3);
      m.coords[h * w + y * w + x] = 2.0 * y + 0.5 + rng.uniform(-0.3, 0.3);
    }
  }
  return m;
}

struct Case {
  std::string name;
  std::function<GradCheckReport(Rng&, GradCheckOptions)> run;
};

std::vector<Case> cases() {
  std::vector<Case> c;
  c.push_back({"conv2d", [](Rng& rng, GradCheckOptions o) {
                 const ConvSpec spec{2, 3, 3, 2, 1, {}};
                 auto x = uniform({2, 8, 8}, rng, -1, 1, true);
                 auto w = uniform({3, 2, 3, 3}, rng, -0.5, 0.5, true);
                 auto b = uniform({3}, rng, -0.1, 0.1, true);
                 const auto probe = uniform({3, 4, 4}, rng, -1, 1, false);
                 return check_gradients("conv2d", [&] { return weighted_sum(conv2d(x, w, b, spec), probe); },
                                        {x, w, b}, o);
               }});
  c.push_back({"conv3d", [](Rng& rng, GradCheckOptions o) {
                 const ConvSpec spec{2, 2, 3, 1, 1, {}};
                 auto x = uniform({2, 3, 4, 4}, rng, -1, 1, true);
                 auto w = uniform({2, 2, 3, 3, 3}, rng, -0.5, 0.5, true);
                 auto b = uniform({2}, rng, -0.1, 0.1, true);
                 const auto probe = uniform({2, 3, 4, 4}, rng, -1, 1, false);
                 return check_gradients("conv3d", [&] { return weighted_sum(conv3d(x, w, b, spec), probe); },
                                        {x, w, b}, o);
               }});
  c.push_back({"leaky_relu", [](Rng& rng, GradCheckOptions o) {
                 auto x = away_from_zero({24}, rng);
                 const auto probe = uniform({24}, rng, -1, 1, false);
                 return check_gradients("leaky_relu", [&] { return weighted_sum(leaky_relu(x, 0.2), probe); },
                                        {x}, o);
               }});
  c.push_back({"softmax_axis", [](Rng& rng, GradCheckOptions o) {
                 auto x = uniform({3, 4, 5}, rng, -2, 2, true);
                 const auto probe = uniform({3, 4, 5}, rng, -1, 1, false);
                 return check_gradients("softmax_axis",
                                        [&] { return weighted_sum(softmax_axis(x, 1, 0.5), probe); }, {x}, o);
               }});
  c.push_back({"sample_bilinear2d", [](Rng& rng, GradCheckOptions o) {
                 auto src = uniform({2, 5, 6}, rng, -1, 1, true);
                 Tensor coords({2, 4, 4});
                 // Fractional parts in [0.2, 0.8] keep the probe inside one cell.
                 for (double& v : coords.data()) v = std::floor(rng.uniform(-1.0, 6.0)) + rng.uniform(0.2, 0.8);
                 coords.set_requires_grad(true);
                 const auto probe = uniform({2, 4, 4}, rng, -1, 1, false);
                 return check_gradients("sample_bilinear2d",
                                        [&] { return weighted_sum(sample_bilinear2d(src, coords), probe); },
                                        {src, coords}, o);
               }});
  c.push_back({"elementwise_and_layout", [](Rng& rng, GradCheckOptions o) {
                 auto a = uniform({2, 3, 4}, rng, 0.5, 2, true);
                 auto b = uniform({2, 3, 4}, rng, 0.5, 2, true);
                 auto ab = uniform({2}, rng, 0.5, 1.5, true);
                 const auto probe = uniform({3, 4, 4}, rng, -1, 1, false);
                 auto fn = [&] {
                   const auto e = log_eps(a * b, 1e-6) + square(a - b) + affine_map(a, ab);
                   const auto stacked = concat({e, slice0(b, 0, 1)}, 0);      // [3,3,4]
                   const auto rows = renormalize_last_axis(permute(stacked, {1, 2, 0}), 1e-6);  // [3,4,3]
                   const auto flat = reshape(rows, {3, 4, 3});
                   return weighted_sum(concat({flat, reshape(sum_last_axis(flat), {3, 4, 1})}, 2), probe) +
                          mean(add_scalar(scale(a, 0.3), 1.0));
                 };
                 return check_gradients("elementwise_and_layout", fn, {a, b, ab}, o);
               }});
  c.push_back({"huber", [](Rng& rng, GradCheckOptions o) {
                 auto x = uniform({20}, rng, -3, 3, true);
                 const auto probe = uniform({20}, rng, -1, 1, false);
                 return check_gradients("huber", [&] { return weighted_sum(huber_tensor(x, 1.0), probe); }, {x}, o);
               }});
  c.push_back({"dc_features_cost_volume", [](Rng& rng, GradCheckOptions o) {
                 DcFeatureExtractor net({4, 2, 0.2}, rng);
                 ParameterSet params;
                 net.register_parameters(params, "dc");
                 auto l = uniform({3, 16, 16}, rng, 0, 1, true);
                 auto r = uniform({3, 16, 16}, rng, 0, 1, true);
                 const DisparityGrid grid{0, 1, 3};
                 const auto probe = uniform({2, 2, 3}, rng, -1, 1, false);
                 std::vector<Tensor> inputs{l, r};
                 add_parameters(inputs, params);
                 o.step = 1e-6;
                 return check_gradients(
                     "dc_features_cost_volume",
                     [&] { return weighted_sum(build_dc_cost_volume(net(l), net(r), grid), probe); }, inputs, o);
               }});
  c.push_back({"dp_confidence_volume", [](Rng& rng, GradCheckOptions o) {
                 DpNetworkConfig cfg;
                 cfg.channels = 4;
                 cfg.residual_blocks = 1;
                 DpCostNetwork net(cfg, 16, rng);
                 ParameterSet params;
                 net.register_parameters(params, "dp");
                 auto top = uniform({1, 32, 32}, rng, 0, 1, true);
                 auto bottom = uniform({1, 32, 32}, rng, 0, 1, true);
                 const auto probe = uniform({2, 2, 17}, rng, -1, 1, false);
                 std::vector<Tensor> inputs{top, bottom};
                 add_parameters(inputs, params);
                 o.step = 1e-6;
                 return check_gradients(
                     "dp_confidence_volume",
                     [&] { return weighted_sum(build_dp_confidence_volume(top, bottom, net).values, probe); }, inputs,
                     o);
               }});
  c.push_back({"to_confidence_soft_argmax", [](Rng& rng, GradCheckOptions o) {
                 auto cost = uniform({2, 3, 17}, rng, 0, 2, true);
                 const auto probe = uniform({2, 3}, rng, -1, 1, false);
                 return check_gradients(
                     "to_confidence_soft_argmax",
                     [&] { return weighted_sum(soft_argmax(to_confidence(cost, DisparityGrid::dc())).disparity, probe); },
                     {cost}, o);
               }});
  c.push_back({"fit_affine", [](Rng& rng, GradCheckOptions o) {
                 auto dp = uniform({3, 4}, rng, -3, 3, true);
                 auto dc = uniform({3, 4}, rng, 0, 16, true);
                 const auto probe = Tensor({2}, {0.7, -1.3});
                 return check_gradients("fit_affine", [&] { return weighted_sum(fit_affine(dp, dc).ab, probe); },
                                        {dp, dc}, o);
               }});
  c.push_back({"warp_dp_volume", [](Rng& rng, GradCheckOptions o) {
                 auto cost = uniform({3, 4, 17}, rng, 0, 2, true);
                 Tensor coords = identity_grid(3, 4);
                 for (double& v : coords.data()) v += rng.uniform(0.2, 0.8) - 0.5;
                 // With these parameters no target hypothesis lands on a DP grid node.
                 auto ab = Tensor({2}, {2.3, 1.73}, true);
                 const auto probe = uniform({3, 4, 17}, rng, -1, 1, false);
                 const auto probe_v = uniform({3, 4}, rng, -1, 1, false);
                 auto fn = [&] {
                   const auto w = warp_dp_volume(to_confidence(cost, DisparityGrid::dp()), {coords}, {ab},
                                                 DisparityGrid::dc());
                   return weighted_sum(w.volume.values, probe) + weighted_sum(w.validity, probe_v);
                 };
                 return check_gradients("warp_dp_volume", fn, {cost, ab}, o);
               }});
  c.push_back({"fuse_volumes", [](Rng& rng, GradCheckOptions o) {
                 FusionNetwork net(FusionConfig{}, rng);
                 ParameterSet params;
                 net.register_parameters(params, "fusion");
                 auto a = uniform({3, 4, 17}, rng, 0, 2, true);
                 auto b = uniform({3, 4, 17}, rng, 0, 2, true);
                 auto valid = uniform({3, 4}, rng, 0, 1, true);
                 const auto probe = uniform({3, 4, 17}, rng, -1, 1, false);
                 std::vector<Tensor> inputs{a, b, valid};
                 add_parameters(inputs, params);
                 o.step = 1e-6;
                 auto fn = [&] {
                   const auto fused = fuse_volumes(to_confidence(a, DisparityGrid::dc()),
                                                   to_confidence(b, DisparityGrid::dc()), valid, net);
                   return weighted_sum(fused.values, probe);
                 };
                 return check_gradients("fuse_volumes", fn, inputs, o);
               }});
  c.push_back({"refine", [](Rng& rng, GradCheckOptions o) {
                 RefineConfig cfg;
                 cfg.guide_channels = 4;
                 cfg.trunk_channels = 4;
                 cfg.residual_blocks = 2;
                 Refiner net(cfg, rng);
                 ParameterSet params;
                 net.register_parameters(params, "refine");
                 RefineInputs in{uniform({2, 2}, rng, 0, 4, true), uniform({3, 16, 16}, rng, 0, 1, true),
                                 uniform({1, 32, 32}, rng, 0, 1, true), uniform({1, 32, 32}, rng, 0, 1, true),
                                 jittered_warp(16, 16, rng)};
                 const auto probe = uniform({16, 16}, rng, -1, 1, false);
                 std::vector<Tensor> inputs{in.d_unref, in.rgb_right, in.dp_top, in.dp_bottom};
                 add_parameters(inputs, params);
                 o.step = 1e-6;
                 o.max_entries_per_input = 32;
                 return check_gradients("refine", [&] { return weighted_sum(net(in), probe); }, inputs, o);
               }});
  c.push_back({"total_loss", [](Rng& rng, GradCheckOptions o) {
                 const GroundTruthMaps gt{uniform({16, 16}, rng, 8, 30, false), uniform({16, 16}, rng, 0.2, 1, false)};
                 auto a = uniform({2, 2}, rng, 0, 4, true), b = uniform({2, 2}, rng, 0, 4, true);
                 auto u = uniform({2, 2}, rng, 0, 4, true), r = uniform({16, 16}, rng, 5, 35, true);
                 auto ab = Tensor({2}, {0.3, 1.4}, true);
                 return check_gradients(
                     "total_loss", [&] { return total_loss({a, b, u, r}, {ab}, gt, {}).total; }, {a, b, u, r, ab}, o);
               }});
  c.push_back({"full_model", [](Rng& rng, GradCheckOptions o) {
                 // Every stage at default widths on a 16 x 16 instance: features,
                 // both volumes, affine fit, warp, fusion, refinement, loss.
                 DualNet net(ModelConfig{}, rng);
                 ParameterSet params;
                 net.register_parameters(params);
                 ModelInputs in{uniform({3, 16, 16}, rng, 0, 1, true), uniform({3, 16, 16}, rng, 0, 1, true),
                                uniform({1, 32, 32}, rng, 0, 1, true), uniform({1, 32, 32}, rng, 0, 1, true),
                                jittered_warp(16, 16, rng)};
                 const GroundTruthMaps gt{uniform({16, 16}, rng, 2, 14, false), uniform({16, 16}, rng, 0.2, 1, false)};
                 std::vector<Tensor> inputs{in.left, in.right, in.dp_top, in.dp_bottom};
                 add_parameters(inputs, params);
                 o.step = 1e-6;
                 o.max_entries_per_input = 4;
                 auto fn = [&] {
                   const ModelOutputs out = net(in);
                   return total_loss(out.loss, out.affine, gt, {}).total;
                 };
                 return check_gradients("full_model", fn, inputs, o);
               }});
  return c;
}

}  // namespace

std::vector<std::string> gradcheck_suite_names() {
  std::vector<std::string> names;
  for (const auto& c : cases()) names.push_back(c.name);
  return names;
}

std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  std::vector<GradCheckReport> reports;
  const auto all = cases();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!options.filter.empty() && all[i].name.find(options.filter) == std::string::npos) continue;
    Rng rng = Rng(options.seed).fork(i);
    GradCheckOptions o;
    o.seed = options.seed;
    o.corrupt_analytic = all[i].name == options.corrupt;
    reports.push_back(all[i].run(rng, o));
  }
  return reports;
}

}  // namespace du2
