#include "du2/model.hpp"

#include "du2/errors.hpp"
#include "du2/ops.hpp"

namespace du2 {

FusionMode parse_fusion_mode(std::string_view name) {
  if (name == "dc_only") return FusionMode::dc_only;
  if (name == "dp_dc_2d") return FusionMode::dp_dc_2d;
  if (name == "dp_dc_cost") return FusionMode::dp_dc_cost;
  if (name == "dp_dc_conf") return FusionMode::dp_dc_conf;
  throw ConfigError("unknown fusion mode '" + std::string(name) +
                    "' (expected dc_only, dp_dc_2d, dp_dc_cost or dp_dc_conf)");
}

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::dc_only: return "dc_only";
    case FusionMode::dp_dc_2d: return "dp_dc_2d";
    case FusionMode::dp_dc_cost: return "dp_dc_cost";
    case FusionMode::dp_dc_conf: return "dp_dc_conf";
  }
  return "?";
}

ModelInputs model_inputs(const SceneSample& s) { return {s.left, s.right, s.dp_top, s.dp_bottom, s.w_r}; }

DualNet::DualNet(const ModelConfig& config, Rng& rng) : config_(config) {
  if (config_.fusion_mode == FusionMode::dc_only) config_.refine.mode = RefineMode::rgb_only;
  config_.refine.factor = config_.factor;
  dc_ = DcFeatureExtractor(config_.dc, rng);
  if (uses_dp()) dp_ = DpCostNetwork(config_.dp, config_.factor * config_.dp_scale, rng);
  const std::size_t hidden = config_.fusion.hidden;
  switch (config_.fusion_mode) {
    case FusionMode::dp_dc_2d:
      // [d_dc, aligned d_dp, validity] -> residual over their mean.
      fusion2d_.emplace_back(ConvSpec{3, hidden, 3, 1, 1, {}}, rng);
      fusion2d_.emplace_back(ConvSpec{hidden, hidden, 3, 1, 1, {}}, rng);
      fusion2d_.emplace_back(ConvSpec{hidden, 1, 3, 1, 1, {}}, rng);
      break;
    case FusionMode::dp_dc_cost:
    case FusionMode::dp_dc_conf:
      fusion_ = FusionNetwork(config_.fusion, rng);
      break;
    case FusionMode::dc_only:
      break;
  }
  refine_ = Refiner(config_.refine, rng);
}

void DualNet::register_parameters(ParameterSet& set) const {
  dc_.register_parameters(set, "dc");
  if (uses_dp()) dp_.register_parameters(set, "dp");
  if (config_.fusion_mode == FusionMode::dp_dc_2d) {
    for (std::size_t i = 0; i < fusion2d_.size(); ++i) fusion2d_[i].register_parameters(set, "fusion2d.conv" + std::to_string(i));
  } else if (config_.fusion_mode != FusionMode::dc_only) {
    fusion_.register_parameters(set, "fusion");
  }
  refine_.register_parameters(set, "refine");
}

LossWeights DualNet::effective_weights(LossWeights w) const {
  if (!uses_dp()) w.lambda_dp = 0.0;
  return w;
}

namespace {

Tensor as_channel(const Tensor& volume_or_map, std::size_t n) {
  if (volume_or_map.rank() == 2) {
    const std::size_t h = volume_or_map.dim(0), w = volume_or_map.dim(1);
    std::vector<Tensor> copies(n, reshape(volume_or_map, {1, h, w}));
    return reshape(concat(copies, 0), {1, n, h, w});
  }
  const Tensor s = volume_to_slices(volume_or_map);
  return reshape(s, {1, s.dim(0), s.dim(1), s.dim(2)});
}

}  // namespace

ModelOutputs DualNet::operator()(const ModelInputs& in) const {
  const std::size_t f = config_.factor;
  if (in.left.rank() != 3 || in.left.shape() != in.right.shape() || in.left.dim(1) % f != 0 ||
      in.left.dim(2) % f != 0) {
    throw ShapeError("model: left/right images must share a [3,H,W] shape divisible by " + std::to_string(f) +
                     ", got " + shape_str(in.left.shape()) + " and " + shape_str(in.right.shape()));
  }
  ModelOutputs out;
  const DisparityGrid dc_grid = DisparityGrid::dc();
  const Tensor cost = build_dc_cost_volume(dc_(in.left), dc_(in.right), dc_grid);
  out.dc_cost = cost;
  out.c_dc = to_confidence(cost, dc_grid, config_.dc_temperature);
  const Tensor d_dc = soft_argmax(out.c_dc).disparity;
  out.loss.d_dc = d_dc;
  const std::size_t h = d_dc.dim(0), w = d_dc.dim(1), n = dc_grid.count;

  Tensor d_unref;
  if (!uses_dp()) {
    out.affine = AffineParams::identity();
    out.validity = Tensor({h, w});
    out.fused = out.c_dc;
    d_unref = d_dc;
  } else {
    const Tensor scores = dp_.scores(in.dp_top, in.dp_bottom);
    const Tensor logits = permute(scores, {1, 2, 0});
    const ConfidenceVolume c_dp{softmax_axis(logits, 2, config_.dp.temperature), config_.dp.grid};
    const WarpMap w_low = downscale_warp(in.w_r, f, static_cast<double>(f * config_.dp_scale));
    if (w_low.coords.dim(1) != h || w_low.coords.dim(2) != w) {
      throw ShapeError("model: warp map does not match the image extent");
    }
    // DP disparity resampled onto the DC pixel grid, still in DP units.
    const Tensor d_dp = soft_argmax({warp_volume_raw(c_dp, w_low, AffineParams::identity(), c_dp.grid), c_dp.grid}).disparity;
    out.loss.d_dp = d_dp;
    out.affine = fit_affine(d_dp, d_dc, config_.gamma);
    const WarpedVolume warped = warp_dp_volume(c_dp, w_low, out.affine, dc_grid);
    out.validity = warped.validity;

    switch (config_.fusion_mode) {
      case FusionMode::dp_dc_conf:
        out.fused = fuse_volumes(out.c_dc, warped.volume, warped.validity, fusion_);
        d_unref = unrefined_disparity(out.fused).disparity;
        break;
      case FusionMode::dp_dc_cost: {
        // Logits sampled with zero padding: empty rows look like flat costs.
        const Tensor dp_logits = warp_volume_raw({logits, c_dp.grid}, w_low, out.affine, dc_grid);
        std::vector<Tensor> channels{as_channel(scale(cost, -1.0 / config_.dc_temperature), n),
                                     as_channel(dp_logits, n)};
        if (fusion_.config().validity_channel) channels.push_back(as_channel(warped.validity, n));
        const Tensor s = reshape(fusion_.scores(concat(channels, 0)), {n, h, w});
        out.fused = {softmax_axis(slices_to_volume(s), 2, fusion_.config().temperature), dc_grid};
        d_unref = unrefined_disparity(out.fused).disparity;
        break;
      }
      case FusionMode::dp_dc_2d: {
        const Tensor aligned = affine_map(d_dp, out.affine.ab);
        Tensor x = concat({reshape(d_dc, {1, h, w}), reshape(aligned, {1, h, w}), reshape(warped.validity, {1, h, w})}, 0);
        for (std::size_t i = 0; i < fusion2d_.size(); ++i) {
          x = fusion2d_[i](x);
          if (i + 1 < fusion2d_.size()) x = leaky_relu(x, config_.fusion.slope);
        }
        d_unref = scale(d_dc + aligned, 0.5) + reshape(x, {h, w});
        break;
      }
      case FusionMode::dc_only:
        break;
    }
  }
  out.loss.d_unref = d_unref;
  out.d_ref = refine_({d_unref, in.right, in.dp_top, in.dp_bottom, in.w_r});
  out.loss.d_ref = out.d_ref;
  return out;
}

}  // namespace du2
