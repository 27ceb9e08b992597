#include "du2/costvol.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "du2/errors.hpp"
#include "du2/ops.hpp"
#include "du2/tensor_io.hpp"

namespace du2 {

DcFeatureExtractor::DcFeatureExtractor(const DcFeatureConfig& config, Rng& rng) : config_(config) {
  const std::size_t c = config.channels;
  down_.emplace_back(ConvSpec{3, c, 3, 2, 1, {}}, rng);
  down_.emplace_back(ConvSpec{c, c, 3, 2, 1, {}}, rng);
  down_.emplace_back(ConvSpec{c, c, 3, 2, 1, {}}, rng);
  for (std::size_t i = 0; i < config.residual_blocks; ++i) blocks_.emplace_back(c, config.slope, rng);
}

Tensor DcFeatureExtractor::operator()(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("extract_dc_features: expected [3,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0) {
    throw ShapeError("extract_dc_features: extents " + shape_str(image.shape()) +
                     " are not divisible by 8");
  }
  Tensor x = image;
  for (const auto& conv : down_) x = leaky_relu(conv(x), config_.slope);
  for (const auto& block : blocks_) x = block(x);
  return x;
}

void DcFeatureExtractor::register_parameters(ParameterSet& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < down_.size(); ++i) {
    down_[i].register_parameters(set, prefix + ".down" + std::to_string(i));
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].register_parameters(set, prefix + ".res" + std::to_string(i));
  }
}

Tensor build_dc_cost_volume(const Tensor& feat_l, const Tensor& feat_r, const DisparityGrid& grid) {
  if (feat_l.rank() != 3 || feat_l.shape() != feat_r.shape()) {
    throw ShapeError("build_dc_cost_volume: feature shapes " + shape_str(feat_l.shape()) + " and " +
                     shape_str(feat_r.shape()) + " differ or are not [C,H,W]");
  }
  std::vector<long> shifts(grid.count);
  for (std::size_t i = 0; i < grid.count; ++i) {
    const double d = grid.value(i);
    if (d != std::round(d)) throw ParameterError("build_dc_cost_volume: hypotheses must be integers");
    shifts[i] = static_cast<long>(d);
  }
  const long ch = static_cast<long>(feat_l.dim(0));
  const long h = static_cast<long>(feat_l.dim(1));
  const long w = static_cast<long>(feat_l.dim(2));
  const long n = static_cast<long>(grid.count);
  const double* lv = feat_l.data().data();
  const double* rv = feat_r.data().data();

  std::vector<double> out(static_cast<std::size_t>(h * w * n), 0.0);
  for (long c = 0; c < ch; ++c) {
    for (long y = 0; y < h; ++y) {
      const double* lrow = lv + (c * h + y) * w;
      const double* rrow = rv + (c * h + y) * w;
      for (long x = 0; x < w; ++x) {
        double* cell = out.data() + (y * w + x) * n;
        for (long i = 0; i < n; ++i) {
          const long xl = x + shifts[i];
          const double l = (xl >= 0 && xl < w) ? lrow[xl] : 0.0;
          cell[i] += std::abs(rrow[x] - l);
        }
      }
    }
  }

  auto fn = [=](const BackwardContext& ctx) {
    const double* go = ctx.out_grad().data();
    const double* l_v = ctx.value(0).data();
    const double* r_v = ctx.value(1).data();
    double* gl = ctx.wants(0) ? ctx.grad(0).data() : nullptr;
    double* gr = ctx.wants(1) ? ctx.grad(1).data() : nullptr;
    for (long c = 0; c < ch; ++c) {
      for (long y = 0; y < h; ++y) {
        const long row = (c * h + y) * w;
        for (long x = 0; x < w; ++x) {
          const double* g = go + (y * w + x) * n;
          for (long i = 0; i < n; ++i) {
            const long xl = x + shifts[i];
            const bool inside = xl >= 0 && xl < w;
            const double diff = r_v[row + x] - (inside ? l_v[row + xl] : 0.0);
            const double s = diff > 0 ? g[i] : (diff < 0 ? -g[i] : 0.0);
            if (gr) gr[row + x] += s;
            if (gl && inside) gl[row + xl] -= s;
          }
        }
      }
    }
  };
  return make_op_result({static_cast<std::size_t>(h), static_cast<std::size_t>(w), grid.count},
                        std::move(out), "build_dc_cost_volume", {feat_l, feat_r}, fn);
}

DpCostNetwork::DpCostNetwork(const DpNetworkConfig& config, std::size_t ratio, Rng& rng)
    : config_(config), ratio_(ratio) {
  if (ratio == 0 || (ratio & (ratio - 1)) != 0) {
    throw ShapeError("DpCostNetwork: resolution ratio " + std::to_string(ratio) +
                     " is not a power of two");
  }
  const std::size_t c = config.channels;
  std::size_t in = 2;
  for (std::size_t r = ratio; r > 1; r /= 2) {
    down_.emplace_back(ConvSpec{in, c, 3, 2, 1, {}}, rng);
    in = c;
  }
  if (down_.empty()) down_.emplace_back(ConvSpec{2, c, 3, 1, 1, {}}, rng);
  for (std::size_t i = 0; i < config.residual_blocks; ++i) blocks_.emplace_back(c, config.slope, rng);
  head_ = Conv2dLayer(ConvSpec{c, config.grid.count, 3, 1, 1, {}}, rng);
}

Tensor DpCostNetwork::scores(const Tensor& dp_top, const Tensor& dp_bottom) const {
  if (dp_top.rank() != 3 || dp_top.dim(0) != 1 || dp_top.shape() != dp_bottom.shape()) {
    throw ShapeError("build_dp_confidence_volume: DP halves must both be [1,H,W], got " +
                     shape_str(dp_top.shape()) + " and " + shape_str(dp_bottom.shape()));
  }
  if (dp_top.dim(1) % ratio_ != 0 || dp_top.dim(2) % ratio_ != 0) {
    throw ShapeError("build_dp_confidence_volume: DP extent " + shape_str(dp_top.shape()) +
                     " is not a multiple of the ratio " + std::to_string(ratio_));
  }
  Tensor x = concat({dp_top, dp_bottom}, 0);
  for (const auto& conv : down_) x = leaky_relu(conv(x), config_.slope);
  for (const auto& block : blocks_) x = block(x);
  return head_(x);
}

void DpCostNetwork::register_parameters(ParameterSet& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < down_.size(); ++i) {
    down_[i].register_parameters(set, prefix + ".down" + std::to_string(i));
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].register_parameters(set, prefix + ".res" + std::to_string(i));
  }
  head_.register_parameters(set, prefix + ".head");
}

ConfidenceVolume build_dp_confidence_volume(const Tensor& dp_top, const Tensor& dp_bottom,
                                            const DpCostNetwork& net) {
  const Tensor s = net.scores(dp_top, dp_bottom);
  return {softmax_axis(permute(s, {1, 2, 0}), 2, net.config().temperature), net.config().grid};
}

ConfidenceVolume to_confidence(const Tensor& cost, const DisparityGrid& grid, double t) {
  if (cost.rank() != 3 || cost.dim(2) != grid.count) {
    throw ShapeError("to_confidence: cost " + shape_str(cost.shape()) + " does not match a " +
                     std::to_string(grid.count) + "-hypothesis grid");
  }
  return {softmax_axis(-cost, 2, t), grid};
}

DisparityMap soft_argmax(const ConfidenceVolume& volume) {
  const Tensor& v = volume.values;
  if (v.rank() != 3 || v.dim(2) != volume.grid.count) {
    throw ShapeError("soft_argmax: volume " + shape_str(v.shape()) + " does not match its grid");
  }
  const std::size_t n = volume.grid.count;
  const std::size_t pixels = v.dim(0) * v.dim(1);
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = volume.grid.value(i);

  std::vector<double> out(pixels, 0.0);
  std::vector<double> flags(pixels, 1.0);
  const double* vv = v.data().data();
  for (std::size_t p = 0; p < pixels; ++p) {
    double mass = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mass += vv[p * n + i];
      acc += vv[p * n + i] * values[i];
    }
    if (mass < 1e-6) {
      out[p] = volume.grid.midpoint();
      flags[p] = 0.0;
    } else {
      out[p] = acc;
    }
  }
  auto fn = [values, flags, n, pixels](const BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const double* go = ctx.out_grad().data();
    double* g = ctx.grad(0).data();
    for (std::size_t p = 0; p < pixels; ++p) {
      if (flags[p] == 0.0) continue;
      for (std::size_t i = 0; i < n; ++i) g[p * n + i] += go[p] * values[i];
    }
  };
  const Shape shape{v.dim(0), v.dim(1)};
  Tensor d = make_op_result(shape, std::move(out), "soft_argmax", {v}, fn);
  return {d, Tensor(shape, std::move(flags))};
}

void dump_volume(const std::filesystem::path& path, const ConfidenceVolume& volume) {
  save_tensor(path, volume.values);
  std::ofstream os(path.string() + ".json");
  if (!os) throw IoError("cannot open " + path.string() + ".json for writing");
  const nlohmann::json meta = {
      {"first", volume.grid.first}, {"step", volume.grid.step}, {"count", volume.grid.count}};
  os << meta.dump() << "\n";
}

ConfidenceVolume load_volume(const std::filesystem::path& path) {
  ConfidenceVolume v;
  v.values = load_tensor(path);
  std::ifstream is(path.string() + ".json");
  if (!is) throw IoError("cannot open " + path.string() + ".json");
  try {
    const auto meta = nlohmann::json::parse(is);
    v.grid = {meta.at("first").get<double>(), meta.at("step").get<double>(),
              meta.at("count").get<std::size_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ".json: " + e.what());
  }
  return v;
}

}  // namespace du2
