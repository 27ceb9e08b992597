#include "du2/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "du2/errors.hpp"
#include "du2/ops.hpp"

namespace du2 {

AffineParams fit_affine(const Tensor& d_dp, const Tensor& d_dc, double gamma) {
  if (d_dp.shape() != d_dc.shape()) {
    throw ShapeError("fit_affine: maps " + shape_str(d_dp.shape()) + " and " +
                     shape_str(d_dc.shape()) + " differ");
  }
  if (gamma < 0) throw ParameterError("fit_affine: gamma must be >= 0");
  const auto x = d_dp.data();
  const auto y = d_dc.data();
  const double n = static_cast<double>(x.size());
  double s1 = 0, s2 = 0, t0 = 0, t1 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s1 += x[i];
    s2 += x[i] * x[i];
    t0 += y[i];
    t1 += x[i] * y[i];
  }
  // [[n+g, s1], [s1, s2+g]] (alpha, beta) = (t0, t1+g)
  const double a00 = n + gamma, a01 = s1, a11 = s2 + gamma;
  const double det = a00 * a11 - a01 * a01;
  if (!(std::abs(det) > 1e-300)) {
    throw NumericError("fit_affine: singular normal equations (constant d_dp with gamma = 0)");
  }
  const double alpha = (a11 * t0 - a01 * (t1 + gamma)) / det;
  const double beta = (a00 * (t1 + gamma) - a01 * t0) / det;

  auto fn = [=](const BackwardContext& ctx) {
    const double ga = ctx.out_grad()[0], gb = ctx.out_grad()[1];
    // u = A^-1 g; dL/db = u, dL/dA = -u s^T.
    const double u0 = (a11 * ga - a01 * gb) / det;
    const double u1 = (a00 * gb - a01 * ga) / det;
    const double d_s1 = -(u0 * beta + u1 * alpha);
    const double d_s2 = -u1 * beta;
    const auto xv = ctx.value(0);
    const auto yv = ctx.value(1);
    if (ctx.wants(0)) {
      auto g = ctx.grad(0);
      for (std::size_t i = 0; i < xv.size(); ++i) g[i] += d_s1 + 2.0 * xv[i] * d_s2 + u1 * yv[i];
    }
    if (ctx.wants(1)) {
      auto g = ctx.grad(1);
      for (std::size_t i = 0; i < xv.size(); ++i) g[i] += u0 + u1 * xv[i];
    }
  };
  return {make_op_result({2}, {alpha, beta}, "fit_affine", {d_dp, d_dc}, fn)};
}

WarpMap downscale_warp(const WarpMap& full, std::size_t factor, double source_factor) {
  const Tensor& c = full.coords;
  if (c.rank() != 3 || c.dim(0) != 2 || c.dim(1) % factor != 0 || c.dim(2) % factor != 0) {
    throw ShapeError("downscale_warp: warp " + shape_str(c.shape()) + " is not divisible by " +
                     std::to_string(factor));
  }
  const std::size_t h = c.dim(1), w = c.dim(2);
  const std::size_t ho = h / factor, wo = w / factor;
  const double f = static_cast<double>(factor);
  Tensor centers({2, ho, wo});
  for (std::size_t v = 0; v < ho; ++v) {
    for (std::size_t u = 0; u < wo; ++u) {
      const double cx = (static_cast<double>(u) + 0.5) * f - 0.5;
      const double cy = (static_cast<double>(v) + 0.5) * f - 0.5;
      centers[v * wo + u] = std::clamp(cx, 0.0, static_cast<double>(w - 1));
      centers[ho * wo + v * wo + u] = std::clamp(cy, 0.0, static_cast<double>(h - 1));
    }
  }
  NoGradGuard guard;
  Tensor sampled = sample_bilinear2d(c.detach(), centers);
  for (double& p : sampled.data()) p = (p + 0.5) / source_factor - 0.5;
  return {sampled};
}

Tensor warp_volume_raw(const ConfidenceVolume& c_dp, const WarpMap& w, const AffineParams& affine,
                       const DisparityGrid& target_grid) {
  const Tensor& vol = c_dp.values;
  const Tensor& coords = w.coords;
  if (vol.rank() != 3 || vol.dim(2) != c_dp.grid.count) {
    throw ShapeError("warp_dp_volume: volume " + shape_str(vol.shape()) + " does not match its grid");
  }
  if (coords.rank() != 3 || coords.dim(0) != 2) {
    throw ShapeError("warp_dp_volume: warp must be [2,H,W], got " + shape_str(coords.shape()));
  }
  if (affine.ab.size() != 2) throw ShapeError("warp_dp_volume: affine parameters must be [2]");
  const double alpha = affine.alpha(), beta = affine.beta();
  if (beta == 0.0) throw NumericError("warp_dp_volume: beta is zero");

  using Index = long;
  const Index hs = static_cast<Index>(vol.dim(0)), ws = static_cast<Index>(vol.dim(1));
  const Index ns = static_cast<Index>(c_dp.grid.count);
  const Index ho = static_cast<Index>(coords.dim(1)), wo = static_cast<Index>(coords.dim(2));
  const Index nt = static_cast<Index>(target_grid.count);
  const Index pix = ho * wo;
  const DisparityGrid src_grid = c_dp.grid;
  const double* vv = vol.data().data();
  const double* cv = coords.data().data();

  struct Taps {
    Index offset[4];  // source voxel row offsets, -1 when outside
    double weight[4];
  };
  std::vector<Taps> spatial(static_cast<std::size_t>(pix));
  for (Index p = 0; p < pix; ++p) {
    const double x = cv[p], y = cv[pix + p];
    const double xf = std::floor(x), yf = std::floor(y);
    const Index x0 = static_cast<Index>(xf), y0 = static_cast<Index>(yf);
    const double fx = x - xf, fy = y - yf;
    const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const Index xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const Index ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int t = 0; t < 4; ++t) {
      const bool inside = xs[t] >= 0 && xs[t] < ws && ys[t] >= 0 && ys[t] < hs;
      spatial[p].offset[t] = inside ? (ys[t] * ws + xs[t]) * ns : -1;
      spatial[p].weight[t] = inside ? wts[t] : 0.0;
    }
  }
  // Hypothesis positions q_k on the source grid.
  std::vector<double> q(static_cast<std::size_t>(nt));
  for (Index k = 0; k < nt; ++k) {
    q[k] = ((target_grid.value(k) - alpha) / beta - src_grid.first) / src_grid.step;
  }

  auto lookup = [ns](const double* row, double qk, double& value, double& slope) {
    const double qf = std::floor(qk);
    const Index q0 = static_cast<Index>(qf);
    const double f = qk - qf;
    const double a = (q0 >= 0 && q0 < ns) ? row[q0] : 0.0;
    const double b = (q0 + 1 >= 0 && q0 + 1 < ns) ? row[q0 + 1] : 0.0;
    value = (1 - f) * a + f * b;
    slope = b - a;
  };

  std::vector<double> out(static_cast<std::size_t>(pix * nt), 0.0);
  for (Index p = 0; p < pix; ++p) {
    const Taps& tp = spatial[p];
    for (int t = 0; t < 4; ++t) {
      if (tp.offset[t] < 0 || tp.weight[t] == 0.0) continue;
      const double* row = vv + tp.offset[t];
      for (Index k = 0; k < nt; ++k) {
        double value, slope;
        lookup(row, q[k], value, slope);
        out[p * nt + k] += tp.weight[t] * value;
      }
    }
  }

  auto fn = [=](const BackwardContext& ctx) {
    const double* go = ctx.out_grad().data();
    const double* v = ctx.value(0).data();
    double* gv = ctx.wants(0) ? ctx.grad(0).data() : nullptr;
    double dq_sum_alpha = 0.0, dq_sum_beta = 0.0;
    for (Index p = 0; p < pix; ++p) {
      const Taps& tp = spatial[p];
      for (int t = 0; t < 4; ++t) {
        if (tp.offset[t] < 0 || tp.weight[t] == 0.0) continue;
        const double* row = v + tp.offset[t];
        for (Index k = 0; k < nt; ++k) {
          const double g = go[p * nt + k] * tp.weight[t];
          const double qf = std::floor(q[k]);
          const Index q0 = static_cast<Index>(qf);
          const double f = q[k] - qf;
          if (gv) {
            if (q0 >= 0 && q0 < ns) gv[tp.offset[t] + q0] += (1 - f) * g;
            if (q0 + 1 >= 0 && q0 + 1 < ns) gv[tp.offset[t] + q0 + 1] += f * g;
          }
          double value, slope;
          lookup(row, q[k], value, slope);
          // dq/dalpha = -1/(beta*step); dq/dbeta = -s/(beta*step), s = (z-alpha)/beta.
          const double s = (target_grid.value(k) - alpha) / beta;
          dq_sum_alpha += g * slope * (-1.0 / (beta * src_grid.step));
          dq_sum_beta += g * slope * (-s / (beta * src_grid.step));
        }
      }
    }
    if (ctx.wants(1)) {
      auto ga = ctx.grad(1);
      ga[0] += dq_sum_alpha;
      ga[1] += dq_sum_beta;
    }
  };
  return make_op_result({coords.dim(1), coords.dim(2), target_grid.count}, std::move(out),
                        "warp_volume", {vol, affine.ab}, fn);
}

WarpedVolume warp_dp_volume(const ConfidenceVolume& c_dp, const WarpMap& w, const AffineParams& affine,
                            const DisparityGrid& target_grid) {
  const Tensor raw = warp_volume_raw(c_dp, w, affine, target_grid);
  return {{renormalize_last_axis(raw, 1e-6), target_grid}, sum_last_axis(raw)};
}

FusionNetwork::FusionNetwork(const FusionConfig& config, Rng& rng) : config_(config) {
  const std::size_t h = config.hidden;
  layers_.emplace_back(ConvSpec{input_channels(), h, 3, 1, 1, {}}, rng);
  layers_.emplace_back(ConvSpec{h, h, 3, 1, 1, {}}, rng);
  layers_.emplace_back(ConvSpec{h, 1, 3, 1, 1, {}}, rng);
}

void FusionNetwork::register_parameters(ParameterSet& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].register_parameters(set, prefix + ".conv" + std::to_string(i));
  }
}

Tensor FusionNetwork::scores(const Tensor& stacked) const {
  Tensor x = stacked;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](x);
    if (i + 1 < layers_.size()) x = leaky_relu(x, config_.slope);
  }
  return x;
}

Tensor volume_to_slices(const Tensor& v) { return permute(v, {2, 0, 1}); }
Tensor slices_to_volume(const Tensor& s) { return permute(s, {1, 2, 0}); }

ConfidenceVolume fuse_volumes(const ConfidenceVolume& c_dc, const ConfidenceVolume& c_dp_warp,
                              const Tensor& validity, const FusionNetwork& net) {
  if (!(c_dc.grid == c_dp_warp.grid)) {
    throw ShapeError("fuse_volumes: hypothesis grids differ; warp the DP volume to the DC grid first");
  }
  if (c_dc.values.shape() != c_dp_warp.values.shape()) {
    throw ShapeError("fuse_volumes: volume shapes " + shape_str(c_dc.values.shape()) + " and " +
                     shape_str(c_dp_warp.values.shape()) + " differ");
  }
  const std::size_t h = c_dc.height(), w = c_dc.width(), n = c_dc.grid.count;
  const double eps = net.config().log_eps;
  std::vector<Tensor> channels{reshape(volume_to_slices(log_eps(c_dc.values, eps)), {1, n, h, w}),
                               reshape(volume_to_slices(log_eps(c_dp_warp.values, eps)), {1, n, h, w})};
  if (net.config().validity_channel) {
    if (validity.shape() != Shape{h, w}) {
      throw ShapeError("fuse_volumes: validity must be " + shape_str({h, w}));
    }
    std::vector<Tensor> copies(n, reshape(validity, {1, h, w}));
    channels.push_back(reshape(concat(copies, 0), {1, n, h, w}));
  }
  const Tensor s = reshape(net.scores(concat(channels, 0)), {n, h, w});
  return {softmax_axis(slices_to_volume(s), 2, net.config().temperature), c_dc.grid};
}

DisparityMap unrefined_disparity(const ConfidenceVolume& fused) { return soft_argmax(fused); }

void set_pass_through(FusionNetwork& net) {
  auto& layers = net.layers();
  for (auto& l : layers) {
    fill(l.weight, 0.0);
    fill(l.bias, 0.0);
  }
  const double s = net.config().slope;
  const std::size_t center = 13;  // (1,1,1) in a 3x3x3 kernel
  auto tap = [&](Conv3dLayer& l, std::size_t o, std::size_t i) -> double& {
    return l.weight[(o * l.spec.in_channels + i) * 27 + center];
  };
  // lrelu(x) - lrelu(-x) = (1 + s) x, applied twice, then scaled by t.
  tap(layers[0], 0, 0) = 1.0;
  tap(layers[0], 1, 0) = -1.0;
  tap(layers[1], 0, 0) = 1.0;
  tap(layers[1], 0, 1) = -1.0;
  tap(layers[1], 1, 0) = -1.0;
  tap(layers[1], 1, 1) = 1.0;
  const double k = net.config().temperature / ((1 + s) * (1 + s));
  tap(layers[2], 0, 0) = k;
  tap(layers[2], 0, 1) = -k;
}

}  // namespace du2
