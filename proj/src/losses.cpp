#include "du2/losses.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "du2/errors.hpp"
#include "du2/ops.hpp"

namespace du2 {

double huber(double x, double delta) {
  if (!(delta > 0)) throw ParameterError("huber: delta must be positive");
  const double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

Tensor huber_tensor(const Tensor& x, double delta) {
  if (!(delta > 0)) throw ParameterError("huber: delta must be positive");
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = huber(xv[i], delta);
  return make_op_result(x.shape(), std::move(out), "huber", {x}, [delta](const BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const auto go = ctx.out_grad();
    const auto v = ctx.value(0);
    auto g = ctx.grad(0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      g[i] += go[i] * (std::abs(v[i]) <= delta ? v[i] : std::copysign(delta, v[i]));
    }
  });
}

Tensor weighted_loss(const Tensor& d, const Tensor& d_gt, const Tensor& c_gt, double delta) {
  if (d.shape() != d_gt.shape() || d.shape() != c_gt.shape()) {
    throw ShapeError("weighted_loss: shapes " + shape_str(d.shape()) + ", " + shape_str(d_gt.shape()) +
                     ", " + shape_str(c_gt.shape()) + " differ");
  }
  double mass = 0.0;
  for (double c : c_gt.data()) mass += c;
  if (mass <= 0.0) {
    std::cerr << "warning: weighted_loss over zero total confidence; returning 0\n";
    return scale(sum(d), 0.0);
  }
  return scale(weighted_sum(huber_tensor(d - d_gt, delta), c_gt), 1.0 / mass);
}

GroundTruthMaps downsample_ground_truth(const GroundTruthMaps& gt, std::size_t factor) {
  const std::size_t h = gt.d_gt.dim(0), w = gt.d_gt.dim(1);
  if (h % factor != 0 || w % factor != 0) {
    throw ShapeError("downsample_ground_truth: " + shape_str(gt.d_gt.shape()) + " not divisible by " +
                     std::to_string(factor));
  }
  const std::size_t ho = h / factor, wo = w / factor;
  Tensor d({ho, wo}), c({ho, wo});
  const double area = static_cast<double>(factor * factor);
  for (std::size_t y = 0; y < ho; ++y) {
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0.0, lo = std::numeric_limits<double>::infinity();
      for (std::size_t dy = 0; dy < factor; ++dy) {
        for (std::size_t dx = 0; dx < factor; ++dx) {
          const std::size_t i = (y * factor + dy) * w + x * factor + dx;
          acc += gt.d_gt[i];
          lo = std::min(lo, gt.c_gt[i]);
        }
      }
      d[y * wo + x] = acc / area / static_cast<double>(factor);
      c[y * wo + x] = lo;
    }
  }
  return {d, c};
}

LossTerms total_loss(const LossOutputs& outputs, const AffineParams& affine, const GroundTruthMaps& gt,
                     const LossWeights& weights, std::size_t factor, double delta) {
  const GroundTruthMaps low = downsample_ground_truth(gt, factor);
  LossTerms terms;
  std::vector<Tensor> parts;
  auto add_term = [&](const char* name, double lambda, const std::optional<Tensor>& out,
                      const GroundTruthMaps& target, double& slot, bool affine_map_first) {
    if (lambda == 0.0) return;
    if (!out) throw ConfigError(std::string("total_loss: output ") + name + " is missing but its weight is nonzero");
    const Tensor pred = affine_map_first ? affine_map(*out, affine.ab) : *out;
    const Tensor l = weighted_loss(pred, target.d_gt, target.c_gt, delta);
    slot = l.item();
    parts.push_back(scale(l, lambda));
  };
  add_term("d_dp", weights.lambda_dp, outputs.d_dp, low, terms.dp, true);
  add_term("d_dc", weights.lambda_dc, outputs.d_dc, low, terms.dc, false);
  add_term("d_unref", weights.lambda_unref, outputs.d_unref, low, terms.unref, false);
  add_term("d_ref", weights.lambda_ref, outputs.d_ref, gt, terms.ref, false);
  if (parts.empty()) throw ConfigError("total_loss: every loss weight is zero");
  Tensor total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) total = total + parts[i];
  terms.total = total;
  return terms;
}

Metrics eval_metrics(const Tensor& d, const Tensor& d_gt, const Tensor& c, const std::vector<double>& thresholds) {
  if (d.shape() != d_gt.shape() || d.shape() != c.shape()) {
    throw ShapeError("eval_metrics: shapes " + shape_str(d.shape()) + ", " + shape_str(d_gt.shape()) + ", " +
                     shape_str(c.shape()) + " differ");
  }
  Metrics m;
  m.bad.assign(thresholds.size(), 0.0);
  double mass = 0.0, abs_acc = 0.0, sq_acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double e = std::abs(d[i] - d_gt[i]);
    mass += c[i];
    abs_acc += e * c[i];
    sq_acc += e * e * c[i];
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      if (e > thresholds[t]) m.bad[t] += c[i];
    }
  }
  if (!(mass > 0.0)) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    m.mae = m.rmse = nan;
    for (double& b : m.bad) b = nan;
    return m;
  }
  m.defined = true;
  m.mae = abs_acc / mass;
  m.rmse = std::sqrt(sq_acc / mass);
  for (double& b : m.bad) b = 100.0 * b / mass;
  return m;
}

Tensor eval_affine_fit(const Tensor& d_raw, const Tensor& d_gt, const Tensor& c_gt) {
  if (d_raw.shape() != d_gt.shape() || d_raw.shape() != c_gt.shape()) {
    throw ShapeError("eval_affine_fit: shapes differ");
  }
  // Weighted normal equations with weights c^2.
  double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
  for (std::size_t i = 0; i < d_raw.size(); ++i) {
    const double wgt = c_gt[i] * c_gt[i];
    s0 += wgt;
    s1 += wgt * d_raw[i];
    s2 += wgt * d_raw[i] * d_raw[i];
    t0 += wgt * d_gt[i];
    t1 += wgt * d_raw[i] * d_gt[i];
  }
  const double det = s0 * s2 - s1 * s1;
  if (!(s0 > 0) || !(det > 1e-12 * std::max(1.0, s0 * s2))) {
    std::cerr << "warning: eval_affine_fit is degenerate; returning the input unchanged\n";
    return d_raw.detach();
  }
  const double alpha = (s2 * t0 - s1 * t1) / det;
  const double beta = (s0 * t1 - s1 * t0) / det;
  Tensor out(d_raw.shape());
  for (std::size_t i = 0; i < d_raw.size(); ++i) out[i] = alpha + beta * d_raw[i];
  return out;
}

}  // namespace du2
