#include "du2/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "du2/errors.hpp"

namespace du2 {

namespace {

using Index = std::ptrdiff_t;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

// Output index range [lo, hi) such that o*stride + offset lies in [0, extent).
std::pair<Index, Index> valid_range(Index out_extent, Index stride, Index offset, Index extent) {
  Index lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  Index hi = 0;
  if (extent - 1 - offset >= 0) hi = (extent - 1 - offset) / stride + 1;
  hi = std::min(hi, out_extent);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

struct ConvGeometry {
  Index k, s, d, p;
};

void check_conv_args(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     const ConvSpec& spec, std::size_t spatial, const char* op) {
  if (input.rank() != spatial + 1) {
    throw ShapeError(std::string(op) + ": input must have rank " + std::to_string(spatial + 1) +
                     ", got " + shape_str(input.shape()));
  }
  if (input.dim(0) != spec.in_channels) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(input.dim(0)) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
  Shape expect{spec.out_channels, spec.in_channels};
  for (std::size_t i = 0; i < spatial; ++i) expect.push_back(spec.kernel);
  if (weight.shape() != expect) {
    throw ShapeError(std::string(op) + ": weight shape " + shape_str(weight.shape()) +
                     " does not match spec " + shape_str(expect));
  }
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) +
                     " does not match " + std::to_string(spec.out_channels) + " output channels");
  }
  if (spec.stride == 0 || spec.dilation == 0 || spec.kernel == 0) {
    throw ParameterError(std::string(op) + ": kernel, stride and dilation must be positive");
  }
  for (std::size_t i = 1; i <= spatial; ++i) {
    if (input.dim(i) + 2 * spec.pad() < spec.dilation * (spec.kernel - 1) + 1) {
      throw ShapeError(std::string(op) + ": input " + shape_str(input.shape()) +
                       " too small for kernel");
    }
  }
  require_finite(input, op);
}

}  // namespace

std::size_t ConvSpec::output_extent(std::size_t in) const {
  const Index span = static_cast<Index>(dilation * (kernel - 1) + 1);
  const Index padded = static_cast<Index>(in + 2 * pad());
  if (padded < span) return 0;
  return static_cast<std::size_t>((padded - span) / static_cast<Index>(stride) + 1);
}

// ---------------------------------------------------------------------------
// conv2d

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec) {
  check_conv_args(input, weight, bias, spec, 2, "conv2d");
  const Index ci_n = static_cast<Index>(spec.in_channels);
  const Index co_n = static_cast<Index>(spec.out_channels);
  const Index h = static_cast<Index>(input.dim(1));
  const Index w = static_cast<Index>(input.dim(2));
  const Index ho = static_cast<Index>(spec.output_extent(input.dim(1)));
  const Index wo = static_cast<Index>(spec.output_extent(input.dim(2)));
  const ConvGeometry g{static_cast<Index>(spec.kernel), static_cast<Index>(spec.stride),
                       static_cast<Index>(spec.dilation), static_cast<Index>(spec.pad())};

  std::vector<double> out(static_cast<std::size_t>(co_n * ho * wo), 0.0);
  const double* in = input.data().data();
  const double* wt = weight.data().data();
  for (Index co = 0; co < co_n; ++co) {
    double* oc = out.data() + co * ho * wo;
    if (bias.defined()) std::fill(oc, oc + ho * wo, bias.data()[static_cast<std::size_t>(co)]);
    for (Index ci = 0; ci < ci_n; ++ci) {
      const double* ic = in + ci * h * w;
      for (Index ky = 0; ky < g.k; ++ky) {
        const auto [oy0, oy1] = valid_range(ho, g.s, ky * g.d - g.p, h);
        for (Index kx = 0; kx < g.k; ++kx) {
          const double wv = wt[((co * ci_n + ci) * g.k + ky) * g.k + kx];
          const Index xoff = kx * g.d - g.p;
          const auto [ox0, ox1] = valid_range(wo, g.s, xoff, w);
          for (Index oy = oy0; oy < oy1; ++oy) {
            const double* irow = ic + (oy * g.s + ky * g.d - g.p) * w + xoff;
            double* orow = oc + oy * wo;
            if (g.s == 1) {
              for (Index ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox];
            } else {
              for (Index ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox * g.s];
            }
          }
        }
      }
    }
  }

  auto fn = [=](const BackwardContext& ctx) {
    const double* go = ctx.out_grad().data();
    const double* in_v = ctx.value(0).data();
    const double* w_v = ctx.value(1).data();
    double* gi = ctx.wants(0) ? ctx.grad(0).data() : nullptr;
    double* gw = ctx.wants(1) ? ctx.grad(1).data() : nullptr;
    if (ctx.input_count() > 2 && ctx.wants(2)) {
      double* gb = ctx.grad(2).data();
      for (Index co = 0; co < co_n; ++co) {
        double acc = 0.0;
        for (Index i = 0; i < ho * wo; ++i) acc += go[co * ho * wo + i];
        gb[co] += acc;
      }
    }
    for (Index co = 0; co < co_n; ++co) {
      const double* gc = go + co * ho * wo;
      for (Index ci = 0; ci < ci_n; ++ci) {
        const double* ic = in_v + ci * h * w;
        double* gic = gi ? gi + ci * h * w : nullptr;
        for (Index ky = 0; ky < g.k; ++ky) {
          const auto [oy0, oy1] = valid_range(ho, g.s, ky * g.d - g.p, h);
          for (Index kx = 0; kx < g.k; ++kx) {
            const Index widx = ((co * ci_n + ci) * g.k + ky) * g.k + kx;
            const double wv = w_v[widx];
            const Index xoff = kx * g.d - g.p;
            const auto [ox0, ox1] = valid_range(wo, g.s, xoff, w);
            double wacc = 0.0;
            for (Index oy = oy0; oy < oy1; ++oy) {
              const Index ioff = (oy * g.s + ky * g.d - g.p) * w + xoff;
              const double* grow = gc + oy * wo;
              const double* irow = ic + ioff;
              if (g.s == 1) {
                if (gic) {
                  double* girow = gic + ioff;
                  for (Index ox = ox0; ox < ox1; ++ox) girow[ox] += wv * grow[ox];
                }
                for (Index ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * irow[ox];
              } else {
                if (gic) {
                  double* girow = gic + ioff;
                  for (Index ox = ox0; ox < ox1; ++ox) girow[ox * g.s] += wv * grow[ox];
                }
                for (Index ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * irow[ox * g.s];
              }
            }
            if (gw) gw[widx] += wacc;
          }
        }
      }
    }
  };
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result({spec.out_channels, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)},
                        std::move(out), "conv2d", std::move(inputs), fn);
}

// ---------------------------------------------------------------------------
// conv3d

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec) {
  check_conv_args(input, weight, bias, spec, 3, "conv3d");
  const Index ci_n = static_cast<Index>(spec.in_channels);
  const Index co_n = static_cast<Index>(spec.out_channels);
  const Index dd = static_cast<Index>(input.dim(1));
  const Index h = static_cast<Index>(input.dim(2));
  const Index w = static_cast<Index>(input.dim(3));
  const Index dout = static_cast<Index>(spec.output_extent(input.dim(1)));
  const Index ho = static_cast<Index>(spec.output_extent(input.dim(2)));
  const Index wo = static_cast<Index>(spec.output_extent(input.dim(3)));
  const ConvGeometry g{static_cast<Index>(spec.kernel), static_cast<Index>(spec.stride),
                       static_cast<Index>(spec.dilation), static_cast<Index>(spec.pad())};
  const Index in_vol = dd * h * w;
  const Index out_vol = dout * ho * wo;

  // Visits every (output row, input row, weight) triple; `row` receives the
  // contiguous x-range so forward and backward share the indexing.
  auto visit = [=](const double* w_v, auto&& row) {
    for (Index co = 0; co < co_n; ++co) {
      for (Index ci = 0; ci < ci_n; ++ci) {
        for (Index kz = 0; kz < g.k; ++kz) {
          const auto [oz0, oz1] = valid_range(dout, g.s, kz * g.d - g.p, dd);
          for (Index ky = 0; ky < g.k; ++ky) {
            const auto [oy0, oy1] = valid_range(ho, g.s, ky * g.d - g.p, h);
            for (Index kx = 0; kx < g.k; ++kx) {
              const Index widx = (((co * ci_n + ci) * g.k + kz) * g.k + ky) * g.k + kx;
              const Index xoff = kx * g.d - g.p;
              const auto [ox0, ox1] = valid_range(wo, g.s, xoff, w);
              for (Index oz = oz0; oz < oz1; ++oz) {
                const Index iz = oz * g.s + kz * g.d - g.p;
                for (Index oy = oy0; oy < oy1; ++oy) {
                  const Index iy = oy * g.s + ky * g.d - g.p;
                  row(co * out_vol + (oz * ho + oy) * wo, ci * in_vol + (iz * h + iy) * w + xoff,
                      widx, w_v ? w_v[widx] : 0.0, ox0, ox1);
                }
              }
            }
          }
        }
      }
    }
  };

  std::vector<double> out(static_cast<std::size_t>(co_n * out_vol), 0.0);
  if (bias.defined()) {
    for (Index co = 0; co < co_n; ++co) {
      std::fill(out.begin() + co * out_vol, out.begin() + (co + 1) * out_vol,
                bias.data()[static_cast<std::size_t>(co)]);
    }
  }
  {
    const double* in = input.data().data();
    double* o = out.data();
    const Index s = g.s;
    visit(weight.data().data(), [&](Index obase, Index ibase, Index, double wv, Index x0, Index x1) {
      for (Index ox = x0; ox < x1; ++ox) o[obase + ox] += wv * in[ibase + ox * s];
    });
  }

  auto fn = [=](const BackwardContext& ctx) {
    const double* go = ctx.out_grad().data();
    const double* in_v = ctx.value(0).data();
    double* gi = ctx.wants(0) ? ctx.grad(0).data() : nullptr;
    double* gw = ctx.wants(1) ? ctx.grad(1).data() : nullptr;
    if (ctx.input_count() > 2 && ctx.wants(2)) {
      double* gb = ctx.grad(2).data();
      for (Index co = 0; co < co_n; ++co) {
        double acc = 0.0;
        for (Index i = 0; i < out_vol; ++i) acc += go[co * out_vol + i];
        gb[co] += acc;
      }
    }
    const Index s = g.s;
    visit(ctx.value(1).data(), [&](Index obase, Index ibase, Index widx, double wv, Index x0, Index x1) {
      double wacc = 0.0;
      for (Index ox = x0; ox < x1; ++ox) {
        const double gv = go[obase + ox];
        if (gi) gi[ibase + ox * s] += wv * gv;
        wacc += gv * in_v[ibase + ox * s];
      }
      if (gw) gw[widx] += wacc;
    });
  };
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result({spec.out_channels, static_cast<std::size_t>(dout),
                         static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)},
                        std::move(out), "conv3d", std::move(inputs), fn);
}

// ---------------------------------------------------------------------------

Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ParameterError("leaky_relu: slope must lie in (0,1)");
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] >= 0.0 ? xv[i] : slope * xv[i];
  return make_op_result(x.shape(), std::move(out), "leaky_relu", {x},
                        [slope](const BackwardContext& ctx) {
                          if (!ctx.wants(0)) return;
                          auto g = ctx.grad(0);
                          auto v = ctx.value(0);
                          auto go = ctx.out_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            g[i] += v[i] >= 0.0 ? go[i] : slope * go[i];
                          }
                        });
}

Tensor softmax_axis(const Tensor& x, std::size_t axis, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("softmax_axis: temperature must be positive");
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax_axis: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp((xv[base + k * inner] - mx) / temperature);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  return make_op_result(s, std::move(out), "softmax_axis", {x},
                        [=](const BackwardContext& ctx) {
                          if (!ctx.wants(0)) return;
                          auto g = ctx.grad(0);
                          auto y = ctx.out_value();
                          auto go = ctx.out_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t i = 0; i < inner; ++i) {
                              const std::size_t base = o * n * inner + i;
                              double dot = 0.0;
                              for (std::size_t k = 0; k < n; ++k) {
                                dot += go[base + k * inner] * y[base + k * inner];
                              }
                              for (std::size_t k = 0; k < n; ++k) {
                                const std::size_t j = base + k * inner;
                                g[j] += y[j] * (go[j] - dot) / temperature;
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------

Tensor sample_bilinear2d(const Tensor& src, const Tensor& coords) {
  if (src.rank() != 3) throw ShapeError("sample_bilinear2d: src must be [C,H,W], got " + shape_str(src.shape()));
  if (coords.rank() != 3 || coords.dim(0) != 2) {
    throw ShapeError("sample_bilinear2d: coords must be [2,H,W], got " + shape_str(coords.shape()));
  }
  const Index c_n = static_cast<Index>(src.dim(0));
  const Index h = static_cast<Index>(src.dim(1));
  const Index w = static_cast<Index>(src.dim(2));
  const Index n = static_cast<Index>(coords.dim(1) * coords.dim(2));
  const double* sv = src.data().data();
  const double* cv = coords.data().data();

  std::vector<double> out(static_cast<std::size_t>(c_n * n), 0.0);
  for (Index p = 0; p < n; ++p) {
    const double x = cv[p];
    const double y = cv[n + p];
    const double xf = std::floor(x), yf = std::floor(y);
    const Index x0 = static_cast<Index>(xf), y0 = static_cast<Index>(yf);
    const double fx = x - xf, fy = y - yf;
    const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const Index xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const Index ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int t = 0; t < 4; ++t) {
      if (xs[t] < 0 || xs[t] >= w || ys[t] < 0 || ys[t] >= h || wts[t] == 0.0) continue;
      for (Index c = 0; c < c_n; ++c) out[c * n + p] += wts[t] * sv[(c * h + ys[t]) * w + xs[t]];
    }
  }

  auto fn = [=](const BackwardContext& ctx) {
    const double* go = ctx.out_grad().data();
    const double* s_v = ctx.value(0).data();
    const double* c_v = ctx.value(1).data();
    double* gs = ctx.wants(0) ? ctx.grad(0).data() : nullptr;
    double* gc = ctx.wants(1) ? ctx.grad(1).data() : nullptr;
    for (Index p = 0; p < n; ++p) {
      const double x = c_v[p];
      const double y = c_v[n + p];
      const double xf = std::floor(x), yf = std::floor(y);
      const Index x0 = static_cast<Index>(xf), y0 = static_cast<Index>(yf);
      const double fx = x - xf, fy = y - yf;
      const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const double dwx[4] = {-(1 - fy), (1 - fy), -fy, fy};
      const double dwy[4] = {-(1 - fx), -fx, (1 - fx), fx};
      const Index xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const Index ys[4] = {y0, y0, y0 + 1, y0 + 1};
      double gx = 0.0, gy = 0.0;
      for (int t = 0; t < 4; ++t) {
        if (xs[t] < 0 || xs[t] >= w || ys[t] < 0 || ys[t] >= h) continue;
        for (Index c = 0; c < c_n; ++c) {
          const Index si = (c * h + ys[t]) * w + xs[t];
          const double g = go[c * n + p];
          if (gs) gs[si] += wts[t] * g;
          gx += dwx[t] * s_v[si] * g;
          gy += dwy[t] * s_v[si] * g;
        }
      }
      if (gc) {
        gc[p] += gx;
        gc[n + p] += gy;
      }
    }
  };
  return make_op_result({src.dim(0), coords.dim(1), coords.dim(2)}, std::move(out),
                        "sample_bilinear2d", {src, coords}, fn);
}

Tensor identity_grid(std::size_t height, std::size_t width) {
  Tensor g({2, height, width});
  auto d = g.data();
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      d[y * width + x] = static_cast<double>(x);
      d[height * width + y * width + x] = static_cast<double>(y);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_op_result(x.shape(), std::move(out), name, {x}, [bwd](const BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    auto g = ctx.grad(0);
    auto v = ctx.value(0);
    auto y = ctx.out_value();
    auto go = ctx.out_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bwd(v[i], y[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op_result(a.shape(), std::move(out), "add", {a, b}, [](const BackwardContext& ctx) {
    auto go = ctx.out_grad();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.wants(k)) continue;
      auto g = ctx.grad(k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op_result(a.shape(), std::move(out), "sub", {a, b}, [](const BackwardContext& ctx) {
    auto go = ctx.out_grad();
    if (ctx.wants(0)) {
      auto g = ctx.grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    }
    if (ctx.wants(1)) {
      auto g = ctx.grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op_result(a.shape(), std::move(out), "mul", {a, b}, [](const BackwardContext& ctx) {
    auto go = ctx.out_grad();
    if (ctx.wants(0)) {
      auto g = ctx.grad(0);
      auto o = ctx.value(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * o[i];
    }
    if (ctx.wants(1)) {
      auto g = ctx.grad(1);
      auto o = ctx.value(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * o[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  return unary(x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor log_eps(const Tensor& x, double eps) {
  for (double v : x.data()) {
    if (!(v + eps > 0.0)) throw NumericError("log_eps: argument not above -eps");
  }
  return unary(x, "log_eps", [eps](double v) { return std::log(v + eps); },
               [eps](double v, double) { return 1.0 / (v + eps); });
}

Tensor affine_map(const Tensor& x, const Tensor& params) {
  if (params.size() != 2) throw ShapeError("affine_map: params must hold [alpha, beta]");
  const double a = params.data()[0], b = params.data()[1];
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a + b * x.data()[i];
  return make_op_result(x.shape(), std::move(out), "affine_map", {x, params},
                        [](const BackwardContext& ctx) {
                          auto go = ctx.out_grad();
                          auto xv = ctx.value(0);
                          const double beta = ctx.value(1)[1];
                          if (ctx.wants(0)) {
                            auto g = ctx.grad(0);
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += beta * go[i];
                          }
                          if (ctx.wants(1)) {
                            double ga = 0.0, gb = 0.0;
                            for (std::size_t i = 0; i < go.size(); ++i) {
                              ga += go[i];
                              gb += go[i] * xv[i];
                            }
                            auto g = ctx.grad(1);
                            g[0] += ga;
                            g[1] += gb;
                          }
                        });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_op_result({1}, {acc}, "sum", {x}, [](const BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const double go = ctx.out_grad()[0];
    for (double& g : ctx.grad(0)) g += go;
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor weighted_sum(const Tensor& x, const Tensor& w) {
  require_same_shape(x, w, "weighted_sum");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i] * w.data()[i];
  return make_op_result({1}, {acc}, "weighted_sum", {x, w}, [](const BackwardContext& ctx) {
    const double go = ctx.out_grad()[0];
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.wants(k)) continue;
      auto g = ctx.grad(k);
      auto o = ctx.value(1 - k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * o[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = shape;
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) {
      throw ShapeError("concat: incompatible shapes " + shape_str(p.shape()) + " and " +
                       shape_str(shape));
    }
    total += p.dim(axis);
  }
  shape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

  std::vector<double> out(shape_size(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * chunk, chunk, out.data() + o * total * inner + off * inner);
    }
    off += p.dim(axis);
  }
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.dim(axis));
  return make_op_result(shape, std::move(out), "concat", parts,
                        [=](const BackwardContext& ctx) {
                          auto go = ctx.out_grad();
                          for (std::size_t k = 0; k < extents.size(); ++k) {
                            if (!ctx.wants(k)) continue;
                            auto g = ctx.grad(k);
                            const std::size_t chunk = extents[k] * inner;
                            for (std::size_t o = 0; o < outer; ++o) {
                              const double* src = go.data() + o * total * inner + offsets[k] * inner;
                              double* dst = g.data() + o * chunk;
                              for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op_result(std::move(shape), std::move(out), "reshape", {x},
                        [](const BackwardContext& ctx) {
                          if (!ctx.wants(0)) return;
                          auto g = ctx.grad(0);
                          auto go = ctx.out_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
                        });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch");
  std::vector<bool> used(r, false);
  for (auto p : perm) {
    if (p >= r || used[p]) throw ShapeError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  // Source offset for each destination element.
  std::vector<std::size_t> src_index(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < src_index.size(); ++flat) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_strides[perm[i]];
    src_index[flat] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[src_index[i]];
  return make_op_result(out_shape, std::move(out), "permute", {x},
                        [src_index = std::move(src_index)](const BackwardContext& ctx) {
                          if (!ctx.wants(0)) return;
                          auto g = ctx.grad(0);
                          auto go = ctx.out_grad();
                          for (std::size_t i = 0; i < go.size(); ++i) g[src_index[i]] += go[i];
                        });
}

Tensor slice0(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.dim(0)) throw ShapeError("slice0: invalid range");
  Shape shape = x.shape();
  const std::size_t inner = x.size() / shape[0];
  shape[0] = end - begin;
  std::vector<double> out(x.data().begin() + static_cast<Index>(begin * inner),
                          x.data().begin() + static_cast<Index>(end * inner));
  return make_op_result(shape, std::move(out), "slice0", {x}, [=](const BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    auto g = ctx.grad(0);
    auto go = ctx.out_grad();
    for (std::size_t i = 0; i < go.size(); ++i) g[begin * inner + i] += go[i];
  });
}

Tensor sum_last_axis(const Tensor& x) {
  Shape shape = x.shape();
  if (shape.empty()) throw ShapeError("sum_last_axis on a rank-0 tensor");
  const std::size_t n = shape.back();
  shape.pop_back();
  if (shape.empty()) shape.push_back(1);
  const std::size_t rows = x.size() / n;
  std::vector<double> out(rows, 0.0);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < n; ++k) out[r] += xv[r * n + k];
  }
  return make_op_result(shape, std::move(out), "sum_last_axis", {x}, [n](const BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    auto g = ctx.grad(0);
    auto go = ctx.out_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i / n];
  });
}

Tensor renormalize_last_axis(const Tensor& x, double eps) {
  const Shape& shape = x.shape();
  const std::size_t n = shape.back();
  const std::size_t rows = x.size() / n;
  const auto xv = x.data();
  std::vector<double> out(x.size());
  std::vector<double> sums(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += xv[r * n + k];
    sums[r] = s;
    for (std::size_t k = 0; k < n; ++k) {
      out[r * n + k] = s < eps ? 1.0 / static_cast<double>(n) : xv[r * n + k] / s;
    }
  }
  return make_op_result(shape, std::move(out), "renormalize_last_axis", {x},
                        [n, rows, eps, sums = std::move(sums)](const BackwardContext& ctx) {
                          if (!ctx.wants(0)) return;
                          auto g = ctx.grad(0);
                          auto go = ctx.out_grad();
                          auto y = ctx.out_value();
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (sums[r] < eps) continue;
                            double dot = 0.0;
                            for (std::size_t k = 0; k < n; ++k) dot += go[r * n + k] * y[r * n + k];
                            for (std::size_t k = 0; k < n; ++k) {
                              g[r * n + k] += (go[r * n + k] - dot) / sums[r];
                            }
                          }
                        });
}

}  // namespace du2
