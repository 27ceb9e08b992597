#include "du2/mvs.hpp"

#include <algorithm>
#include <cmath>

#include "du2/errors.hpp"

namespace du2 {

void CameraView::validate() const {
  const auto& k = intrinsics;
  if (!(k(0, 0) > 0 && k(1, 1) > 0) || k(1, 0) != 0 || k(2, 0) != 0 || k(2, 1) != 0 || k(2, 2) != 1) {
    throw ParameterError("camera intrinsics must be upper triangular with positive focal lengths");
  }
  if (!(rotation.transpose() * rotation).isApprox(Eigen::Matrix3d::Identity(), 1e-9)) {
    throw ParameterError("camera rotation is not orthonormal");
  }
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("camera image must be [3,H,W], got " + shape_str(image.shape()));
  }
}

std::vector<double> inverse_depth_planes(double z_min, double z_max, std::size_t n) {
  if (!(z_min > 0) || !(z_max > z_min) || n < 2) {
    throw ParameterError("inverse_depth_planes: need 0 < z_min < z_max and n >= 2");
  }
  std::vector<double> z(n);
  const double a = 1.0 / z_min, b = 1.0 / z_max;
  for (std::size_t k = 0; k < n; ++k) {
    z[k] = 1.0 / (a + static_cast<double>(k) / static_cast<double>(n - 1) * (b - a));
  }
  return z;
}

Tensor gray_guide(const Tensor& rgb) {
  const std::size_t h = rgb.dim(1), w = rgb.dim(2), n = h * w;
  Tensor g({h, w});
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = 255.0 * (0.299 * rgb[i] + 0.587 * rgb[n + i] + 0.114 * rgb[2 * n + i]);
  }
  return g;
}

Tensor cross_bilateral_filter(const Tensor& volume, const Tensor& guide, const BilateralParams& params) {
  if (volume.rank() != 3 || guide.rank() != 2 || guide.dim(0) != volume.dim(0) || guide.dim(1) != volume.dim(1)) {
    throw ShapeError("cross_bilateral_filter: volume " + shape_str(volume.shape()) + " and guide " +
                     shape_str(guide.shape()) + " disagree");
  }
  const long h = static_cast<long>(volume.dim(0)), w = static_cast<long>(volume.dim(1));
  const long n = static_cast<long>(volume.dim(2));
  const long r = static_cast<long>(std::lround(3.0 * params.sigma_spatial));
  const long side = 2 * r + 1;
  const double inv_s = 1.0 / (2.0 * params.sigma_spatial * params.sigma_spatial);
  const double inv_r = std::isinf(params.sigma_range) ? 0.0 : 1.0 / (2.0 * params.sigma_range * params.sigma_range);

  std::vector<double> spatial(static_cast<std::size_t>(side * side));
  for (long dy = -r; dy <= r; ++dy) {
    for (long dx = -r; dx <= r; ++dx) {
      spatial[(dy + r) * side + dx + r] = std::exp(-static_cast<double>(dx * dx + dy * dy) * inv_s);
    }
  }
  const double* g = guide.data().data();
  const double* v = volume.data().data();
  Tensor out(volume.shape());
  double* o = out.data().data();
  std::vector<double> weights(static_cast<std::size_t>(side * side));
  std::vector<long> offsets(static_cast<std::size_t>(side * side));
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      std::size_t taps = 0;
      double norm = 0.0;
      const double gp = g[y * w + x];
      for (long dy = -r; dy <= r; ++dy) {
        const long yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (long dx = -r; dx <= r; ++dx) {
          const long xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const double dg = g[yy * w + xx] - gp;
          const double wt = spatial[(dy + r) * side + dx + r] * std::exp(-dg * dg * inv_r);
          weights[taps] = wt;
          offsets[taps] = (yy * w + xx) * n;
          norm += wt;
          ++taps;
        }
      }
      double* cell = o + (y * w + x) * n;
      for (std::size_t t = 0; t < taps; ++t) {
        const double wt = weights[t] / norm;
        const double* src = v + offsets[t];
        for (long k = 0; k < n; ++k) cell[k] += wt * src[k];
      }
    }
  }
  return out;
}

namespace {

double bilinear(const Tensor& img, std::size_t c, double x, double y) {
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  const long x0 = static_cast<long>(std::floor(x)), y0 = static_cast<long>(std::floor(y));
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const long x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double* p = img.data().data() + c * static_cast<std::size_t>(h * w);
  return (1 - fy) * ((1 - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
         fy * ((1 - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
}

}  // namespace

PlaneSweepResult plane_sweep_depth(const CameraView& reference, const std::vector<CameraView>& neighbors,
                                   const std::vector<double>& planes, const BilateralParams& params) {
  if (neighbors.empty()) throw ParameterError("plane_sweep_depth: no neighbor views");
  if (planes.empty()) throw ParameterError("plane_sweep_depth: no planes");
  reference.validate();
  for (const auto& nb : neighbors) nb.validate();

  const std::size_t h = reference.image.dim(1), w = reference.image.dim(2), n = planes.size();
  const double kmax = neighbors.size();
  const double max_cost = 3.0 * 255.0 * kmax;
  const Eigen::Matrix3d k_ref_inv = reference.intrinsics.inverse();
  const Eigen::Vector3d e3(0, 0, 1);

  Tensor cost({h, w, n});
  std::vector<double> acc(h * w), seen(h * w);
  for (std::size_t k = 0; k < n; ++k) {
    std::fill(acc.begin(), acc.end(), 0.0);
    std::fill(seen.begin(), seen.end(), 0.0);
    for (const auto& nb : neighbors) {
      const Eigen::Matrix3d r_rel = nb.rotation * reference.rotation.transpose();
      const Eigen::Vector3d t_rel = nb.translation - r_rel * reference.translation;
      const Eigen::Matrix3d hom = nb.intrinsics * (r_rel + t_rel * e3.transpose() / planes[k]) * k_ref_inv;
      const long nh = static_cast<long>(nb.image.dim(1)), nw = static_cast<long>(nb.image.dim(2));
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const Eigen::Vector3d q = hom * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0);
          if (!(q.z() > 0)) continue;  // plane behind the neighbor
          const double u = q.x() / q.z(), v = q.y() / q.z();
          if (u < 0 || v < 0 || u > static_cast<double>(nw - 1) || v > static_cast<double>(nh - 1)) continue;
          double sad = 0.0;
          for (std::size_t c = 0; c < 3; ++c) {
            sad += std::abs(reference.image[(c * h + y) * w + x] - bilinear(nb.image, c, u, v));
          }
          acc[y * w + x] += 255.0 * sad;
          seen[y * w + x] += 1.0;
        }
      }
    }
    for (std::size_t p = 0; p < h * w; ++p) {
      cost[p * n + k] = seen[p] > 0 ? acc[p] / seen[p] * kmax : max_cost;
    }
  }

  PlaneSweepResult res;
  res.cost = cost;
  res.filtered = cross_bilateral_filter(cost, gray_guide(reference.image), params);
  res.depth = Tensor({h, w});
  res.index.resize(h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < n; ++k) {
      if (res.filtered[p * n + k] < res.filtered[p * n + best]) best = k;
    }
    res.index[p] = best;
    res.depth[p] = planes[best];
  }
  return res;
}

Tensor consistency_scores(const Tensor& depth_ref, const CameraView& reference,
                          const std::vector<Tensor>& depth_neighbors, const std::vector<CameraView>& neighbors,
                          double cutoff_px) {
  if (depth_neighbors.size() != neighbors.size()) {
    throw ShapeError("consistency_confidence: one depth map per neighbor is required");
  }
  const std::size_t h = depth_ref.dim(0), w = depth_ref.dim(1), kn = neighbors.size();
  const Eigen::Matrix3d k_inv = reference.intrinsics.inverse();
  const Eigen::Matrix3d r_ref_t = reference.rotation.transpose();
  Tensor scores({kn, h, w});
  for (std::size_t j = 0; j < kn; ++j) {
    const auto& nb = neighbors[j];
    const Tensor& dn = depth_neighbors[j];
    const long nh = static_cast<long>(dn.dim(0)), nw = static_cast<long>(dn.dim(1));
    const double baseline = (nb.center() - reference.center()).norm();
    const double focal = nb.intrinsics(0, 0);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double z = depth_ref[y * w + x];
        const Eigen::Vector3d pc = z * (k_inv * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0));
        const Eigen::Vector3d pw = r_ref_t * (pc - reference.translation);
        const Eigen::Vector3d pn = nb.rotation * pw + nb.translation;
        double s = 0.0;
        if (pn.z() > 0) {
          const Eigen::Vector3d q = nb.intrinsics * pn;
          const long u = std::lround(q.x() / q.z()), v = std::lround(q.y() / q.z());
          if (u >= 0 && v >= 0 && u < nw && v < nh) {
            const double z_nb = dn[static_cast<std::size_t>(v * nw + u)];
            const double err = focal * baseline * std::abs(1.0 / pn.z() - 1.0 / z_nb);
            s = std::max(0.0, 1.0 - err / cutoff_px);
          }
        }
        scores[(j * h + y) * w + x] = s;
      }
    }
  }
  return scores;
}

Tensor consistency_confidence(const Tensor& depth_ref, const CameraView& reference,
                              const std::vector<Tensor>& depth_neighbors, const std::vector<CameraView>& neighbors,
                              double cutoff_px) {
  const std::size_t h = depth_ref.dim(0), w = depth_ref.dim(1);
  Tensor conf({h, w});
  if (neighbors.size() < 2) return conf;
  const Tensor s = consistency_scores(depth_ref, reference, depth_neighbors, neighbors, cutoff_px);
  const std::size_t kn = neighbors.size();
  for (std::size_t p = 0; p < h * w; ++p) {
    double first = 0.0, second = 0.0;
    for (std::size_t j = 0; j < kn; ++j) {
      const double v = s[j * h * w + p];
      if (v > first) {
        second = first;
        first = v;
      } else if (v > second) {
        second = v;
      }
    }
    conf[p] = first * second;
  }
  return conf;
}

MultiviewGroundTruth multiview_ground_truth(const std::vector<CameraView>& views, const std::vector<double>& planes,
                                            const BilateralParams& params, double cutoff_px) {
  if (views.size() < 3) throw ParameterError("multiview_ground_truth: need a reference and at least two neighbors");
  MultiviewGroundTruth gt;
  for (std::size_t i = 0; i < views.size(); ++i) {
    std::vector<CameraView> others;
    for (std::size_t j = 0; j < views.size(); ++j) {
      if (j != i) others.push_back(views[j]);
    }
    gt.depth.push_back(plane_sweep_depth(views[i], others, planes, params).depth);
  }
  const std::vector<CameraView> neighbors(views.begin() + 1, views.end());
  const std::vector<Tensor> neighbor_depth(gt.depth.begin() + 1, gt.depth.end());
  gt.confidence = consistency_confidence(gt.depth[0], views[0], neighbor_depth, neighbors, cutoff_px);
  return gt;
}

Tensor occlusion_confidence(const Tensor& d_r, const Tensor& d_l, const Tensor& c_r, const Tensor& c_l,
                            double delta) {
  if (d_r.rank() != 2 || d_r.shape() != d_l.shape() || d_r.shape() != c_r.shape() || d_r.shape() != c_l.shape()) {
    throw ShapeError("occlusion_confidence: inputs must share one [H,W] shape");
  }
  const long h = static_cast<long>(d_r.dim(0)), w = static_cast<long>(d_r.dim(1));
  Tensor out(d_r.shape());
  for (long y = 0; y < h; ++y) {
    const long row = y * w;
    for (long x = 0; x < w; ++x) {
      const double dr = d_r[row + x];
      const long xp = std::lround(static_cast<double>(x) + dr);
      if (xp < 0 || xp >= w) continue;
      const double dl = d_l[row + xp];
      if (std::abs(dr + dl) <= delta) continue;
      const long xpp = std::lround(static_cast<double>(xp) + dl);
      if (xpp < 0 || xpp >= w) continue;
      if (std::abs(dl + d_r[row + xpp]) > delta) continue;
      if (!(std::abs(dl) > std::abs(dr))) continue;
      out[row + x] = c_r[row + x] * c_l[row + xp];
    }
  }
  return out;
}

}  // namespace du2
