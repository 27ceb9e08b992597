#include "du2/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "du2/errors.hpp"
#include "du2/image_io.hpp"
#include "du2/layers.hpp"

namespace du2 {

namespace {

std::uint64_t hash3(std::int64_t x, std::int64_t y, std::uint64_t seed) {
  std::uint64_t z = seed ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL) ^
                    (static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double lattice(std::int64_t x, std::int64_t y, std::uint64_t seed) {
  return static_cast<double>(hash3(x, y, seed) >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(double u, double v, std::uint64_t seed) {
  const double uf = std::floor(u), vf = std::floor(v);
  const auto x = static_cast<std::int64_t>(uf), y = static_cast<std::int64_t>(vf);
  const double sx = smooth(u - uf), sy = smooth(v - vf);
  const double a = lattice(x, y, seed), b = lattice(x + 1, y, seed);
  const double c = lattice(x, y + 1, seed), d = lattice(x + 1, y + 1, seed);
  return (1 - sy) * ((1 - sx) * a + sx * b) + sy * ((1 - sx) * c + sx * d);
}

// Three octaves, normalized to [0, 1].
double fbm(double u, double v, std::uint64_t seed) {
  double acc = 0.0, amp = 1.0, norm = 0.0, f = 1.0;
  for (int o = 0; o < 3; ++o) {
    acc += amp * value_noise(u * f, v * f, seed + static_cast<std::uint64_t>(o) * 7919);
    norm += amp;
    amp *= 0.5;
    f *= 2.0;
  }
  return acc / norm;
}

Eigen::Vector3d random_color(Rng& rng) { return {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)}; }

double luma(const Eigen::Vector3d& c) { return 0.299 * c.x() + 0.587 * c.y() + 0.114 * c.z(); }

Texture random_texture(Rng& rng, TextureKind kind) {
  Texture t;
  t.kind = kind;
  t.seed = rng.next();
  t.period = kind == TextureKind::checker ? rng.uniform(5.0, 9.0) : rng.uniform(3.0, 7.0);
  do {
    t.color_a = random_color(rng);
    t.color_b = random_color(rng);
  } while (std::abs(luma(t.color_a) - luma(t.color_b)) < 0.35);
  return t;
}

TextureKind random_kind(Rng& rng) {
  const double u = rng.uniform(0.0, 1.0);
  if (u < 0.5) return TextureKind::noise;
  if (u < 0.7) return TextureKind::checker;
  if (u < 0.85) return TextureKind::stripes_vertical;
  return TextureKind::stripes_horizontal;
}

Eigen::Matrix3d homography_from_points(const std::array<Eigen::Vector2d, 4>& src,
                                       const std::array<Eigen::Vector2d, 4>& dst) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x(), y = src[i].y(), u = dst[i].x(), v = dst[i].y();
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return m;
}

Eigen::Vector2d apply(const Eigen::Matrix3d& m, double x, double y) {
  const Eigen::Vector3d q = m * Eigen::Vector3d(x, y, 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

Pinhole right_camera(const SceneConfig& c) {
  return {c.focal, 0.5 * static_cast<double>(c.width - 1), 0.5 * static_cast<double>(c.height - 1), Eigen::Vector3d::Zero()};
}

Tensor render_rgb(const std::vector<Layer>& layers, const Pinhole& cam, std::size_t h, std::size_t w, Tensor* depth) {
  Tensor img({3, h, w});
  if (depth) *depth = Tensor({h, w});
  const std::size_t n = h * w;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      Eigen::Vector2d tex;
      const int i = cast_ray(layers, cam, static_cast<double>(x), static_cast<double>(y), &tex);
      if (i < 0) continue;
      const Eigen::Vector3d c = layers[i].texture.rgb(tex.x(), tex.y());
      for (int k = 0; k < 3; ++k) img[k * n + y * w + x] = c[k];
      if (depth) (*depth)[y * w + x] = layers[i].depth;
    }
  }
  return img;
}

}  // namespace

TextureKind parse_texture(const std::string& name) {
  if (name == "noise") return TextureKind::noise;
  if (name == "stripes-horizontal") return TextureKind::stripes_horizontal;
  if (name == "stripes-vertical") return TextureKind::stripes_vertical;
  if (name == "checker") return TextureKind::checker;
  throw ConfigError("unknown texture '" + name + "'");
}

std::string to_string(TextureKind kind) {
  switch (kind) {
    case TextureKind::noise: return "noise";
    case TextureKind::stripes_horizontal: return "stripes-horizontal";
    case TextureKind::stripes_vertical: return "stripes-vertical";
    case TextureKind::checker: return "checker";
  }
  return "?";
}

SceneFamily parse_family(const std::string& name) {
  if (name == "occluders") return SceneFamily::occluders;
  if (name == "stripes-band") return SceneFamily::stripes_band;
  if (name == "plane") return SceneFamily::plane;
  throw ConfigError("unknown scene family '" + name + "' (expected occluders, stripes-band or plane)");
}

std::string to_string(SceneFamily family) {
  switch (family) {
    case SceneFamily::occluders: return "occluders";
    case SceneFamily::stripes_band: return "stripes-band";
    case SceneFamily::plane: return "plane";
  }
  return "?";
}

Eigen::Vector3d Texture::rgb(double u, double v) const {
  double n = 0.0;
  switch (kind) {
    case TextureKind::noise:
      n = fbm(u / period, v / period, seed);
      break;
    case TextureKind::stripes_horizontal:
      n = fbm(0.0, v / period, seed);
      break;
    case TextureKind::stripes_vertical:
      n = fbm(u / period, 0.0, seed);
      break;
    case TextureKind::checker: {
      const double a = 0.5 + 0.5 * std::tanh(4.0 * std::sin(M_PI * u / period));
      const double b = 0.5 + 0.5 * std::tanh(4.0 * std::sin(M_PI * v / period));
      n = a * b + (1 - a) * (1 - b);
      break;
    }
  }
  return color_a + (color_b - color_a) * n;
}

double Texture::gray(double u, double v) const { return luma(rgb(u, v)); }

int cast_ray(const std::vector<Layer>& layers, const Pinhole& cam, double u, double v, Eigen::Vector2d* tex) {
  const double dx = (u - cam.cx) / cam.focal, dy = (v - cam.cy) / cam.focal;
  int best = -1;
  double best_depth = std::numeric_limits<double>::infinity();
  Eigen::Vector2d best_tex;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    const double lambda = l.depth - cam.center.z();
    if (!(lambda > 0) || !(l.depth < best_depth)) continue;
    const double px = cam.center.x() + lambda * dx, py = cam.center.y() + lambda * dy;
    // Right camera sits at the origin with the same intrinsics.
    const double tu = cam.focal * px / l.depth + cam.cx, tv = cam.focal * py / l.depth + cam.cy;
    if (!l.covers(tu, tv)) continue;
    best = static_cast<int>(i);
    best_depth = l.depth;
    best_tex = {tu, tv};
  }
  if (tex && best >= 0) *tex = best_tex;
  return best;
}

Tensor render_dp(const std::vector<Layer>& layers, const Pinhole& right, const DpModel& dp, std::size_t dp_height,
                 std::size_t dp_width, DpView view) {
  constexpr int kGrid = 12;  // quadrature points per axis over the disc's bounding box
  const Eigen::Matrix3d inv = dp.homography.inverse();
  Tensor out({1, dp_height, dp_width});
  for (std::size_t b = 0; b < dp_height; ++b) {
    for (std::size_t a = 0; a < dp_width; ++a) {
      const Eigen::Vector2d p = apply(inv, static_cast<double>(a), static_cast<double>(b));
      Eigen::Vector2d tex;
      const int i = cast_ray(layers, right, p.x(), p.y(), &tex);
      if (i < 0) continue;
      const Layer& layer = layers[i];
      if (view == DpView::sharp) {
        out[b * dp_width + a] = layer.texture.gray(p.x(), p.y());
        continue;
      }
      const double d = dp.disparity(layer.depth);
      const double r = std::abs(d);
      const bool positive = d >= 0;
      double acc = 0.0;
      int count = 0;
      for (int ky = 0; ky < kGrid; ++ky) {
        const bool upper = ky < kGrid / 2;
        if (view == DpView::top && upper != positive) continue;
        if (view == DpView::bottom && upper == positive) continue;
        const double oy = ((ky + 0.5) / kGrid * 2.0 - 1.0) * r;
        for (int kx = 0; kx < kGrid; ++kx) {
          const double ox = ((kx + 0.5) / kGrid * 2.0 - 1.0) * r;
          const double su = (kx + 0.5) / kGrid * 2.0 - 1.0, sv = (ky + 0.5) / kGrid * 2.0 - 1.0;
          if (su * su + sv * sv > 1.0) continue;
          const Eigen::Vector2d q = apply(inv, static_cast<double>(a) + ox, static_cast<double>(b) + oy);
          acc += layer.texture.gray(q.x(), q.y());
          ++count;
        }
      }
      out[b * dp_width + a] = acc / count;
    }
  }
  return out;
}

std::vector<Layer> scene_layers(const SceneConfig& c) {
  if (!c.layers.empty()) return c.layers;
  Rng rng(c.seed);
  Rng tex_rng = rng.fork(1);
  const double fb = c.focal * c.baseline;
  auto snap = [&](double z) { return c.integer_disparity ? fb / std::max(1.0, std::round(fb / z)) : z; };
  auto kind = [&]() { return c.texture ? *c.texture : random_kind(tex_rng); };
  const double w = static_cast<double>(c.width), h = static_cast<double>(c.height);

  std::vector<Layer> layers;
  Layer bg;
  bg.depth = snap(rng.uniform(0.75 * c.z_max, c.z_max));
  bg.texture = random_texture(tex_rng, c.family == SceneFamily::stripes_band ? TextureKind::noise : kind());
  layers.push_back(bg);
  if (c.family == SceneFamily::plane) return layers;

  if (c.family == SceneFamily::stripes_band) {
    Layer band;
    band.depth = snap(rng.uniform(c.z_min, 0.7 * bg.depth));
    const double bh = std::round(rng.uniform(0.4, 0.6) * h);
    band.y0 = std::round(rng.uniform(0.1 * h, 0.9 * h - bh)) - 0.5;
    band.y1 = band.y0 + bh;
    band.texture = random_texture(tex_rng, TextureKind::stripes_horizontal);
    layers.push_back(band);
    return layers;
  }
  const auto count = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(std::max<std::size_t>(1, c.max_occluders))));
  for (std::size_t i = 0; i < count; ++i) {
    Layer occ;
    occ.depth = snap(rng.uniform(c.z_min, 0.8 * bg.depth));
    const double ow = std::round(rng.uniform(0.15, 0.45) * w), oh = std::round(rng.uniform(0.25, 0.6) * h);
    occ.x0 = std::round(rng.uniform(-0.1 * w, w - 0.5 * ow)) - 0.5;
    occ.x1 = occ.x0 + ow;
    occ.y0 = std::round(rng.uniform(-0.1 * h, h - 0.5 * oh)) - 0.5;
    occ.y1 = occ.y0 + oh;
    occ.texture = random_texture(tex_rng, kind());
    layers.push_back(occ);
  }
  return layers;
}

SceneSample generate_scene(const SceneConfig& c) {
  if (!(c.baseline > 0) || !(c.focal > 0)) throw ConfigError("scene: baseline and focal must be positive");
  if (c.width % 8 != 0 || c.height % 8 != 0) throw ConfigError("scene: extents must be multiples of 8");
  SceneSample s;
  s.seed = c.seed;
  s.baseline = c.baseline;
  s.focal = c.focal;
  s.layers = scene_layers(c);
  const std::size_t h = c.height, w = c.width, hd = h * c.dp_scale, wd = w * c.dp_scale;
  const double fb = c.focal * c.baseline;
  Rng rng = Rng(c.seed).fork(2);

  // DP model: explicit, or a random focus distance with |D_DP| <= dp_max_disparity.
  double zmin = std::numeric_limits<double>::infinity(), zmax = 0.0;
  for (const auto& l : s.layers) {
    zmin = std::min(zmin, l.depth);
    zmax = std::max(zmax, l.depth);
  }
  DpModel dp;
  if (c.alpha_dp && c.beta_dp) {
    dp.alpha = *c.alpha_dp;
    dp.beta = *c.beta_dp;
  } else {
    const double z_focus = rng.uniform(c.z_min, c.z_max);
    const double span = std::max(1.0 / c.z_min - 1.0 / z_focus, 1.0 / z_focus - 1.0 / c.z_max);
    dp.beta = c.dp_max_disparity * rng.uniform(0.7, 1.0) / span;
    dp.alpha = -dp.beta / z_focus;
  }
  for (const auto& l : s.layers) {
    const double d = dp.disparity(l.depth);
    if (std::abs(d) > 4.0) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "scene: DP disparity %.3f at depth %.3f m exceeds the [-4, 4] bound", d, l.depth);
      throw ConfigError(buf);
    }
  }
  s.alpha = dp.alpha;
  s.beta = dp.beta;

  // Right pixel -> DP pixel: scale about pixel centers, then a small
  // projective perturbation defined by displaced DP-image corners.
  const double k = static_cast<double>(c.dp_scale);
  Eigen::Matrix3d scale_m;
  scale_m << k, 0, 0.5 * (k - 1), 0, k, 0.5 * (k - 1), 0, 0, 1;
  std::array<Eigen::Vector2d, 4> corners{Eigen::Vector2d(0, 0), Eigen::Vector2d(wd - 1.0, 0),
                                         Eigen::Vector2d(0, hd - 1.0), Eigen::Vector2d(wd - 1.0, hd - 1.0)};
  std::array<Eigen::Vector2d, 4> moved = corners;
  const double m = c.warp_perturbation / std::sqrt(2.0);
  for (auto& p : moved) p += Eigen::Vector2d(rng.uniform(-m, m), rng.uniform(-m, m));
  dp.homography = homography_from_points(corners, moved) * scale_m;

  const Pinhole right = right_camera(c);
  Pinhole left = right;
  left.center = Eigen::Vector3d(-c.baseline, 0, 0);
  Tensor depth_r, depth_l;
  s.right = render_rgb(s.layers, right, h, w, &depth_r);
  s.left = render_rgb(s.layers, left, h, w, &depth_l);

  s.d_gt = Tensor({h, w});
  s.d_gt_left = Tensor({h, w});
  s.dp_gt = Tensor({h, w});
  s.c_gt = Tensor({h, w}, 1.0);
  s.c_occ = Tensor({h, w});
  s.w_r.coords = Tensor({2, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      const double z = depth_r[p];
      s.d_gt[p] = fb / z;
      s.d_gt_left[p] = -fb / depth_l[p];
      s.dp_gt[p] = dp.disparity(z);
      const Eigen::Vector2d q = apply(dp.homography, static_cast<double>(x), static_cast<double>(y));
      s.w_r.coords[p] = q.x();
      s.w_r.coords[h * w + p] = q.y();
      // Occluded in the left view: the left ray through the match hits a nearer layer.
      const double xl = static_cast<double>(x) + fb / z;
      const long xr = std::lround(xl);
      if (xr < 0 || xr >= static_cast<long>(w)) continue;
      const int hit = cast_ray(s.layers, left, xl, static_cast<double>(y), nullptr);
      if (hit >= 0 && s.layers[hit].depth < z) s.c_occ[p] = 1.0;
    }
  }
  s.dp_top = render_dp(s.layers, right, dp, hd, wd, DpView::top);
  s.dp_bottom = render_dp(s.layers, right, dp, hd, wd, DpView::bottom);
  return s;
}

// ---------------------------------------------------------------------------

MultiviewScene generate_multiview(const MultiviewConfig& c) {
  Rng rng(c.seed);
  Rng tex_rng = rng.fork(1);
  const double w = static_cast<double>(c.width), h = static_cast<double>(c.height);
  std::vector<Layer> layers;
  Layer bg;
  bg.depth = rng.uniform(0.8 * c.z_far, c.z_far);
  bg.texture = random_texture(tex_rng, TextureKind::noise);
  layers.push_back(bg);
  for (std::size_t i = 0; i < c.occluders; ++i) {
    Layer occ;
    occ.depth = rng.uniform(c.z_near, 0.75 * bg.depth);
    const double ow = std::round(rng.uniform(0.2, 0.4) * w), oh = std::round(rng.uniform(0.3, 0.5) * h);
    occ.x0 = std::round(rng.uniform(0.1 * w, 0.9 * w - ow)) - 0.5;
    occ.x1 = occ.x0 + ow;
    occ.y0 = std::round(rng.uniform(0.1 * h, 0.9 * h - oh)) - 0.5;
    occ.y1 = occ.y0 + oh;
    occ.texture = random_texture(tex_rng, rng.uniform(0, 1) < 0.7 ? TextureKind::noise : TextureKind::checker);
    layers.push_back(occ);
  }
  const Pinhole ref{c.focal, 0.5 * (w - 1), 0.5 * (h - 1), Eigen::Vector3d::Zero()};
  auto view = [&](const Eigen::Vector3d& center, Tensor* depth) {
    Pinhole cam = ref;
    cam.center = center;
    CameraView v;
    v.image = render_rgb(layers, cam, c.height, c.width, depth);
    v.intrinsics << c.focal, 0, ref.cx, 0, c.focal, ref.cy, 0, 0, 1;
    v.translation = -center;
    return v;
  };
  MultiviewScene s;
  s.reference = view(Eigen::Vector3d::Zero(), &s.depth_reference);
  const double b = c.baseline;
  for (const Eigen::Vector3d& center : {Eigen::Vector3d(b, 0, 0), Eigen::Vector3d(-b, 0, 0),
                                        Eigen::Vector3d(0, b, 0), Eigen::Vector3d(0, -b, 0)}) {
    Tensor d;
    s.neighbors.push_back(view(center, &d));
    s.depth_neighbors.push_back(d);
  }
  return s;
}

namespace {

nlohmann::json camera_json(const CameraView& v, const std::string& image) {
  nlohmann::json j;
  j["image"] = image;
  std::vector<double> k, r, t;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      k.push_back(v.intrinsics(a, b));
      r.push_back(v.rotation(a, b));
    }
    t.push_back(v.translation(a));
  }
  j["K"] = k;
  j["R"] = r;
  j["t"] = t;
  return j;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << j.dump(2) << "\n";
  if (!os) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Tensor squeeze_channel(const Tensor& t) { return reshape(t.detach(), {t.dim(1), t.dim(2)}); }
Tensor add_channel(const Tensor& t) { return reshape(t, {1, t.dim(0), t.dim(1)}); }

}  // namespace

void write_multiview(const std::filesystem::path& dir, const MultiviewScene& s) {
  std::filesystem::create_directories(dir);
  nlohmann::json views = nlohmann::json::array();
  std::vector<const CameraView*> all{&s.reference};
  std::vector<const Tensor*> depths{&s.depth_reference};
  for (std::size_t i = 0; i < s.neighbors.size(); ++i) {
    all.push_back(&s.neighbors[i]);
    depths.push_back(&s.depth_neighbors[i]);
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    const std::string name = "view_" + std::to_string(i) + ".png";
    write_png(dir / name, all[i]->image);
    if (depths[i]->defined()) write_pfm(dir / ("depth_" + std::to_string(i) + ".pfm"), *depths[i]);
    views.push_back(camera_json(*all[i], name));
  }
  write_json(dir / "cameras.json", {{"views", views}});
}

MultiviewScene read_multiview(const std::filesystem::path& dir) {
  const auto j = read_json(dir / "cameras.json");
  MultiviewScene s;
  try {
    const auto& views = j.at("views");
    if (views.size() < 2) throw IoError((dir / "cameras.json").string() + ": need at least two views");
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& v = views[i];
      CameraView cam;
      cam.image = read_png(dir / v.at("image").get<std::string>());
      const auto k = v.at("K").get<std::vector<double>>();
      const auto r = v.at("R").get<std::vector<double>>();
      const auto t = v.at("t").get<std::vector<double>>();
      if (k.size() != 9 || r.size() != 9 || t.size() != 3) throw IoError("camera entry has wrong sizes");
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          cam.intrinsics(a, b) = k[a * 3 + b];
          cam.rotation(a, b) = r[a * 3 + b];
        }
        cam.translation(a) = t[a];
      }
      Tensor depth;
      const auto dpath = dir / ("depth_" + std::to_string(i) + ".pfm");
      if (std::filesystem::exists(dpath)) depth = read_pfm(dpath);
      if (i == 0) {
        s.reference = cam;
        s.depth_reference = depth;
      } else {
        s.neighbors.push_back(cam);
        s.depth_neighbors.push_back(depth);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "cameras.json").string() + ": " + e.what());
  }
  return s;
}

void write_sample(const std::filesystem::path& dir, const SceneSample& s) {
  std::filesystem::create_directories(dir);
  write_png(dir / "left.png", s.left);
  write_png(dir / "right.png", s.right);
  write_pfm(dir / "dp_t.pfm", squeeze_channel(s.dp_top));
  write_pfm(dir / "dp_b.pfm", squeeze_channel(s.dp_bottom));
  const std::size_t h = s.w_r.coords.dim(1), w = s.w_r.coords.dim(2);
  Tensor warp3({3, h, w});
  for (std::size_t i = 0; i < 2 * h * w; ++i) warp3[i] = s.w_r.coords[i];
  write_pfm(dir / "warp.pfm", warp3);
  write_pfm(dir / "d_gt.pfm", s.d_gt);
  write_pfm(dir / "c_gt.pfm", s.c_gt);
  write_pfm(dir / "c_occ.pfm", s.c_occ);
  write_json(dir / "meta.json", {{"alpha", s.alpha},
                                 {"beta", s.beta},
                                 {"baseline", s.baseline},
                                 {"focal", s.focal},
                                 {"seed", s.seed}});
}

SceneSample read_sample(const std::filesystem::path& dir) {
  SceneSample s;
  s.left = read_png(dir / "left.png");
  s.right = read_png(dir / "right.png");
  s.dp_top = add_channel(read_pfm(dir / "dp_t.pfm"));
  s.dp_bottom = add_channel(read_pfm(dir / "dp_b.pfm"));
  const Tensor warp3 = read_pfm(dir / "warp.pfm");
  if (warp3.rank() != 3) throw IoError((dir / "warp.pfm").string() + ": expected a 3-channel PFM");
  s.w_r.coords = slice0(warp3, 0, 2);
  s.d_gt = read_pfm(dir / "d_gt.pfm");
  s.c_gt = read_pfm(dir / "c_gt.pfm");
  s.c_occ = read_pfm(dir / "c_occ.pfm");
  const auto meta = read_json(dir / "meta.json");
  try {
    s.alpha = meta.at("alpha").get<double>();
    s.beta = meta.at("beta").get<double>();
    s.baseline = meta.at("baseline").get<double>();
    s.focal = meta.at("focal").get<double>();
    s.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "meta.json").string() + ": " + e.what());
  }
  s.dp_gt = Tensor(s.d_gt.shape());
  const double fb = s.focal * s.baseline;
  for (std::size_t i = 0; i < s.d_gt.size(); ++i) s.dp_gt[i] = s.alpha + s.beta * s.d_gt[i] / fb;
  return s;
}

std::vector<std::string> validate_sample(const SceneSample& s) {
  std::vector<std::string> issues;
  auto fail = [&](const std::string& m) { issues.push_back(m); };
  if (s.right.rank() != 3 || s.right.dim(0) != 3 || s.left.shape() != s.right.shape()) {
    fail("left/right images must share a [3,H,W] shape");
    return issues;
  }
  const std::size_t h = s.right.dim(1), w = s.right.dim(2);
  const Shape map{h, w};
  if (s.d_gt.shape() != map || s.c_gt.shape() != map || s.c_occ.shape() != map) fail("ground-truth maps must be [H,W]");
  if (s.w_r.coords.shape() != Shape{2, h, w}) fail("warp map must be [2,H,W]");
  if (s.dp_top.rank() != 3 || s.dp_top.shape() != s.dp_bottom.shape() || s.dp_top.dim(1) % h != 0 ||
      s.dp_top.dim(2) % w != 0) {
    fail("DP halves must be [1,k*H,k*W]");
  }
  if (!issues.empty()) return issues;
  const double fb = s.focal * s.baseline;
  std::size_t bad_d = 0, bad_c = 0, bad_dp = 0, bad_affine = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!(s.d_gt[i] > 0) || !std::isfinite(s.d_gt[i])) ++bad_d;
    if (!(s.c_gt[i] >= 0 && s.c_gt[i] <= 1) || !(s.c_occ[i] >= 0 && s.c_occ[i] <= s.c_gt[i])) ++bad_c;
    const double dp = s.alpha + s.beta * s.d_gt[i] / fb;
    if (std::abs(dp) > 4.0 + 1e-9) ++bad_dp;
    if (s.dp_gt.defined() && s.beta != 0) {
      // D_DC = alpha' + beta' D_DP with beta' = f b / beta, alpha' = -f b alpha / beta.
      const double implied = -fb * s.alpha / s.beta + fb / s.beta * s.dp_gt[i];
      if (std::abs(implied - s.d_gt[i]) > 1e-9 * std::max(1.0, s.d_gt[i])) ++bad_affine;
    }
  }
  for (double v : s.w_r.coords.data()) {
    if (!std::isfinite(v)) {
      fail("warp map has non-finite entries");
      break;
    }
  }
  if (bad_d) fail(std::to_string(bad_d) + " pixels with non-positive or non-finite disparity");
  if (bad_c) fail(std::to_string(bad_c) + " pixels with confidences outside [0,1] or c_occ > c_gt");
  if (bad_dp) fail(std::to_string(bad_dp) + " pixels with DP disparity outside [-4,4]");
  if (bad_affine) fail(std::to_string(bad_affine) + " pixels violate the DC/DP affine relation");
  return issues;
}

std::uint64_t sample_seed(std::uint64_t base, bool test, std::size_t index) {
  return (base << 21) + (test ? (1ULL << 20) : 0ULL) + index;
}

void make_dataset(const SceneConfig& config, std::size_t n_train, std::size_t n_test,
                  const std::filesystem::path& out) {
  char name[32];
  for (int split = 0; split < 2; ++split) {
    const bool test = split == 1;
    const std::size_t n = test ? n_test : n_train;
    for (std::size_t i = 0; i < n; ++i) {
      SceneConfig c = config;
      c.seed = sample_seed(config.seed, test, i);
      const SceneSample s = generate_scene(c);
      const auto issues = validate_sample(s);
      if (!issues.empty()) throw Error("generated sample " + std::to_string(c.seed) + " is invalid: " + issues[0]);
      std::snprintf(name, sizeof name, "%06zu", i);
      write_sample(out / (test ? "test" : "train") / name, s);
    }
  }
}

std::vector<std::filesystem::path> list_samples(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "meta.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace du2
