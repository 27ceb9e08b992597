#include "du2/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include "du2/errors.hpp"

namespace du2 {

namespace {

float swap_bytes(float f) { return std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f))); }

}  // namespace

void write_pfm(const std::filesystem::path& path, const Tensor& t) {
  const bool color = t.rank() == 3;
  if (!(t.rank() == 2 || (color && t.dim(0) == 3))) {
    throw ShapeError("write_pfm: expected [H,W] or [3,H,W], got " + shape_str(t.shape()));
  }
  const std::size_t h = color ? t.dim(1) : t.dim(0), w = color ? t.dim(2) : t.dim(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << (color ? "PF" : "Pf") << "\n" << w << " " << h << "\n-1.0\n";
  std::vector<float> row(w * (color ? 3 : 1));
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t y = h - 1 - r;
    for (std::size_t x = 0; x < w; ++x) {
      if (color) {
        for (std::size_t c = 0; c < 3; ++c) row[x * 3 + c] = static_cast<float>(t[(c * h + y) * w + x]);
      } else {
        row[x] = static_cast<float>(t[y * w + x]);
      }
    }
    if constexpr (std::endian::native == std::endian::big) {
      for (float& f : row) f = swap_bytes(f);
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!os) throw IoError("failed writing " + path.string());
}

Tensor read_pfm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0;
  double scale_field = 0;
  is >> magic >> w >> h >> scale_field;
  is.get();
  if (!is || (magic != "PF" && magic != "Pf") || w == 0 || h == 0 || scale_field == 0) {
    throw IoError(path.string() + ": malformed PFM header");
  }
  const bool color = magic == "PF";
  const bool little = scale_field < 0;
  const std::size_t ch = color ? 3 : 1;
  std::vector<float> buf(w * h * ch);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw IoError(path.string() + ": truncated PFM payload");
  }
  if (little != (std::endian::native == std::endian::little)) {
    for (float& f : buf) f = swap_bytes(f);
  }
  Tensor t(color ? Shape{3, h, w} : Shape{h, w});
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t y = h - 1 - r;
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < ch; ++c) t[(c * h + y) * w + x] = buf[(r * w + x) * ch + c];
    }
  }
  return t;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw ShapeError("write_png: expected [3,H,W], got " + shape_str(rgb.shape()));
  }
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed for " + path.string());
  }
  std::vector<png_byte> pixels(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(rgb[(c * h + y) * w + x], 0.0, 1.0);
        pixels[(y * w + x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
  }
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * w * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialization failed for " + path.string());
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": not a readable PNG");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  pixels.resize(h * w * 3);
  rows.resize(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor t({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) t[(c * h + y) * w + x] = pixels[(y * w + x) * 3 + c] / 255.0;
    }
  }
  return t;
}

Tensor colorize(const Tensor& map, double lo, double hi) {
  if (map.rank() != 2) throw ShapeError("colorize: expected [H,W], got " + shape_str(map.shape()));
  const std::size_t n = map.size();
  Tensor out({3, map.dim(0), map.dim(1)});
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::clamp((map[i] - lo) / span, 0.0, 1.0);
    const double x2 = x * x, x3 = x2 * x, x4 = x3 * x, x5 = x4 * x;
    // Polynomial fit of the turbo ramp.
    const double r = 0.13572138 + 4.61539260 * x - 42.66032258 * x2 + 132.13108234 * x3 - 152.94239396 * x4 +
                     59.28637943 * x5;
    const double g = 0.09140261 + 2.19418839 * x + 4.84296658 * x2 - 14.18503333 * x3 + 4.27729857 * x4 +
                     2.82956604 * x5;
    const double b = 0.10667330 + 12.64194608 * x - 60.58204836 * x2 + 110.36276771 * x3 - 89.90310912 * x4 +
                     27.34824973 * x5;
    out[i] = std::clamp(r, 0.0, 1.0);
    out[n + i] = std::clamp(g, 0.0, 1.0);
    out[2 * n + i] = std::clamp(b, 0.0, 1.0);
  }
  return out;
}

std::pair<double, double> value_range(const Tensor& map) {
  const auto d = map.data();
  if (d.empty()) return {0.0, 0.0};
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  return {*lo, *hi};
}

}  // namespace du2
