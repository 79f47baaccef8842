#include "fsd/cli/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace fsd::cli {

Image::Image(std::size_t w, std::size_t h, std::array<std::uint8_t, 3> fill) : width(w), height(h), rgb(w * h * 3) {
  for (std::size_t i = 0; i < w * h; ++i) std::copy(fill.begin(), fill.end(), rgb.begin() + 3 * i);
}

void Image::set(std::size_t x, std::size_t y, std::array<std::uint8_t, 3> c) {
  if (x >= width || y >= height) return;
  std::copy(c.begin(), c.end(), rgb.begin() + 3 * (y * width + x));
}

std::array<std::uint8_t, 3> Image::at(std::size_t x, std::size_t y) const {
  const std::size_t i = 3 * (y * width + x);
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

std::array<std::uint8_t, 3> colormap(double t) {
  // Viridis anchor colors at t = 0, 1/8, ..., 1.
  static constexpr std::array<std::array<double, 3>, 9> anchors{{{68, 1, 84},
                                                                 {71, 44, 122},
                                                                 {59, 81, 139},
                                                                 {44, 113, 142},
                                                                 {33, 144, 141},
                                                                 {39, 173, 129},
                                                                 {92, 200, 99},
                                                                 {170, 220, 50},
                                                                 {253, 231, 37}}};
  if (!std::isfinite(t)) return {255, 0, 255};
  t = std::clamp(t, 0.0, 1.0) * 8.0;
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), 7);
  const double f = t - static_cast<double>(i);
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k)
    c[k] = static_cast<std::uint8_t>(std::lround(anchors[i][k] + f * (anchors[i + 1][k] - anchors[i][k])));
  return c;
}

ColorRange value_range(const tg::Tensor& field) {
  ColorRange r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (double v : field.values())
    if (std::isfinite(v)) {
      r.lo = std::min(r.lo, v);
      r.hi = std::max(r.hi, v);
    }
  if (r.lo > r.hi) r = {0.0, 0.0};
  return r;
}

Image heatmap(const tg::Tensor& field, std::size_t scale, ColorRange range) {
  if (field.rank() != 2) throw std::invalid_argument("heatmap: field must be [ny, nx]");
  if (scale < 1) throw std::invalid_argument("heatmap: scale must be >= 1");
  const std::size_t ny = field.dim(0), nx = field.dim(1);
  const std::size_t bar_gap = scale, bar_width = 2 * scale;
  Image img(nx * scale + bar_gap + bar_width, ny * scale);
  const double span = range.hi - range.lo;
  auto color_of = [&](double v) { return colormap(span > 0 ? (v - range.lo) / span : 0.5); };
  for (std::size_t r = 0; r < ny; ++r)
    for (std::size_t c = 0; c < nx; ++c) {
      const auto col = color_of(field[r * nx + c]);
      for (std::size_t dy = 0; dy < scale; ++dy)
        for (std::size_t dx = 0; dx < scale; ++dx) img.set(c * scale + dx, r * scale + dy, col);
    }
  const std::size_t h = img.height;
  for (std::size_t y = 0; y < h; ++y) {
    const double t = h > 1 ? 1.0 - static_cast<double>(y) / static_cast<double>(h - 1) : 0.5;
    const auto col = span > 0 ? colormap(t) : colormap(0.5);
    for (std::size_t x = 0; x < bar_width; ++x) img.set(nx * scale + bar_gap + x, y, col);
  }
  return img;
}

Image line_plot(const std::vector<double>& x, const std::vector<std::vector<double>>& series, std::size_t width,
                std::size_t height) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 6> palette{
      {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75}}};
  if (width < 16 || height < 16) throw std::invalid_argument("line_plot: canvas too small");
  Image img(width, height);
  const std::size_t margin = 8;
  const std::array<std::uint8_t, 3> frame{0, 0, 0};
  for (std::size_t px = margin; px < width - margin; ++px) {
    img.set(px, margin, frame);
    img.set(px, height - margin - 1, frame);
  }
  for (std::size_t py = margin; py < height - margin; ++py) {
    img.set(margin, py, frame);
    img.set(width - margin - 1, py, frame);
  }
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  for (double v : x)
    if (std::isfinite(v)) xlo = std::min(xlo, v), xhi = std::max(xhi, v);
  for (const auto& s : series)
    for (double v : s)
      if (std::isfinite(v)) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
  if (!(xhi > xlo)) xlo -= 0.5, xhi += 0.5;
  if (!(yhi > ylo)) ylo -= 0.5, yhi += 0.5;
  const double w = static_cast<double>(width - 2 * margin - 3), hgt = static_cast<double>(height - 2 * margin - 3);
  auto to_px = [&](double vx, double vy) {
    return std::pair<double, double>{margin + 1 + (vx - xlo) / (xhi - xlo) * w,
                                     margin + 1 + (1.0 - (vy - ylo) / (yhi - ylo)) * hgt};
  };
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto col = palette[s % palette.size()];
    const std::size_t n = std::min(x.size(), series[s].size());
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (!std::isfinite(x[i]) || !std::isfinite(x[i + 1]) || !std::isfinite(series[s][i]) ||
          !std::isfinite(series[s][i + 1]))
        continue;
      const auto [x0, y0] = to_px(x[i], series[s][i]);
      const auto [x1, y1] = to_px(x[i + 1], series[s][i + 1]);
      const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
      for (int k = 0; k <= steps; ++k) {
        const double f = static_cast<double>(k) / steps;
        img.set(static_cast<std::size_t>(std::lround(x0 + f * (x1 - x0))),
                static_cast<std::size_t>(std::lround(y0 + f * (y1 - y0))), col);
      }
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y)
    png_write_row(png, const_cast<png_bytep>(image.rgb.data() + 3 * y * image.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
}

}  // namespace fsd::cli
