#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fsd/tensorgrad/tensor.hpp"

namespace fsd::cli {

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image(std::size_t w, std::size_t h, std::array<std::uint8_t, 3> fill = {255, 255, 255});
  void set(std::size_t x, std::size_t y, std::array<std::uint8_t, 3> c);
  std::array<std::uint8_t, 3> at(std::size_t x, std::size_t y) const;
};

/// Perceptually ordered map of t in [0, 1] (clamped), dark blue to yellow.
std::array<std::uint8_t, 3> colormap(double t);

struct ColorRange {
  double lo = 0.0, hi = 1.0;
};

/// Cells drawn as scale x scale blocks (row 0 at the top) followed by a
/// vertical colorbar from `range.lo` (bottom) to `range.hi` (top). A
/// degenerate range maps every value to the middle color.
Image heatmap(const tg::Tensor& field, std::size_t scale, ColorRange range);
ColorRange value_range(const tg::Tensor& field);

/// Polylines of each series against x on a framed canvas; series with
/// non-finite entries skip those points.
Image line_plot(const std::vector<double>& x, const std::vector<std::vector<double>>& series, std::size_t width,
                std::size_t height);

void write_png(const std::filesystem::path& path, const Image& image);
/// Binary P6; byte-for-byte deterministic.
void write_ppm(const std::filesystem::path& path, const Image& image);

}  // namespace fsd::cli
