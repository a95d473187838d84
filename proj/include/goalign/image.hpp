#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "goalign/geometry.hpp"

namespace goalign::img {

// RGB image, values in [0,1], row-major (y, x, channel).
struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> px;

  Image() = default;
  Image(int height, int width, double fill = 0.0)
      : h(height), w(width), px(static_cast<size_t>(height) * width * 3, fill) {}

  double& at(int y, int x, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
  double at(int y, int x, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
  bool same_size(const Image& o) const { return h == o.h && w == o.w; }
};

// Binary PPM (P6), 8-bit. Values are quantized with round(v*255) on write.
void write_ppm(const Image& im, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

// Pixel-exact sub-array copy; box must be within bounds and non-degenerate.
Image subarray(const Image& im, const BBox& box);

// Bilinear resampling with half-pixel centers; exact copy when sizes match.
Image resize_bilinear(const Image& im, int out_h, int out_w);

}  // namespace goalign::img
