#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "cattleact/types.hpp"

namespace cattleact {

/// Interleaved RGB intensity image, values in [0,1], row-major (y, x, c).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // size = width * height * 3

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  static constexpr int kChannels = 3;

  bool empty() const { return width <= 0 || height <= 0; }

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * 3 + c;
  }

  float at(int x, int y, int c) const { return pixels[index(x, y, c)]; }
  float& at(int x, int y, int c) { return pixels[index(x, y, c)]; }

  void validate(const std::string& what = "Image") const {
    if (empty() || pixels.size() != static_cast<std::size_t>(width) * height * 3)
      throw Error(Error::Code::ShapeMismatch, what + ": storage does not match dimensions");
  }

  std::array<double, 3> channel_means() const {
    std::array<double, 3> sums{0.0, 0.0, 0.0};
    const std::size_t n = static_cast<std::size_t>(width) * height;
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) sums[c] += pixels[i * 3 + c];
    if (n > 0)
      for (auto& s : sums) s /= static_cast<double>(n);
    return sums;
  }
};

inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

/// Integer-pixel crop; the box is rounded outward-safe to stay in bounds.
inline Image crop(const Image& src, const BoundingBox& box) {
  box.validate("crop box");
  const int x0 = std::clamp(static_cast<int>(std::floor(box.x_min)), 0, src.width);
  const int y0 = std::clamp(static_cast<int>(std::floor(box.y_min)), 0, src.height);
  const int x1 = std::clamp(static_cast<int>(std::ceil(box.x_max)), x0, src.width);
  const int y1 = std::clamp(static_cast<int>(std::ceil(box.y_max)), y0, src.height);
  if (x1 - x0 <= 0 || y1 - y0 <= 0)
    throw Error(Error::Code::DegenerateBox, "crop: box does not cover any pixels");
  Image out(x1 - x0, y1 - y0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < 3; ++c) out.at(x - x0, y - y0, c) = src.at(x, y, c);
  return out;
}

/// Bilinear resize with edge clamping; pixel centers at (i + 0.5).
inline Image resize_bilinear(const Image& src, int out_w, int out_h) {
  src.validate("resize source");
  if (out_w <= 0 || out_h <= 0)
    throw Error(Error::Code::InvalidArgument, "resize: output dimensions must be positive");
  Image out(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(x0, y0, c) * (1.0 - wx) + src.at(x1, y0, c) * wx;
        const double bot = src.at(x0, y1, c) * (1.0 - wx) + src.at(x1, y1, c) * wx;
        out.at(x, y, c) = static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

/// Paint an axis-aligned pixel rectangle [x0, x0+w) x [y0, y0+h), clipped.
inline void fill_rect(Image& img, int x0, int y0, int w, int h, const std::array<float, 3>& rgb) {
  const int xa = std::max(0, x0);
  const int ya = std::max(0, y0);
  const int xb = std::min(img.width, x0 + w);
  const int yb = std::min(img.height, y0 + h);
  for (int y = ya; y < yb; ++y)
    for (int x = xa; x < xb; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
}

}  // namespace cattleact
