#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "ussim/core/error.hpp"

namespace ussim {

// Grayscale image, row-major, top-left origin. Row index is depth along the beam.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, float fill = 0.f) : width(w), height(h), pixels(w * h, fill) {}
  Image(std::size_t w, std::size_t h, std::vector<float> px) : width(w), height(h), pixels(std::move(px)) {
    if (pixels.size() != w * h) throw DimensionError("image pixel count does not match dimensions");
  }

  float& operator()(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  float operator()(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }

  std::size_t size() const noexcept { return pixels.size(); }
  std::span<const float> view() const noexcept { return pixels; }

  friend bool operator==(const Image&, const Image&) = default;
};

inline void require_same_size(const Image& a, const Image& b, const char* where) {
  if (a.width != b.width || a.height != b.height) {
    throw DimensionError(std::string(where) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height) + ")");
  }
}

inline Image clamped(Image img, float lo = 0.f, float hi = 1.f) {
  for (auto& v : img.pixels) v = std::clamp(v, lo, hi);
  return img;
}

}  // namespace ussim
