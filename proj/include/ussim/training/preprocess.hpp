#pragma once

// Raw 8-bit frame -> network image: bilinear resample to 0.5 mm pixels, centre crop or
// zero pad to the working size, scale to [0, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/core/image.hpp"

namespace ussim {

inline constexpr double kTargetSpacingMm = 0.5;

struct RawFrame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(std::ptrdiff_t r, std::ptrdiff_t c) const {
    r = std::clamp<std::ptrdiff_t>(r, 0, static_cast<std::ptrdiff_t>(height) - 1);
    c = std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(width) - 1);
    return pixels[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)];
  }
};

// Pixel-centre aligned bilinear resampling with edge clamping, values kept in 0..255.
inline Image resample_bilinear(const RawFrame& raw, std::size_t out_w, std::size_t out_h) {
  Image out(out_w, out_h);
  const double sx = static_cast<double>(raw.width) / static_cast<double>(out_w);
  const double sy = static_cast<double>(raw.height) / static_cast<double>(out_h);
  for (std::size_t r = 0; r < out_h; ++r) {
    const double y = (static_cast<double>(r) + 0.5) * sy - 0.5;
    const auto y0 = static_cast<std::ptrdiff_t>(std::floor(y));
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * sx - 0.5;
      const auto x0 = static_cast<std::ptrdiff_t>(std::floor(x));
      const double fx = x - static_cast<double>(x0);
      const double top = (1 - fx) * raw.at(y0, x0) + fx * raw.at(y0, x0 + 1);
      const double bottom = (1 - fx) * raw.at(y0 + 1, x0) + fx * raw.at(y0 + 1, x0 + 1);
      out(r, c) = static_cast<float>((1 - fy) * top + fy * bottom);
    }
  }
  return out;
}

inline Image center_crop_or_pad(const Image& img, std::size_t size) {
  Image out(size, size);
  const auto off_r = (static_cast<std::ptrdiff_t>(img.height) - static_cast<std::ptrdiff_t>(size)) / 2;
  const auto off_c = (static_cast<std::ptrdiff_t>(img.width) - static_cast<std::ptrdiff_t>(size)) / 2;
  for (std::size_t r = 0; r < size; ++r) {
    const auto sr = static_cast<std::ptrdiff_t>(r) + off_r;
    if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(img.height)) continue;
    for (std::size_t c = 0; c < size; ++c) {
      const auto sc = static_cast<std::ptrdiff_t>(c) + off_c;
      if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(img.width)) continue;
      out(r, c) = img(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc));
    }
  }
  return out;
}

inline Image preprocess_image(const RawFrame& raw, double spacing_mm, std::size_t size = 256) {
  if (raw.width == 0 || raw.height == 0 || raw.pixels.size() != raw.width * raw.height)
    throw DimensionError("preprocess_image: empty or inconsistent raw frame");
  if (!(spacing_mm > 0) || !std::isfinite(spacing_mm))
    throw ConfigError("preprocess_image: pixel spacing must be positive");
  if (size == 0) throw ConfigError("preprocess_image: output size must be positive");
  const double factor = spacing_mm / kTargetSpacingMm;
  const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(raw.width * factor)));
  const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(raw.height * factor)));
  Image img;
  if (w == raw.width && h == raw.height) {
    img = Image(w, h);
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) img.pixels[i] = raw.pixels[i];
  } else {
    img = resample_bilinear(raw, w, h);
  }
  img = center_crop_or_pad(img, size);
  for (auto& v : img.pixels) v /= 255.f;
  return img;
}

// Quantizes a [0, 1] image to 8 bits (rounding), the inverse of the /255 scaling.
inline RawFrame quantize(const Image& img) {
  RawFrame raw{img.width, img.height, std::vector<std::uint8_t>(img.size())};
  for (std::size_t i = 0; i < img.size(); ++i)
    raw.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[i], 0.f, 1.f) * 255.f));
  return raw;
}

}  // namespace ussim
