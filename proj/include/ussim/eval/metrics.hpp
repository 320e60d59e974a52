#pragma once

// Image quality metrics. SSIM uses whole-image statistics (no sliding window).

#include <algorithm>
#include <cmath>
#include <limits>

#include "ussim/core/error.hpp"
#include "ussim/core/image.hpp"

namespace ussim {

inline double mse(const Image& a, const Image& b) {
  require_same_size(a, b, "mse");
  if (a.size() == 0) throw DimensionError("mse: empty images");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

struct SsimConstants {
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;  // L

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

inline double ssim(const Image& a, const Image& b, const SsimConstants& k = {}) {
  require_same_size(a, b, "ssim");
  if (a.size() == 0) throw DimensionError("ssim: empty images");
  if (!(k.dynamic_range > 0)) throw ConfigError("ssim: dynamic range must be positive");
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.pixels[i];
    mb += b.pixels[i];
  }
  ma /= n;
  mb /= n;
  double va = 0, vb = 0, cov = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.pixels[i] - ma, db = b.pixels[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  va /= n;
  vb /= n;
  cov /= n;
  const double c1 = k.c1(), c2 = k.c2();
  return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

// 10 log10(peak^2 / mse); +inf when mse is 0.
inline double psnr_from_mse(double peak, double mse_value) {
  if (mse_value < 0) throw NumericError("psnr: negative mse");
  if (mse_value == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse_value);
}

struct PsnrOptions {
  // Off: peak is max(simulated), as the formula is usually written for this simulator.
  // On: peak is the dynamic range L.
  bool use_dynamic_range = false;
  double dynamic_range = 1.0;
};

// `reference` is the acquired (oracle) image, `simulated` the model output.
inline double psnr(const Image& reference, const Image& simulated, const PsnrOptions& opt = {}) {
  const double m = mse(reference, simulated);
  const double peak = opt.use_dynamic_range
                          ? opt.dynamic_range
                          : static_cast<double>(*std::max_element(simulated.pixels.begin(), simulated.pixels.end()));
  return psnr_from_mse(peak, m);
}

}  // namespace ussim
