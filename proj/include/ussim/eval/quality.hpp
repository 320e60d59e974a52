#pragma once

// Per-frame quality evaluation of a simulator against the oracle images of a dataset,
// and the bed-plane loss map.

#include <cmath>
#include <functional>
#include <json.hpp>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ussim/eval/metrics.hpp"
#include "ussim/models/networks.hpp"
#include "ussim/models/pose_vector.hpp"
#include "ussim/phantom/render.hpp"
#include "ussim/training/dataset.hpp"

namespace ussim {

// Anything that turns a batch of poses into images.
using Simulator = std::function<std::vector<Image>(std::span<const Pose>)>;

inline Simulator decoder_simulator(const models::Decoder<float>& decoder, std::size_t batch = 16) {
  return [&decoder, batch](std::span<const Pose> poses) {
    const auto s = decoder.config().output_size;
    std::vector<Image> out;
    out.reserve(poses.size());
    for (std::size_t at = 0; at < poses.size(); at += batch) {
      const auto n = std::min(batch, poses.size() - at);
      std::vector<NormalizedPoseVector> v;
      for (std::size_t i = 0; i < n; ++i) v.push_back(normalize_pose(poses[at + i]));
      const auto y = decoder.simulate(pose_batch<float>(std::span<const NormalizedPoseVector>(v)));
      for (std::size_t i = 0; i < n; ++i)
        out.emplace_back(s, s, std::vector<float>(y.ptr() + i * s * s, y.ptr() + (i + 1) * s * s));
    }
    return out;
  };
}

inline Simulator oracle_simulator(const Volume& vol, const ImagingParams& params) {
  return [&vol, params](std::span<const Pose> poses) {
    std::vector<Image> out;
    for (const auto& p : poses) out.push_back(render_slice(vol, p, params).image);
    return out;
  };
}

struct QualityReport {
  std::string split;
  std::vector<std::size_t> frames;
  std::vector<double> mse, ssim, psnr;
  double mean_mse = 0, mean_ssim = 0;
  double mean_psnr = 0;             // over frames with finite PSNR
  std::size_t infinite_psnr = 0;    // frames that matched exactly

  nlohmann::json to_json() const {
    auto finite = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("inf"); };
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t i = 0; i < frames.size(); ++i)
      per.push_back({{"frame", frames[i]}, {"mse", mse[i]}, {"ssim", ssim[i]}, {"psnr", finite(psnr[i])}});
    return {{"split", split},
            {"count", frames.size()},
            {"mse", mean_mse},
            {"ssim", mean_ssim},
            {"psnr", infinite_psnr == frames.size() ? nlohmann::json("inf") : nlohmann::json(mean_psnr)},
            {"infinite_psnr_frames", infinite_psnr},
            {"frames", per}};
  }
};

inline QualityReport evaluate_model(const Simulator& sim, const FrameDataset& ds, std::span<const std::size_t> frames,
                                    std::string split, const PsnrOptions& psnr_opt = {},
                                    const SsimConstants& ssim_k = {}) {
  if (frames.empty()) throw ConfigError("evaluate_model: no frames in split '" + split + "'");
  QualityReport r;
  r.split = std::move(split);
  r.frames.assign(frames.begin(), frames.end());
  std::vector<Pose> poses;
  for (auto i : frames) {
    if (!ds.frames[i].tracked) throw ConfigError("evaluate_model: frame " + std::to_string(i) + " has no pose");
    poses.push_back(ds.frames[i].pose);
  }
  const auto images = sim(poses);
  if (images.size() != poses.size()) throw DimensionError("simulator returned the wrong number of images");
  double finite_sum = 0;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto target = ds.image(frames[k]);
    r.mse.push_back(mse(target, images[k]));
    r.ssim.push_back(ssim(target, images[k], ssim_k));
    r.psnr.push_back(psnr(target, images[k], psnr_opt));
    if (std::isfinite(r.psnr.back()))
      finite_sum += r.psnr.back();
    else
      ++r.infinite_psnr;
  }
  const auto n = static_cast<double>(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    r.mean_mse += r.mse[k];
    r.mean_ssim += r.ssim[k];
  }
  r.mean_mse /= n;
  r.mean_ssim /= n;
  const auto finite_n = frames.size() - r.infinite_psnr;
  r.mean_psnr = finite_n ? finite_sum / static_cast<double>(finite_n) : std::numeric_limits<double>::infinity();
  return r;
}

// MSE of always predicting the pixelwise mean of the training images.
inline double mean_image_baseline(const FrameDataset& ds, std::span<const std::size_t> train,
                                  std::span<const std::size_t> eval) {
  if (train.empty() || eval.empty()) throw ConfigError("mean_image_baseline: empty split");
  std::vector<double> mean(ds.pixels_per_image(), 0.0);
  for (auto i : train) {
    const auto px = ds.pixels(i);
    for (std::size_t k = 0; k < px.size(); ++k) mean[k] += px[k];
  }
  for (auto& m : mean) m /= static_cast<double>(train.size());
  double s = 0;
  for (auto i : eval) {
    const auto px = ds.pixels(i);
    for (std::size_t k = 0; k < px.size(); ++k) s += (px[k] - mean[k]) * (px[k] - mean[k]);
  }
  return s / static_cast<double>(eval.size() * ds.pixels_per_image());
}

// ---------------------------------------------------------------------------
// Bed-plane loss map: frame MSE binned by the probe's (x, y); z is discarded.

struct LossMapGrid {
  double x_min = -100, y_min = -100;
  double bin_mm = 10;
  std::size_t nx = 20, ny = 20;

  static LossMapGrid covering(double half_x, double half_y, double bin_mm) {
    if (!(bin_mm > 0)) throw ConfigError("loss map bin size must be positive");
    LossMapGrid g;
    g.bin_mm = bin_mm;
    g.nx = static_cast<std::size_t>(std::ceil(2 * half_x / bin_mm));
    g.ny = static_cast<std::size_t>(std::ceil(2 * half_y / bin_mm));
    g.x_min = -0.5 * static_cast<double>(g.nx) * bin_mm;
    g.y_min = -0.5 * static_cast<double>(g.ny) * bin_mm;
    return g;
  }

  std::pair<std::size_t, std::size_t> bin_of(double x, double y) const {
    const auto ix = static_cast<std::ptrdiff_t>(std::floor((x - x_min) / bin_mm));
    const auto iy = static_cast<std::ptrdiff_t>(std::floor((y - y_min) / bin_mm));
    if (ix < 0 || iy < 0 || ix >= static_cast<std::ptrdiff_t>(nx) || iy >= static_cast<std::ptrdiff_t>(ny))
      throw GeometryError("position (" + std::to_string(x) + ", " + std::to_string(y) + ") is outside the loss map");
    return {static_cast<std::size_t>(ix), static_cast<std::size_t>(iy)};
  }

  double center_x(std::size_t ix) const { return x_min + (static_cast<double>(ix) + 0.5) * bin_mm; }
  double center_y(std::size_t iy) const { return y_min + (static_cast<double>(iy) + 0.5) * bin_mm; }

  friend bool operator==(const LossMapGrid&, const LossMapGrid&) = default;
};

struct LossMap {
  LossMapGrid grid;
  std::vector<double> value;        // per-bin mean; meaningless where count is 0
  std::vector<std::size_t> count;   // frames per bin, row-major [iy][ix]

  std::size_t index(std::size_t ix, std::size_t iy) const { return iy * grid.nx + ix; }
  bool empty(std::size_t ix, std::size_t iy) const { return count[index(ix, iy)] == 0; }
  std::optional<double> at(std::size_t ix, std::size_t iy) const {
    if (empty(ix, iy)) return std::nullopt;
    return value[index(ix, iy)];
  }
  std::size_t non_empty() const {
    return static_cast<std::size_t>(std::count_if(count.begin(), count.end(), [](auto c) { return c > 0; }));
  }

  // Count-weighted mean over bins; for a loss map this is the global per-frame mean.
  double weighted_mean() const {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!count[i]) continue;
      s += value[i] * static_cast<double>(count[i]);
      n += count[i];
    }
    return n ? s / static_cast<double>(n) : std::nan("");
  }

  // Rows run from +y (top) to -y so the text reads like a map; "." marks empty bins.
  std::string to_text(int precision = 5) const {
    std::ostringstream os;
    os.precision(precision);
    os << "# x_min=" << grid.x_min << " y_min=" << grid.y_min << " bin_mm=" << grid.bin_mm << " nx=" << grid.nx
       << " ny=" << grid.ny << '\n';
    for (std::size_t r = 0; r < grid.ny; ++r) {
      const auto iy = grid.ny - 1 - r;
      for (std::size_t ix = 0; ix < grid.nx; ++ix) {
        if (ix) os << ' ';
        if (empty(ix, iy))
          os << '.';
        else
          os << value[index(ix, iy)];
      }
      os << '\n';
    }
    return os.str();
  }

  // Binary graymap, one pixel per bin, linear between lo and hi; empty bins are black.
  std::string to_pgm(double lo, double hi) const {
    std::ostringstream os;
    os << "P5\n" << grid.nx << ' ' << grid.ny << "\n255\n";
    for (std::size_t r = 0; r < grid.ny; ++r) {
      const auto iy = grid.ny - 1 - r;
      for (std::size_t ix = 0; ix < grid.nx; ++ix) {
        unsigned char px = 0;
        if (!empty(ix, iy)) {
          const double t = hi > lo ? (value[index(ix, iy)] - lo) / (hi - lo) : 0.5;
          px = static_cast<unsigned char>(1 + std::lround(std::clamp(t, 0.0, 1.0) * 254));
        }
        os.put(static_cast<char>(px));
      }
    }
    return os.str();
  }
};

inline LossMap loss_map(std::span<const Eigen::Vector3d> positions, std::span<const double> frame_mse,
                        const LossMapGrid& grid) {
  if (positions.size() != frame_mse.size()) throw DimensionError("loss_map: positions and losses differ in count");
  LossMap m{grid, std::vector<double>(grid.nx * grid.ny, 0.0), std::vector<std::size_t>(grid.nx * grid.ny, 0)};
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const auto [ix, iy] = grid.bin_of(positions[k].x(), positions[k].y());
    m.value[m.index(ix, iy)] += frame_mse[k];
    ++m.count[m.index(ix, iy)];
  }
  for (std::size_t i = 0; i < m.value.size(); ++i)
    if (m.count[i]) m.value[i] /= static_cast<double>(m.count[i]);
  return m;
}

inline LossMap loss_map(const QualityReport& report, const FrameDataset& ds, const LossMapGrid& grid) {
  std::vector<Eigen::Vector3d> pos;
  for (auto i : report.frames) pos.push_back(ds.frames[i].pose.position);
  return loss_map(pos, report.mse, grid);
}

// 100 (holed - full) / full per bin; empty wherever either input is empty or full is 0.
inline LossMap relative_increase(const LossMap& full, const LossMap& holed) {
  if (!(full.grid == holed.grid)) throw DimensionError("relative_increase: loss maps use different grids");
  LossMap r{full.grid, std::vector<double>(full.value.size(), 0.0), std::vector<std::size_t>(full.value.size(), 0)};
  for (std::size_t i = 0; i < r.value.size(); ++i) {
    if (!full.count[i] || !holed.count[i] || full.value[i] == 0) continue;
    r.value[i] = 100.0 * (holed.value[i] - full.value[i]) / full.value[i];
    r.count[i] = full.count[i];
  }
  return r;
}

}  // namespace ussim
