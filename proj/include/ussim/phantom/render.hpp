#pragma once

// Slice renderer: samples the pose-defined image plane of a Volume inside a sector mask,
// with per-column attenuation shadowing and a single reverberation ghost.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/core/image.hpp"
#include "ussim/phantom/phantom.hpp"
#include "ussim/phantom/pose.hpp"

namespace ussim {

struct ImagingParams {
  std::size_t image_size = 256;
  double pixel_spacing_mm = 0.5;
  double sector_half_angle_deg = 35.0;
  double near_field_offset_mm = 10.0;  // virtual apex distance behind the probe face
  double shadow_strength = 1.0;
  std::size_t supersample = 1;  // sub-samples per pixel along each axis
  double reverb_gain = 0.35;
  double reverb_thickness_mm = 2.0;

  // Same 128 mm field of view at every size; smaller images average more sub-samples.
  static ImagingParams for_size(std::size_t size) {
    if (size == 0 || 256 % size != 0) throw ConfigError("image size must divide 256");
    ImagingParams p;
    p.image_size = size;
    p.pixel_spacing_mm = 128.0 / static_cast<double>(size);
    p.supersample = 256 / size;
    return p;
  }

  void validate() const {
    if (image_size == 0) throw ConfigError("image size must be positive");
    if (!(pixel_spacing_mm > 0)) throw ConfigError("pixel spacing must be positive");
    if (!(sector_half_angle_deg > 0 && sector_half_angle_deg < 90))
      throw ConfigError("sector half-angle must be in (0, 90) degrees");
    if (!(near_field_offset_mm >= 0)) throw ConfigError("near-field offset must be >= 0");
    if (!(shadow_strength >= 0)) throw ConfigError("shadow strength must be >= 0");
    if (supersample == 0) throw ConfigError("supersample must be >= 1");
  }

  double lateral_mm(double col) const { return (col + 0.5 - image_size / 2.0) * pixel_spacing_mm; }
  double depth_mm(double row) const { return (row + 0.5) * pixel_spacing_mm; }

  bool in_sector(std::size_t row, std::size_t col) const {
    const double d = depth_mm(static_cast<double>(row)) + near_field_offset_mm;
    const double l = lateral_mm(static_cast<double>(col));
    return std::abs(l) <= d * std::tan(sector_half_angle_deg * std::numbers::pi / 180.0);
  }
};

inline Image sector_mask(const ImagingParams& params) {
  Image m(params.image_size, params.image_size);
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c) m(r, c) = params.in_sector(r, c) ? 1.f : 0.f;
  return m;
}

struct RenderResult {
  Image image;
  bool blank = false;  // no sample of the plane fell inside the volume
};

inline RenderResult render_slice(const Volume& vol, const Pose& pose, const ImagingParams& params) {
  params.validate();
  const std::size_t n = params.image_size;
  const std::size_t ss = params.supersample;
  const std::size_t sub_n = n * ss;
  const double sub_step = params.pixel_spacing_mm / static_cast<double>(ss);

  const Eigen::Vector3d lateral = pose.lateral_axis();
  const Eigen::Vector3d beam = pose.beam_axis();
  const Eigen::Vector3d origin = pose.position;

  RenderResult out;
  out.image = Image(n, n);
  std::vector<double> acc(n * n, 0.0);
  std::vector<float> column(sub_n);
  bool any_inside = false;

  for (std::size_t sc = 0; sc < sub_n; ++sc) {
    const double lat = (static_cast<double>(sc) + 0.5 - sub_n / 2.0) * sub_step;
    const Eigen::Vector3d col_origin = origin + lat * lateral;
    double optical_depth = 0.0;
    double entry_depth = -1.0, entry_gain = 0.0;
    for (std::size_t sr = 0; sr < sub_n; ++sr) {
      const double depth = (static_cast<double>(sr) + 0.5) * sub_step;
      const Eigen::Vector3d p = col_origin + depth * beam;
      float value = 0.f;
      if (vol.inside(p)) {
        any_inside = true;
        const double transmission = std::exp(-params.shadow_strength * optical_depth);
        value = static_cast<float>(vol.sample(vol.intensity, p) * transmission);
        optical_depth += vol.sample(vol.attenuation, p) * sub_step;
        if (entry_depth < 0) {
          const auto label = vol.label_at(p);
          if (label != kLabelOutside && vol.label_reverberates.size() > label && vol.label_reverberates[label]) {
            entry_depth = depth;
            entry_gain = params.reverb_gain * vol.label_intensity[label] * transmission;
          }
        }
      }
      column[sr] = value;
    }
    if (entry_depth > 0) {
      const double ghost = 2.0 * entry_depth;
      for (std::size_t sr = 0; sr < sub_n; ++sr) {
        const double depth = (static_cast<double>(sr) + 0.5) * sub_step;
        if (std::abs(depth - ghost) <= params.reverb_thickness_mm / 2.0)
          column[sr] = std::min(1.f, column[sr] + static_cast<float>(entry_gain));
      }
    }
    const std::size_t c = sc / ss;
    for (std::size_t sr = 0; sr < sub_n; ++sr) acc[(sr / ss) * n + c] += column[sr];
  }

  const double inv = 1.0 / static_cast<double>(ss * ss);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      out.image(r, c) = params.in_sector(r, c) ? std::clamp(static_cast<float>(acc[r * n + c] * inv), 0.f, 1.f) : 0.f;
  out.blank = !any_inside;
  return out;
}

}  // namespace ussim
