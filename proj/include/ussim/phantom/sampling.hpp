#pragma once

// Probe placement on the phantom surface, seeded dataset generation and hole carving.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/core/image.hpp"
#include "ussim/phantom/phantom.hpp"
#include "ussim/phantom/pose.hpp"
#include "ussim/phantom/render.hpp"
#include "ussim/tensor/rng.hpp"

namespace ussim {

// Surface parameters in degrees. (u, v) are longitude/latitude on the upper half-ellipsoid,
// tilt rotates the beam about the lateral axis, roll spins the probe about the surface normal.
struct SurfaceSample {
  double u = 0, v = 0, tilt = 0, roll = 0;
  friend bool operator==(const SurfaceSample&, const SurfaceSample&) = default;
};

inline constexpr double kMaxSurfaceAngleDeg = 90.0;
inline constexpr double kMaxTiltRollDeg = 30.0;

inline Pose surface_pose(const SurfaceSample& s, const PhantomSpec& spec) {
  for (double a : {s.u, s.v, s.tilt, s.roll})
    if (!std::isfinite(a)) throw GeometryError("surface parameters must be finite");
  if (std::abs(s.u) >= kMaxSurfaceAngleDeg || std::abs(s.v) >= kMaxSurfaceAngleDeg)
    throw GeometryError("surface angles u, v must lie in (-90, 90) degrees");
  if (std::abs(s.tilt) > kMaxTiltRollDeg || std::abs(s.roll) > kMaxTiltRollDeg)
    throw GeometryError("tilt and roll must lie in [-30, 30] degrees");

  constexpr double rad = std::numbers::pi / 180.0;
  const double u = s.u * rad, v = s.v * rad;
  const Eigen::Vector3d d(std::sin(u) * std::cos(v), std::sin(v), std::cos(u) * std::cos(v));
  const Eigen::Vector3d& ax = spec.semi_axes;

  Pose pose;
  pose.position = Eigen::Vector3d(ax.x() * d.x(), ax.y() * d.y(), spec.base_z + ax.z() * d.z());
  const Eigen::Vector3d normal = Eigen::Vector3d(d.x() / ax.x(), d.y() / ax.y(), d.z() / ax.z()).normalized();
  const Eigen::Quaterniond align = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), normal);
  pose.orientation =
      (align * axis_angle_deg(Eigen::Vector3d::UnitZ(), s.roll) * axis_angle_deg(Eigen::Vector3d::UnitX(), s.tilt))
          .normalized();
  return pose;
}

inline Pose surface_pose(double u, double v, double tilt, double roll, const PhantomSpec& spec) {
  return surface_pose(SurfaceSample{u, v, tilt, roll}, spec);
}

// Uniform box over the surface parameters.
struct SamplerSpec {
  double u_min = -45, u_max = 45;
  double v_min = -45, v_max = 45;
  double tilt_max = 10;
  double roll_max = 10;

  void validate() const {
    if (!(u_min < u_max && v_min < v_max)) throw ConfigError("sampler ranges must be non-empty");
    if (u_min <= -kMaxSurfaceAngleDeg || u_max >= kMaxSurfaceAngleDeg || v_min <= -kMaxSurfaceAngleDeg ||
        v_max >= kMaxSurfaceAngleDeg)
      throw ConfigError("sampler u, v ranges must stay inside (-90, 90)");
    if (!(tilt_max >= 0 && tilt_max <= kMaxTiltRollDeg && roll_max >= 0 && roll_max <= kMaxTiltRollDeg))
      throw ConfigError("sampler tilt/roll limits must lie in [0, 30]");
  }
};

class PoseSampler {
 public:
  PoseSampler(SamplerSpec spec, std::uint64_t seed) : spec_(spec), rng_(seed) { spec_.validate(); }

  SurfaceSample next() {
    SurfaceSample s;
    s.u = rng_.uniform(spec_.u_min, spec_.u_max);
    s.v = rng_.uniform(spec_.v_min, spec_.v_max);
    s.tilt = rng_.uniform(-spec_.tilt_max, spec_.tilt_max);
    s.roll = rng_.uniform(-spec_.roll_max, spec_.roll_max);
    return s;
  }

  const SamplerSpec& spec() const { return spec_; }

 private:
  SamplerSpec spec_;
  Rng rng_;
};

struct Frame {
  Image image;
  Pose pose;
  std::size_t index = 0;
  SurfaceSample surface;
};

inline std::vector<Frame> generate_dataset(const Volume& vol, const PhantomSpec& spec, const ImagingParams& params,
                                           std::size_t n, const SamplerSpec& sampler_spec, std::uint64_t seed) {
  if (n == 0) throw ConfigError("dataset size must be >= 1");
  PoseSampler sampler(sampler_spec, seed);
  std::vector<Frame> frames;
  frames.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Frame f;
    f.index = i;
    f.surface = sampler.next();
    f.pose = surface_pose(f.surface, spec);
    f.image = render_slice(vol, f.pose, params).image;
    frames.push_back(std::move(f));
  }
  return frames;
}

struct HoleSplit {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> removed;
  double removed_fraction = 0.0;
};

inline HoleSplit carve_hole(std::span<const Eigen::Vector3d> positions, const Eigen::Vector3d& center,
                            double radius) {
  if (!(radius > 0)) throw GeometryError("hole radius must be positive");
  HoleSplit h;
  for (std::size_t i = 0; i < positions.size(); ++i)
    ((positions[i] - center).norm() <= radius ? h.removed : h.kept).push_back(i);
  h.removed_fraction = positions.empty() ? 0.0 : static_cast<double>(h.removed.size()) / positions.size();
  return h;
}

inline HoleSplit carve_hole(std::span<const Frame> frames, const Eigen::Vector3d& center, double radius) {
  std::vector<Eigen::Vector3d> pos;
  pos.reserve(frames.size());
  for (const auto& f : frames) pos.push_back(f.pose.position);
  return carve_hole(std::span<const Eigen::Vector3d>(pos), center, radius);
}

}  // namespace ussim
