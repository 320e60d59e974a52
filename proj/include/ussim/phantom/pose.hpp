#pragma once

#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <numbers>

#include "ussim/core/error.hpp"

namespace ussim {

// Tracker working volume (mm). Positions are validated against it and normalized by it.
inline constexpr double kTrackerMaxX = 250.0;
inline constexpr double kTrackerMaxY = 250.0;
inline constexpr double kTrackerMaxZ = 500.0;
inline constexpr double kUnitQuaternionTolerance = 1e-6;

// Transducer pose: position in mm, orientation as a unit quaternion mapping probe-local
// axes to tracker axes. Probe-local +x is lateral (image columns), -z is the beam.
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  // [qw, qx, qy, qz, x, y, z]
  std::array<double, 7> to_array() const {
    return {orientation.w(), orientation.x(), orientation.y(), orientation.z(),
            position.x(),    position.y(),    position.z()};
  }

  static Pose from_array(const std::array<double, 7>& a) {
    Pose p;
    p.orientation = Eigen::Quaterniond(a[0], a[1], a[2], a[3]);
    p.position = Eigen::Vector3d(a[4], a[5], a[6]);
    return p;
  }

  Eigen::Vector3d lateral_axis() const { return orientation * Eigen::Vector3d::UnitX(); }
  Eigen::Vector3d elevation_axis() const { return orientation * Eigen::Vector3d::UnitY(); }
  Eigen::Vector3d beam_axis() const { return orientation * -Eigen::Vector3d::UnitZ(); }

  friend bool operator==(const Pose& a, const Pose& b) { return a.to_array() == b.to_array(); }
};

inline bool position_in_tracker_volume(const Eigen::Vector3d& p) {
  return std::abs(p.x()) <= kTrackerMaxX && std::abs(p.y()) <= kTrackerMaxY && p.z() >= 0.0 && p.z() <= kTrackerMaxZ;
}

// Throws GeometryError when the pose violates the tracker bounds or the unit-norm rule.
inline void validate_pose(const Pose& p, double quaternion_tolerance = kUnitQuaternionTolerance) {
  for (double v : p.to_array()) {
    if (!std::isfinite(v)) throw GeometryError("pose contains a non-finite value");
  }
  const double norm = p.orientation.norm();
  if (std::abs(norm - 1.0) > quaternion_tolerance) {
    throw GeometryError("pose quaternion is not unit norm (|q| = " + std::to_string(norm) + ")");
  }
  if (!position_in_tracker_volume(p.position)) {
    throw GeometryError("pose position outside the tracker volume (|x|,|y| <= 250, 0 <= z <= 500 mm)");
  }
}

inline Eigen::Quaterniond axis_angle_deg(const Eigen::Vector3d& axis, double degrees) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(degrees * std::numbers::pi / 180.0, axis.normalized()));
}

// q and -q are the same rotation.
inline bool same_rotation(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b, double tol = 1e-9) {
  return std::abs(std::abs(a.normalized().dot(b.normalized())) - 1.0) <= tol;
}

}  // namespace ussim
