#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "ussim/phantom/pose.hpp"
#include "ussim/tensor/tensor.hpp"

namespace ussim {

// Network input: [qw, qx, qy, qz, x/250, y/250, z/500].
struct NormalizedPoseVector {
  std::array<double, 7> values{};

  double operator[](std::size_t i) const { return values[i]; }
  friend bool operator==(const NormalizedPoseVector&, const NormalizedPoseVector&) = default;
};

inline NormalizedPoseVector normalize_pose(const Pose& p, double quaternion_tolerance = kUnitQuaternionTolerance) {
  validate_pose(p, quaternion_tolerance);
  const auto& q = p.orientation;
  return {{q.w(), q.x(), q.y(), q.z(), p.position.x() / kTrackerMaxX, p.position.y() / kTrackerMaxY,
           p.position.z() / kTrackerMaxZ}};
}

inline Pose denormalize_pose(const NormalizedPoseVector& v) {
  Pose p;
  p.orientation = Eigen::Quaterniond(v[0], v[1], v[2], v[3]);
  p.position = Eigen::Vector3d(v[4] * kTrackerMaxX, v[5] * kTrackerMaxY, v[6] * kTrackerMaxZ);
  return p;
}

// Stacks vectors into a [B, 7] batch.
template <class T = float>
tensor::Tensor<T> pose_batch(std::span<const NormalizedPoseVector> poses) {
  tensor::Tensor<T> t({poses.size(), 7});
  for (std::size_t b = 0; b < poses.size(); ++b)
    for (std::size_t i = 0; i < 7; ++i) t[b * 7 + i] = static_cast<T>(poses[b][i]);
  return t;
}

template <class T = float>
tensor::Tensor<T> pose_batch(const NormalizedPoseVector& pose) {
  return pose_batch<T>(std::span<const NormalizedPoseVector>(&pose, 1));
}

}  // namespace ussim
