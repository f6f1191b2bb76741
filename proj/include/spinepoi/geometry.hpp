// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "spinepoi/errors.hpp"

namespace spinepoi {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// A point in world millimeters. The convention (RAS or LPS) is carried by
/// the owning container, not by each point.
using WorldPoint = Vec3;

/// Continuous voxel index; integer values are voxel centers.
using VoxelPoint = Vec3;

constexpr double kUnitTolerance = 1e-9;

/// Direction with Euclidean norm 1 (within 1e-9).
class UnitVector {
 public:
  UnitVector() = default;

  static UnitVector normalize(const Vec3& v) {
    const double n = v.norm();
    if (!(n > 1e-12) || !std::isfinite(n)) {
      fail(ErrorCode::PreconditionViolation, "cannot normalize a zero or non-finite vector");
    }
    return UnitVector(v / n);
  }

  /// Wraps a vector that is already unit length.
  static UnitVector checked(const Vec3& v) {
    if (std::abs(v.norm() - 1.0) > kUnitTolerance) {
      fail(ErrorCode::PreconditionViolation, "vector is not unit length");
    }
    return UnitVector(v);
  }

  [[nodiscard]] const Vec3& vec() const noexcept { return v_; }
  [[nodiscard]] double x() const noexcept { return v_.x(); }
  [[nodiscard]] double y() const noexcept { return v_.y(); }
  [[nodiscard]] double z() const noexcept { return v_.z(); }
  [[nodiscard]] double dot(const UnitVector& o) const noexcept { return v_.dot(o.v_); }

  UnitVector operator-() const noexcept { return UnitVector(-v_); }
  operator const Vec3&() const noexcept { return v_; }  // NOLINT(google-explicit-constructor)

 private:
  explicit UnitVector(const Vec3& v) : v_(v) {}
  Vec3 v_{0.0, 0.0, 1.0};
};

inline double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }
inline double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }

/// Rotation about a unit axis by `angle_rad` (right-hand rule).
inline Mat3 axis_angle(const Vec3& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

}  // namespace spinepoi
