// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spinepoi/errors.hpp"
#include "spinepoi/geometry.hpp"

namespace spinepoi {

// ---------------------------------------------------------------------------
// World conventions
// ---------------------------------------------------------------------------

/// RAS is the NIfTI world, LPS the ITK / DICOM / Slicer-storage world. They
/// differ by a 180 degree rotation about the superior axis.
enum class WorldConvention { RAS, LPS };

constexpr std::string_view to_string(WorldConvention c) {
  return c == WorldConvention::RAS ? "RAS" : "LPS";
}

inline WorldConvention parse_convention(std::string_view s) {
  if (s == "RAS" || s == "ras") return WorldConvention::RAS;
  if (s == "LPS" || s == "lps") return WorldConvention::LPS;
  fail(ErrorCode::FormatError, "unknown world convention '" + std::string(s) + "'");
}

inline Vec3 convert_convention(const Vec3& p, WorldConvention from, WorldConvention to) {
  if (from == to) return p;
  return {-p.x(), -p.y(), p.z()};
}

/// Anatomical direction expressed in a world convention.
/// Letters follow the NIfTI/ITK axis-code alphabet: R L A P S I.
inline Vec3 anatomical_direction(char letter, WorldConvention c) {
  const double s = c == WorldConvention::RAS ? 1.0 : -1.0;
  switch (letter) {
    case 'R': return {s, 0, 0};
    case 'L': return {-s, 0, 0};
    case 'A': return {0, s, 0};
    case 'P': return {0, -s, 0};
    case 'S': return {0, 0, 1};
    case 'I': return {0, 0, -1};
    default: break;
  }
  fail(ErrorCode::FormatError, std::string("unknown axis letter '") + letter + "'");
}

// ---------------------------------------------------------------------------
// AffineFrame
// ---------------------------------------------------------------------------

/// Voxel-index to world-millimeter transform. The inverse is computed once.
class AffineFrame {
 public:
  AffineFrame() : AffineFrame(Mat4::Identity(), WorldConvention::RAS) {}

  AffineFrame(const Mat4& voxel_to_world, WorldConvention convention)
      : matrix_(voxel_to_world), convention_(convention) {
    if (!matrix_.allFinite()) fail(ErrorCode::InvalidFrame, "affine has non-finite entries");
    if (matrix_(3, 0) != 0.0 || matrix_(3, 1) != 0.0 || matrix_(3, 2) != 0.0 || matrix_(3, 3) != 1.0) {
      fail(ErrorCode::InvalidFrame, "affine last row must be (0,0,0,1)");
    }
    const double det = matrix_.topLeftCorner<3, 3>().determinant();
    if (!(std::abs(det) > 1e-12)) fail(ErrorCode::InvalidFrame, "affine 3x3 block is singular");
    inverse_ = matrix_.inverse();
  }

  static AffineFrame identity(WorldConvention c = WorldConvention::RAS) {
    return AffineFrame(Mat4::Identity(), c);
  }

  /// Diagonal spacing with an origin for voxel (0,0,0).
  static AffineFrame from_spacing(const Vec3& spacing, const Vec3& origin = Vec3::Zero(),
                                  WorldConvention c = WorldConvention::RAS) {
    Mat4 m = Mat4::Identity();
    m(0, 0) = spacing.x();
    m(1, 1) = spacing.y();
    m(2, 2) = spacing.z();
    m.topRightCorner<3, 1>() = origin;
    return AffineFrame(m, c);
  }

  [[nodiscard]] WorldPoint voxel_to_world(const VoxelPoint& p) const {
    return matrix_.topLeftCorner<3, 3>() * p + matrix_.topRightCorner<3, 1>();
  }

  [[nodiscard]] VoxelPoint world_to_voxel(const WorldPoint& p) const {
    return inverse_.topLeftCorner<3, 3>() * p + inverse_.topRightCorner<3, 1>();
  }

  [[nodiscard]] const Mat4& matrix() const noexcept { return matrix_; }
  [[nodiscard]] const Mat4& inverse() const noexcept { return inverse_; }
  [[nodiscard]] Mat3 linear() const { return matrix_.topLeftCorner<3, 3>(); }
  [[nodiscard]] WorldConvention convention() const noexcept { return convention_; }

  /// Length of each voxel axis in millimeters.
  [[nodiscard]] Vec3 spacing() const { return linear().colwise().norm().transpose(); }

  /// World direction of voxel axis `axis` (unit length).
  [[nodiscard]] Vec3 axis_direction(int axis) const { return linear().col(axis).normalized(); }

  /// Same voxel grid expressed in another world convention.
  [[nodiscard]] AffineFrame in_convention(WorldConvention target) const {
    if (target == convention_) return *this;
    Mat4 m = matrix_;
    m.row(0) *= -1.0;
    m.row(1) *= -1.0;
    return AffineFrame(m, target);
  }

  /// Applies a world-space transform after this one (new = world_transform * old).
  [[nodiscard]] AffineFrame composed(const Mat4& world_transform) const {
    return AffineFrame(world_transform * matrix_, convention_);
  }

 private:
  Mat4 matrix_;
  Mat4 inverse_;
  WorldConvention convention_;
};

inline WorldPoint voxel_to_world(const AffineFrame& frame, const VoxelPoint& p) {
  return frame.voxel_to_world(p);
}

inline VoxelPoint world_to_voxel(const AffineFrame& frame, const WorldPoint& p) {
  return frame.world_to_voxel(p);
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

using Label = std::uint32_t;

/// Small set of label codes; membership tests dominate so it stays a flat
/// sorted vector.
class LabelSet {
 public:
  LabelSet() = default;
  LabelSet(std::initializer_list<Label> codes) : codes_(codes) { normalize(); }
  explicit LabelSet(std::vector<Label> codes) : codes_(std::move(codes)) { normalize(); }

  [[nodiscard]] bool contains(Label l) const noexcept {
    for (Label c : codes_) {
      if (c == l) return true;
    }
    return false;
  }
  [[nodiscard]] bool empty() const noexcept { return codes_.empty(); }
  [[nodiscard]] std::span<const Label> codes() const noexcept { return codes_; }

  LabelSet& merge(const LabelSet& other) {
    codes_.insert(codes_.end(), other.codes_.begin(), other.codes_.end());
    normalize();
    return *this;
  }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  void normalize() {
    std::erase(codes_, Label{0});
    std::sort(codes_.begin(), codes_.end());
    codes_.erase(std::unique(codes_.begin(), codes_.end()), codes_.end());
  }
  std::vector<Label> codes_;
};

using Dims = std::array<int, 3>;

/// Inclusive voxel index box.
struct IndexBox {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{-1, -1, -1};

  [[nodiscard]] bool empty() const noexcept { return hi[0] < lo[0] || hi[1] < lo[1] || hi[2] < lo[2]; }

  void expand(int i, int j, int k) noexcept {
    if (empty()) {
      lo = {i, j, k};
      hi = {i, j, k};
      return;
    }
    lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
    hi = {std::max(hi[0], i), std::max(hi[1], j), std::max(hi[2], k)};
  }

  void merge(const IndexBox& o) noexcept {
    if (o.empty()) return;
    expand(o.lo[0], o.lo[1], o.lo[2]);
    expand(o.hi[0], o.hi[1], o.hi[2]);
  }
};

// ---------------------------------------------------------------------------
// LabelVolume
// ---------------------------------------------------------------------------

/// Dense label map with its voxel-to-world frame. Immutable after construction;
/// the label buffer is shared between copies, so re-framing a volume is cheap.
class LabelVolume {
 public:
  LabelVolume(Dims dims, std::vector<Label> labels, AffineFrame frame)
      : dims_(dims), frame_(std::move(frame)) {
    for (int d : dims_) {
      if (d <= 0) fail(ErrorCode::PreconditionViolation, "volume dimensions must be positive");
    }
    const auto expected = static_cast<std::size_t>(dims_[0]) * static_cast<std::size_t>(dims_[1]) *
                          static_cast<std::size_t>(dims_[2]);
    if (labels.size() != expected) {
      fail(ErrorCode::PreconditionViolation, "label buffer length " + std::to_string(labels.size()) +
                                                 " does not match dims product " + std::to_string(expected));
    }
    labels_ = std::make_shared<const std::vector<Label>>(std::move(labels));
  }

  [[nodiscard]] const Dims& dims() const noexcept { return dims_; }
  [[nodiscard]] const AffineFrame& frame() const noexcept { return frame_; }
  [[nodiscard]] std::span<const Label> labels() const noexcept { return *labels_; }
  [[nodiscard]] std::size_t voxel_count() const noexcept { return labels_->size(); }

  [[nodiscard]] bool in_bounds(int i, int j, int k) const noexcept {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
  }

  [[nodiscard]] std::size_t offset(int i, int j, int k) const noexcept {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(k));
  }

  /// Label at an in-bounds index.
  [[nodiscard]] Label at(int i, int j, int k) const noexcept { return (*labels_)[offset(i, j, k)]; }

  /// Label at any index; out of bounds reads as background.
  [[nodiscard]] Label get(int i, int j, int k) const noexcept { return in_bounds(i, j, k) ? at(i, j, k) : 0; }

  [[nodiscard]] WorldPoint center(int i, int j, int k) const {
    return frame_.voxel_to_world(Vec3(i, j, k));
  }

  /// Same labels on a different frame (used for rigid retargeting of data).
  [[nodiscard]] LabelVolume with_frame(AffineFrame frame) const {
    LabelVolume copy = *this;
    copy.frame_ = std::move(frame);
    return copy;
  }

 private:
  Dims dims_;
  std::shared_ptr<const std::vector<Label>> labels_;
  AffineFrame frame_;
};

/// Trilinearly interpolated indicator of `label_set` at a world point.
/// Voxel centers outside the grid contribute 0. Inside iff result >= 0.5.
inline double sample_occupancy(const LabelVolume& vol, const LabelSet& label_set, const WorldPoint& p) {
  const VoxelPoint c = vol.frame().world_to_voxel(p);
  const double fx = std::floor(c.x());
  const double fy = std::floor(c.y());
  const double fz = std::floor(c.z());
  // Far outside the grid: avoid int overflow, the answer is 0 anyway.
  const Dims& d = vol.dims();
  if (fx < -2.0 || fy < -2.0 || fz < -2.0 || fx > d[0] + 1.0 || fy > d[1] + 1.0 || fz > d[2] + 1.0) {
    return 0.0;
  }
  const int i0 = static_cast<int>(fx);
  const int j0 = static_cast<int>(fy);
  const int k0 = static_cast<int>(fz);
  const double tx = c.x() - fx;
  const double ty = c.y() - fy;
  const double tz = c.z() - fz;

  double sum = 0.0;
  for (int dk = 0; dk < 2; ++dk) {
    const double wz = dk ? tz : 1.0 - tz;
    if (wz == 0.0) continue;
    for (int dj = 0; dj < 2; ++dj) {
      const double wy = dj ? ty : 1.0 - ty;
      if (wy == 0.0) continue;
      for (int di = 0; di < 2; ++di) {
        const double wx = di ? tx : 1.0 - tx;
        if (wx == 0.0) continue;
        const Label l = vol.get(i0 + di, j0 + dj, k0 + dk);
        if (l != 0 && label_set.contains(l)) sum += wx * wy * wz;
      }
    }
  }
  return sum;
}

constexpr double kInsideThreshold = 0.5;

inline bool is_inside(const LabelVolume& vol, const LabelSet& label_set, const WorldPoint& p) {
  return sample_occupancy(vol, label_set, p) >= kInsideThreshold;
}

/// World-space length of the diagonal of an index box (voxel centers, padded
/// by half a voxel on each side).
inline double world_diagonal(const AffineFrame& frame, const IndexBox& box) {
  if (box.empty()) return 0.0;
  const Vec3 extent(box.hi[0] - box.lo[0] + 1.0, box.hi[1] - box.lo[1] + 1.0, box.hi[2] - box.lo[2] + 1.0);
  return (frame.linear() * extent).norm();
}

}  // namespace spinepoi
