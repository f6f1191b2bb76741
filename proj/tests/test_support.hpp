// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "spinepoi/spinepoi.hpp"

namespace spinepoi::testing {

// Reference implementations used as oracles. They share no code with the
// library beyond the data types.

/// Direct 8-corner weighted sum of the label indicator.
inline double oracle_occupancy(const LabelVolume& vol, const LabelSet& labels, const Vec3& world) {
  const Mat4 inv = vol.frame().matrix().inverse();
  const Vec3 v = inv.topLeftCorner<3, 3>() * world + inv.topRightCorner<3, 1>();
  const int i0 = static_cast<int>(std::floor(v.x()));
  const int j0 = static_cast<int>(std::floor(v.y()));
  const int k0 = static_cast<int>(std::floor(v.z()));
  const double tx = v.x() - i0, ty = v.y() - j0, tz = v.z() - k0;
  double sum = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
    const double w = (di ? tx : 1.0 - tx) * (dj ? ty : 1.0 - ty) * (dk ? tz : 1.0 - tz);
    const Label l = vol.get(i0 + di, j0 + dj, k0 + dk);
    if (l != 0 && labels.contains(l)) sum += w;
  }
  return sum;
}

/// Mean world position of every voxel carrying one of `labels`.
inline Vec3 oracle_center_of_mass(const LabelVolume& vol, const LabelSet& labels) {
  Vec3 sum = Vec3::Zero();
  long n = 0;
  const auto& d = vol.dims();
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        const Label l = vol.at(i, j, k);
        if (l != 0 && labels.contains(l)) {
          sum += vol.frame().matrix().topLeftCorner<3, 3>() * Vec3(i, j, k) + vol.frame().matrix().topRightCorner<3, 1>();
          ++n;
        }
      }
    }
  }
  return sum / static_cast<double>(n);
}

/// Replays the alternating corner walk on a lattice of `cell` mm spanned by
/// the two signed axes through `start`; every acceptance test reads the oracle
/// occupancy at a lattice node. The default cell, 2^-7 mm, is finer than
/// 0.01 mm and divides every halved step of the default schedule exactly.
inline Vec3 replay_corner_walk(const LabelVolume& vol, const LabelSet& labels, const Vec3& start, const Vec3& axis_a,
                               const Vec3& axis_b, int sign_a, int sign_b, const BisectionConfig& cfg,
                               double cell = 0x1.0p-7) {
  const Vec3 a = axis_a.normalized() * sign_a;
  const Vec3 b = axis_b.normalized() * sign_b;
  std::unordered_map<std::int64_t, bool> memo;
  auto inside = [&](std::int64_t ia, std::int64_t ib) {
    const std::int64_t key = (ia << 32) ^ (ib & 0xffffffff);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    const Vec3 p = start + a * (static_cast<double>(ia) * cell) + b * (static_cast<double>(ib) * cell);
    const bool in = oracle_occupancy(vol, labels, p) >= 0.5;
    memo.emplace(key, in);
    return in;
  };
  std::int64_t pa = 0, pb = 0;
  double sa = cfg.initial_step_mm, sb = cfg.initial_step_mm;
  while (sa >= cfg.precision_mm || sb >= cfg.precision_mm) {
    if (sa >= cfg.precision_mm) {
      const auto n = static_cast<std::int64_t>(std::llround(sa / cell));
      if (inside(pa + n, pb)) pa += n; else sa *= 0.5;
    }
    if (sb >= cfg.precision_mm) {
      const auto n = static_cast<std::int64_t>(std::llround(sb / cell));
      if (inside(pa, pb + n)) pb += n; else sb *= 0.5;
    }
  }
  return start + a * (static_cast<double>(pa) * cell) + b * (static_cast<double>(pb) * cell);
}

/// Boundary beyond the farthest inside sample of a dense march.
inline Vec3 dense_ray_surface(const LabelVolume& vol, const LabelSet& labels, const Vec3& origin, const Vec3& dir,
                              double max_travel, double step = 0.001) {
  const Vec3 d = dir.normalized();
  double last = 0.0;
  for (double t = 0.0; t <= max_travel; t += step) {
    if (oracle_occupancy(vol, labels, origin + d * t) >= 0.5) last = t;
  }
  return origin + d * (last + 0.5 * step);
}

/// Volume on a regular grid filled by a world-space predicate. `origin` is
/// the world position of voxel (0,0,0).
inline std::shared_ptr<const LabelVolume> make_volume(const Dims& dims, const Vec3& spacing, const Vec3& origin,
                                                      const std::function<Label(const Vec3&)>& fill,
                                                      const Mat3& rotation = Mat3::Identity()) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation * spacing.asDiagonal();
  m.topRightCorner<3, 1>() = origin;
  const AffineFrame frame(m, WorldConvention::RAS);
  std::vector<Label> labels(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0);
  std::size_t off = 0;
  for (int k = 0; k < dims[2]; ++k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i, ++off) labels[off] = fill(frame.voxel_to_world(Vec3(i, j, k)));
    }
  }
  return std::make_shared<const LabelVolume>(dims, std::move(labels), frame);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("spinepoi-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// Single-vertebra dictionary for hand-built volumes: codes follow the
/// SPINEPS block scheme for `level`.
inline Label code_of(int v_id, Subregion s) { return kBlockSize * static_cast<Label>(v_id) + spineps_subregion_code(s); }

inline LocalFrame world_frame(const Vec3& origin = Vec3::Zero()) {
  LocalFrame f;
  f.origin = origin;
  f.superior = UnitVector::checked(Vec3(0, 0, 1));
  f.posterior = UnitVector::checked(Vec3(0, -1, 0));
  f.lateral = UnitVector::checked(Vec3(1, 0, 0));
  return f;
}

}  // namespace spinepoi::testing
