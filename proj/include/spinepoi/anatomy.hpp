// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "spinepoi/errors.hpp"
#include "spinepoi/geometry.hpp"
#include "spinepoi/grid.hpp"
#include "spinepoi/label_dictionary.hpp"

namespace spinepoi {

// ---------------------------------------------------------------------------
// Centers of mass
// ---------------------------------------------------------------------------

/// Voxel count, index sum and bounding box of one mask.
struct MaskStats {
  std::int64_t count = 0;
  Vec3 index_sum = Vec3::Zero();
  IndexBox box;

  void add(int i, int j, int k) {
    ++count;
    index_sum += Vec3(i, j, k);
    box.expand(i, j, k);
  }

  void merge(const MaskStats& o) {
    count += o.count;
    index_sum += o.index_sum;
    box.merge(o.box);
  }

  [[nodiscard]] bool empty() const noexcept { return count == 0; }
};

inline std::string describe(const LabelSet& set) {
  std::string s = "{";
  for (std::size_t i = 0; i < set.codes().size(); ++i) {
    if (i) s += ",";
    s += std::to_string(set.codes()[i]);
  }
  return s + "}";
}

/// Unweighted mean of the voxel centers carrying a label in `label_set`.
/// The affine is linear, so the mean index is mapped once.
inline WorldPoint center_of_mass(const LabelVolume& vol, const LabelSet& label_set) {
  MaskStats stats;
  const Dims& d = vol.dims();
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        const Label l = vol.at(i, j, k);
        if (l != 0 && label_set.contains(l)) stats.add(i, j, k);
      }
    }
  }
  if (stats.empty()) fail(ErrorCode::EmptySubregion, "no voxels carry a label in " + describe(label_set));
  return vol.frame().voxel_to_world(stats.index_sum / static_cast<double>(stats.count));
}

// ---------------------------------------------------------------------------
// Centerline spline
// ---------------------------------------------------------------------------

/// Natural cubic spline through ordered points, parameterized by cumulative
/// chord length. Coordinates are fitted independently.
class CenterlineSpline {
 public:
  explicit CenterlineSpline(std::vector<WorldPoint> points) : points_(std::move(points)) {
    if (points_.size() < 2) {
      fail(ErrorCode::InsufficientVertebrae, "a centerline needs at least 2 points, got " +
                                                 std::to_string(points_.size()));
    }
    const std::size_t n = points_.size();
    params_.assign(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
      const double h = (points_[i] - points_[i - 1]).norm();
      if (!(h > 1e-9)) {
        fail(ErrorCode::DegenerateCenterline, "control points " + std::to_string(i - 1) + " and " +
                                                  std::to_string(i) + " coincide");
      }
      params_[i] = params_[i - 1] + h;
    }
    solve_second_derivatives();
  }

  [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }
  [[nodiscard]] const std::vector<WorldPoint>& control_points() const noexcept { return points_; }
  [[nodiscard]] double param(std::size_t k) const { return params_.at(k); }
  [[nodiscard]] double length() const noexcept { return params_.back(); }

  [[nodiscard]] WorldPoint position(double t) const {
    const std::size_t i = segment(t);
    const double h = params_[i + 1] - params_[i];
    const double a = (params_[i + 1] - t) / h;
    const double b = (t - params_[i]) / h;
    return a * points_[i] + b * points_[i + 1] +
           ((a * a * a - a) * second_[i] + (b * b * b - b) * second_[i + 1]) * (h * h / 6.0);
  }

  [[nodiscard]] Vec3 derivative(double t) const {
    const std::size_t i = segment(t);
    const double h = params_[i + 1] - params_[i];
    const double a = (params_[i + 1] - t) / h;
    const double b = (t - params_[i]) / h;
    return (points_[i + 1] - points_[i]) / h - (3.0 * a * a - 1.0) / 6.0 * h * second_[i] +
           (3.0 * b * b - 1.0) / 6.0 * h * second_[i + 1];
  }

 private:
  [[nodiscard]] std::size_t segment(double t) const {
    const auto it = std::upper_bound(params_.begin(), params_.end(), t);
    std::size_t i = it == params_.begin() ? 0 : static_cast<std::size_t>(it - params_.begin()) - 1;
    return std::min(i, params_.size() - 2);
  }

  // Thomas algorithm on the interior rows; natural ends fix M_0 = M_{n-1} = 0.
  void solve_second_derivatives() {
    const std::size_t n = points_.size();
    second_.assign(n, Vec3::Zero());
    if (n < 3) return;
    const std::size_t m = n - 2;
    std::vector<double> diag(m), upper(m), lower(m);
    std::vector<Vec3> rhs(m);
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t i = r + 1;
      const double h0 = params_[i] - params_[i - 1];
      const double h1 = params_[i + 1] - params_[i];
      lower[r] = h0;
      diag[r] = 2.0 * (h0 + h1);
      upper[r] = h1;
      rhs[r] = 6.0 * ((points_[i + 1] - points_[i]) / h1 - (points_[i] - points_[i - 1]) / h0);
    }
    for (std::size_t r = 1; r < m; ++r) {
      const double w = lower[r] / diag[r - 1];
      diag[r] -= w * upper[r - 1];
      rhs[r] -= w * rhs[r - 1];
    }
    second_[m] = rhs[m - 1] / diag[m - 1];
    for (std::size_t r = m - 1; r-- > 0;) {
      second_[r + 1] = (rhs[r] - upper[r] * second_[r + 2]) / diag[r];
    }
  }

  std::vector<WorldPoint> points_;
  std::vector<double> params_;
  std::vector<Vec3> second_;
};

inline CenterlineSpline fit_centerline(std::vector<WorldPoint> points) {
  return CenterlineSpline(std::move(points));
}

struct CraniocaudalAxis {
  UnitVector up;
  UnitVector down;
};

/// Down is the spline derivative at control point `k` (points are ordered
/// cranial to caudal); up is its negation.
inline CraniocaudalAxis craniocaudal_axis(const CenterlineSpline& spline, std::size_t k) {
  if (k >= spline.size()) fail(ErrorCode::PreconditionViolation, "control point index out of range");
  const Vec3 d = spline.derivative(spline.param(k));
  if (!(d.norm() > 1e-12)) fail(ErrorCode::DegenerateCenterline, "zero tangent at control point " + std::to_string(k));
  const UnitVector down = UnitVector::normalize(d);
  return {-down, down};
}

// ---------------------------------------------------------------------------
// Vertebra and spine instances
// ---------------------------------------------------------------------------

class VertebraInstance {
 public:
  VertebraInstance(std::shared_ptr<const LabelVolume> volume, int v_id, std::string level,
                   std::array<LabelSet, kSubregionCount> codes, std::array<MaskStats, kSubregionCount> stats)
      : volume_(std::move(volume)), v_id_(v_id), level_(std::move(level)), codes_(std::move(codes)),
        stats_(stats) {
    if (stats_[index_of(Subregion::Corpus)].empty()) {
      fail(ErrorCode::EmptySubregion, "vertebra " + level_ + " has an empty corpus");
    }
  }

  [[nodiscard]] int v_id() const noexcept { return v_id_; }
  [[nodiscard]] const std::string& level() const noexcept { return level_; }
  [[nodiscard]] const LabelVolume& volume() const noexcept { return *volume_; }

  [[nodiscard]] VertebraInstance renamed(int v_id, std::string level) const {
    VertebraInstance copy = *this;
    copy.v_id_ = v_id;
    copy.level_ = std::move(level);
    return copy;
  }

  [[nodiscard]] const LabelSet& labels(Subregion s) const { return codes_[index_of(s)]; }
  [[nodiscard]] LabelSet labels(std::span<const Subregion> regions) const {
    LabelSet out;
    for (Subregion s : regions) out.merge(labels(s));
    return out;
  }

  [[nodiscard]] bool empty(Subregion s) const { return stats_[index_of(s)].empty(); }
  [[nodiscard]] std::int64_t voxel_count(Subregion s) const { return stats_[index_of(s)].count; }
  [[nodiscard]] const IndexBox& bbox(Subregion s) const { return stats_[index_of(s)].box; }
  [[nodiscard]] IndexBox bbox(std::span<const Subregion> regions) const {
    IndexBox out;
    for (Subregion s : regions) out.merge(bbox(s));
    return out;
  }

  [[nodiscard]] WorldPoint center_of_mass(Subregion s) const {
    const Subregion one[] = {s};
    return center_of_mass(one);
  }

  /// Center of mass of the union of `regions`; fails if the union is empty.
  [[nodiscard]] WorldPoint center_of_mass(std::span<const Subregion> regions) const {
    MaskStats total;
    std::string names;
    for (Subregion s : regions) {
      total.merge(stats_[index_of(s)]);
      if (!names.empty()) names += "+";
      names += to_string(s);
    }
    if (total.empty()) fail(ErrorCode::EmptySubregion, level_ + " " + names + " is empty");
    return volume_->frame().voxel_to_world(total.index_sum / static_cast<double>(total.count));
  }

 private:
  std::shared_ptr<const LabelVolume> volume_;
  int v_id_;
  std::string level_;
  std::array<LabelSet, kSubregionCount> codes_;
  std::array<MaskStats, kSubregionCount> stats_;
};

struct SpineInstance {
  std::shared_ptr<const LabelVolume> volume;
  std::vector<VertebraInstance> vertebrae;  // cranial to caudal
  std::optional<CenterlineSpline> centerline;
  std::vector<std::string> warnings;

  /// Cranio-caudal axis at vertebra `k`. A single vertebra falls back to the
  /// world superior axis.
  [[nodiscard]] CraniocaudalAxis axis_at(std::size_t k) const {
    if (centerline) return craniocaudal_axis(*centerline, k);
    const UnitVector up = UnitVector::checked(Vec3(0, 0, 1));
    return {up, -up};
  }
};

/// Groups voxels into vertebrae through the dictionary and orders them
/// cranial to caudal.
inline SpineInstance assemble_spine(std::shared_ptr<const LabelVolume> vol, const LabelDictionary& dict) {
  const auto& entries = dict.entries();
  // Dense code table; codes are small in every scheme we read.
  Label max_code = 0;
  for (const auto& e : entries) {
    for (const auto& set : e.codes) {
      for (Label c : set.codes()) max_code = std::max(max_code, c);
    }
  }
  constexpr std::int32_t kUnknown = -1;
  constexpr std::int32_t kIgnored = -2;
  std::vector<std::int32_t> slot(static_cast<std::size_t>(max_code) + 1, kUnknown);
  for (std::size_t e = 0; e < entries.size(); ++e) {
    for (Subregion s : kAllSubregions) {
      for (Label c : entries[e].codes[index_of(s)].codes()) {
        slot[c] = static_cast<std::int32_t>(e * kSubregionCount + index_of(s));
      }
    }
  }
  for (Label c : dict.ignored()) {
    if (c <= max_code && slot[c] == kUnknown) slot[c] = kIgnored;
  }

  std::vector<MaskStats> stats(entries.size() * kSubregionCount);
  std::vector<Label> undeclared;
  const Dims& d = vol->dims();
  const auto labels = vol->labels();
  std::size_t off = 0;
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i, ++off) {
        const Label l = labels[off];
        if (l == 0) continue;
        const std::int32_t s = l <= max_code ? slot[l] : kUnknown;
        if (s >= 0) {
          stats[static_cast<std::size_t>(s)].add(i, j, k);
        } else if (s == kUnknown && !dict.is_ignored(l) && undeclared.size() < 8 &&
                   std::find(undeclared.begin(), undeclared.end(), l) == undeclared.end()) {
          undeclared.push_back(l);
        }
      }
    }
  }
  if (!undeclared.empty()) {
    fail(ErrorCode::LabelDictionaryError,
         "volume contains label codes not declared in the dictionary: " + describe(LabelSet(undeclared)));
  }

  SpineInstance spine;
  spine.volume = vol;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    std::array<MaskStats, kSubregionCount> vstats;
    bool any = false;
    for (std::size_t s = 0; s < kSubregionCount; ++s) {
      vstats[s] = stats[e * kSubregionCount + s];
      any = any || !vstats[s].empty();
    }
    if (!any) continue;
    const std::string name = entries[e].level.empty() ? "#" + std::to_string(e) : entries[e].level;
    if (vstats[index_of(Subregion::Corpus)].empty()) {
      spine.warnings.push_back("vertebra " + name + " has subregions but no corpus; ignored");
      continue;
    }
    spine.vertebrae.emplace_back(vol, entries[e].v_id, entries[e].level, entries[e].codes, vstats);
  }
  if (spine.vertebrae.empty()) fail(ErrorCode::EmptySpine, "no corpus voxels found for any declared vertebra");

  if (spine.vertebrae.size() == 1) {
    if (dict.sequential()) spine.vertebrae[0] = spine.vertebrae[0].renamed(1, vid_to_level(1));
    spine.warnings.push_back("single vertebra: cranio-caudal axis taken from the volume's superior axis");
  } else {
    // Principal direction of the corpus centers, pointing caudally.
    const std::size_t n = spine.vertebrae.size();
    std::vector<WorldPoint> centers;
    centers.reserve(n);
    for (const auto& v : spine.vertebrae) centers.push_back(v.center_of_mass(Subregion::Corpus));
    Vec3 mean = Vec3::Zero();
    for (const auto& c : centers) mean += c;
    mean /= static_cast<double>(n);
    Mat3 cov = Mat3::Zero();
    for (const auto& c : centers) cov += (c - mean) * (c - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    Vec3 axis = eig.eigenvectors().col(2);
    if (axis.z() > 0.0) axis = -axis;
    std::vector<double> proj(n);
    for (std::size_t i = 0; i < n; ++i) proj[i] = (centers[i] - mean).dot(axis);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (dict.sequential()) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return proj[a] < proj[b]; });
    } else {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return spine.vertebrae[a].v_id() < spine.vertebrae[b].v_id();
      });
      bool increasing = true;
      bool decreasing = true;
      for (std::size_t i = 1; i < n; ++i) {
        increasing = increasing && proj[order[i]] > proj[order[i - 1]];
        decreasing = decreasing && proj[order[i]] < proj[order[i - 1]];
      }
      if (!increasing && !decreasing) {
        fail(ErrorCode::LabelDictionaryError, "declared level order contradicts the spatial order of the corpora");
      }
    }
    std::vector<VertebraInstance> sorted;
    sorted.reserve(n);
    std::vector<WorldPoint> ordered_centers;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& v = spine.vertebrae[order[i]];
      sorted.push_back(dict.sequential() ? v.renamed(static_cast<int>(i) + 1, vid_to_level(static_cast<int>(i) + 1)) : v);
      ordered_centers.push_back(centers[order[i]]);
    }
    spine.vertebrae = std::move(sorted);
    spine.centerline.emplace(std::move(ordered_centers));
  }
  return spine;
}

}  // namespace spinepoi
