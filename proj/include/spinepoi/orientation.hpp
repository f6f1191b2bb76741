// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spinepoi/anatomy.hpp"
#include "spinepoi/errors.hpp"
#include "spinepoi/geometry.hpp"
#include "spinepoi/grid.hpp"

namespace spinepoi {

/// Orthonormal anatomical triad anchored at the corpus center of mass.
/// lateral = superior x posterior, which points to the subject's right.
struct LocalFrame {
  WorldPoint origin = WorldPoint::Zero();
  UnitVector superior;
  UnitVector posterior;
  UnitVector lateral;

  [[nodiscard]] UnitVector inferior() const { return -superior; }
  [[nodiscard]] UnitVector anterior() const { return -posterior; }
  [[nodiscard]] UnitVector right() const { return lateral; }
  [[nodiscard]] UnitVector left() const { return -lateral; }

  /// Columns (superior, posterior, lateral); determinant +1.
  [[nodiscard]] Mat3 rotation() const {
    Mat3 r;
    r.col(0) = superior.vec();
    r.col(1) = posterior.vec();
    r.col(2) = lateral.vec();
    return r;
  }
};

enum class OrientationMethod { Cms3dAllPosterior, Cms3dArcusSpinosus, Projection2d };

constexpr std::array<OrientationMethod, 3> kAllOrientationMethods = {
    OrientationMethod::Cms3dAllPosterior, OrientationMethod::Cms3dArcusSpinosus, OrientationMethod::Projection2d};

/// CLI spelling.
constexpr std::string_view to_string(OrientationMethod m) {
  switch (m) {
    case OrientationMethod::Cms3dAllPosterior: return "cms3d-all";
    case OrientationMethod::Cms3dArcusSpinosus: return "cms3d-arcspin";
    case OrientationMethod::Projection2d: return "proj2d";
  }
  return "?";
}

inline OrientationMethod parse_orientation_method(std::string_view s) {
  for (auto m : kAllOrientationMethods) {
    if (to_string(m) == s) return m;
  }
  fail(ErrorCode::FormatError, "unknown orientation method '" + std::string(s) + "'");
}

constexpr std::array<Subregion, 2> kArcusSpinosus = {Subregion::Arcus, Subregion::Spinosus};

namespace detail {

/// Centroid of the silhouette of `regions` projected along `up` onto the plane
/// through `origin`, as an in-plane offset from `origin`. The projection is
/// binned on a square pixel grid so voxels stacked along `up` count once;
/// each occupied pixel contributes the mean position of the voxels that fell
/// into it.
inline Vec3 projected_silhouette_offset(const VertebraInstance& v, std::span<const Subregion> regions,
                                        const WorldPoint& origin, const UnitVector& up) {
  const LabelVolume& vol = v.volume();
  const AffineFrame& frame = vol.frame();
  const LabelSet labels = v.labels(regions);
  const IndexBox box = v.bbox(regions);

  // In-plane basis and pixel lattice are tied to the voxel grid, so the result
  // moves with the data under rigid changes of the affine.
  int best_axis = 0;
  double best_dot = 2.0;
  for (int a = 0; a < 3; ++a) {
    const double d = std::abs(frame.axis_direction(a).dot(up.vec()));
    if (d < best_dot - 1e-12) {
      best_dot = d;
      best_axis = a;
    }
  }
  const Vec3 seed = frame.axis_direction(best_axis);
  const Vec3 u = (seed - seed.dot(up.vec()) * up.vec()).normalized();
  const Vec3 w = up.vec().cross(u);
  const double pixel = frame.spacing().minCoeff();
  const WorldPoint anchor = frame.voxel_to_world(Vec3::Zero());
  // Irrational phase: projected lattice points never sit on a pixel edge.
  constexpr double kPixelPhase = 0.28867513459481287;  // 1 / (2 sqrt 3)
  auto bin = [&](double coord) { return static_cast<std::int64_t>(std::floor(coord / pixel + kPixelPhase)); };

  double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
  for (int ci = 0; ci < 8; ++ci) {
    const Vec3 corner(ci & 1 ? box.hi[0] : box.lo[0], ci & 2 ? box.hi[1] : box.lo[1], ci & 4 ? box.hi[2] : box.lo[2]);
    const Vec3 d = frame.voxel_to_world(corner) - anchor;
    amin = std::min(amin, d.dot(u));
    amax = std::max(amax, d.dot(u));
    bmin = std::min(bmin, d.dot(w));
    bmax = std::max(bmax, d.dot(w));
  }
  const std::int64_t ia0 = bin(amin) - 1;
  const std::int64_t ib0 = bin(bmin) - 1;
  const std::int64_t na = bin(amax) - ia0 + 2;
  const std::int64_t nb = bin(bmax) - ib0 + 2;
  struct Cell {
    double a = 0.0, b = 0.0;
    std::int64_t n = 0;
  };
  std::vector<Cell> cells(static_cast<std::size_t>(na * nb));

  for (int k = box.lo[2]; k <= box.hi[2]; ++k) {
    for (int j = box.lo[1]; j <= box.hi[1]; ++j) {
      for (int i = box.lo[0]; i <= box.hi[0]; ++i) {
        const Label l = vol.at(i, j, k);
        if (l == 0 || !labels.contains(l)) continue;
        const Vec3 d = frame.voxel_to_world(Vec3(i, j, k)) - anchor;
        const double a = d.dot(u);
        const double b = d.dot(w);
        const std::int64_t ia = bin(a) - ia0;
        const std::int64_t ib = bin(b) - ib0;
        if (ia < 0 || ib < 0 || ia >= na || ib >= nb) continue;
        Cell& c = cells[static_cast<std::size_t>(ib * na + ia)];
        c.a += a;
        c.b += b;
        ++c.n;
      }
    }
  }
  double sa = 0.0, sb = 0.0;
  std::int64_t count = 0;
  for (const Cell& c : cells) {
    if (c.n == 0) continue;
    sa += c.a / static_cast<double>(c.n);
    sb += c.b / static_cast<double>(c.n);
    ++count;
  }
  if (count == 0) fail(ErrorCode::EmptySubregion, v.level() + " projection is empty");
  const Vec3 centroid = anchor + u * (sa / static_cast<double>(count)) + w * (sb / static_cast<double>(count));
  const Vec3 offset = centroid - origin;
  return offset - offset.dot(up.vec()) * up.vec();
}

}  // namespace detail

/// Unnormalized posterior estimate: corpus center of mass to the posterior
/// structures' center, by one of three strategies.
inline Vec3 posterior_raw(const VertebraInstance& v, const UnitVector& up, OrientationMethod method) {
  const WorldPoint corpus = v.center_of_mass(Subregion::Corpus);
  Vec3 raw;
  switch (method) {
    case OrientationMethod::Cms3dAllPosterior:
      raw = v.center_of_mass(kPosteriorSubregions) - corpus;
      break;
    case OrientationMethod::Cms3dArcusSpinosus:
      raw = v.center_of_mass(kArcusSpinosus) - corpus;
      break;
    case OrientationMethod::Projection2d:
      (void)v.center_of_mass(kArcusSpinosus);  // raises EmptySubregion with a useful message
      raw = detail::projected_silhouette_offset(v, kArcusSpinosus, corpus, up);
      break;
  }
  if (!(raw.norm() >= 1e-6)) {
    fail(ErrorCode::DegenerateOrientation, v.level() + ": posterior structures coincide with the corpus center");
  }
  return raw;
}

/// Gram-Schmidt step: removes the `up` component and normalizes.
inline UnitVector orthogonalize(const Vec3& raw, const UnitVector& up) {
  const double n = raw.norm();
  if (!(n > 0.0)) fail(ErrorCode::DegenerateOrientation, "zero posterior vector");
  const Vec3 rest = raw - raw.dot(up.vec()) * up.vec();
  // Angle between raw and up must exceed 1e-4 rad.
  if (!(rest.norm() > n * std::sin(1e-4))) {
    fail(ErrorCode::DegenerateOrientation, "posterior vector is parallel to the cranio-caudal axis");
  }
  return UnitVector::normalize(rest);
}

inline LocalFrame build_frame(const WorldPoint& origin, const UnitVector& up, const UnitVector& posterior) {
  if (std::abs(up.dot(posterior)) > 1e-6) {
    fail(ErrorCode::PreconditionViolation, "superior and posterior axes are not orthogonal");
  }
  LocalFrame f;
  f.origin = origin;
  f.superior = up;
  f.posterior = posterior;
  f.lateral = UnitVector::normalize(up.vec().cross(posterior.vec()));
  return f;
}

/// Full frame for one vertebra.
inline LocalFrame estimate_frame(const VertebraInstance& v, const UnitVector& up, OrientationMethod method) {
  const Vec3 raw = posterior_raw(v, up, method);
  return build_frame(v.center_of_mass(Subregion::Corpus), up, orthogonalize(raw, up));
}

inline double angular_deviation(const Vec3& a, const Vec3& b) {
  const double c = std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0);
  return rad_to_deg(std::acos(c));
}

struct OrientationStats {
  double mean_deg = 0.0;
  double std_deg = 0.0;
  double frac_le_3 = 0.0;
  double frac_le_10 = 0.0;
  std::size_t n = 0;
  std::size_t failures = 0;
};

/// Aggregates per-vertebra deviations. A missing value is a recorded failure:
/// it counts in n (and so lowers both fractions) but not in mean/std.
/// The standard deviation is the population one.
inline OrientationStats summarize_deviations(std::span<const std::optional<double>> deviations) {
  OrientationStats s;
  s.n = deviations.size();
  if (s.n == 0) fail(ErrorCode::PreconditionViolation, "no vertebrae to evaluate");
  double sum = 0.0;
  std::size_t ok = 0, le3 = 0, le10 = 0;
  for (const auto& d : deviations) {
    if (!d) {
      ++s.failures;
      continue;
    }
    sum += *d;
    ++ok;
    if (*d <= 3.0) ++le3;
    if (*d <= 10.0) ++le10;
  }
  if (ok > 0) {
    s.mean_deg = sum / static_cast<double>(ok);
    double var = 0.0;
    for (const auto& d : deviations) {
      if (d) var += (*d - s.mean_deg) * (*d - s.mean_deg);
    }
    s.std_deg = std::sqrt(var / static_cast<double>(ok));
  }
  s.frac_le_3 = static_cast<double>(le3) / static_cast<double>(s.n);
  s.frac_le_10 = static_cast<double>(le10) / static_cast<double>(s.n);
  return s;
}

}  // namespace spinepoi
