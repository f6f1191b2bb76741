// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "spinepoi/anatomy.hpp"
#include "spinepoi/errors.hpp"
#include "spinepoi/geometry.hpp"
#include "spinepoi/grid.hpp"
#include "spinepoi/orientation.hpp"

namespace spinepoi {

// ---------------------------------------------------------------------------
// Landmark names
// ---------------------------------------------------------------------------

/// Declaration order is the serialization order.
enum class LandmarkName {
  SpinosusTip,
  CostalTipLeft,
  CostalTipRight,
  SupArticularTipLeft,
  SupArticularTipRight,
  InfArticularTipLeft,
  InfArticularTipRight,
  CorpusSup,
  CorpusInf,
  CorpusAnt,
  CorpusPost,
  CorpusLeft,
  CorpusRight,
  CornerSupAnt,
  CornerSupPost,
  CornerInfAnt,
  CornerInfPost,
  CorpusSupShiftedLeft,
  CorpusInfShiftedLeft,
  CorpusAntShiftedLeft,
  CorpusPostShiftedLeft,
  CornerSupAntShiftedLeft,
  CornerSupPostShiftedLeft,
  CornerInfAntShiftedLeft,
  CornerInfPostShiftedLeft,
  CorpusSupShiftedRight,
  CorpusInfShiftedRight,
  CorpusAntShiftedRight,
  CorpusPostShiftedRight,
  CornerSupAntShiftedRight,
  CornerSupPostShiftedRight,
  CornerInfAntShiftedRight,
  CornerInfPostShiftedRight,
  FlavumSup,
  FlavumInf,
};

constexpr std::size_t kLandmarkCount = 35;

constexpr std::array<std::string_view, kLandmarkCount> kLandmarkNames = {
    "SpinosusTip",
    "CostalTipLeft",
    "CostalTipRight",
    "SupArticularTipLeft",
    "SupArticularTipRight",
    "InfArticularTipLeft",
    "InfArticularTipRight",
    "CorpusSup",
    "CorpusInf",
    "CorpusAnt",
    "CorpusPost",
    "CorpusLeft",
    "CorpusRight",
    "CornerSupAnt",
    "CornerSupPost",
    "CornerInfAnt",
    "CornerInfPost",
    "CorpusSupShiftedLeft",
    "CorpusInfShiftedLeft",
    "CorpusAntShiftedLeft",
    "CorpusPostShiftedLeft",
    "CornerSupAntShiftedLeft",
    "CornerSupPostShiftedLeft",
    "CornerInfAntShiftedLeft",
    "CornerInfPostShiftedLeft",
    "CorpusSupShiftedRight",
    "CorpusInfShiftedRight",
    "CorpusAntShiftedRight",
    "CorpusPostShiftedRight",
    "CornerSupAntShiftedRight",
    "CornerSupPostShiftedRight",
    "CornerInfAntShiftedRight",
    "CornerInfPostShiftedRight",
    "FlavumSup",
    "FlavumInf",
};

constexpr std::string_view to_string(LandmarkName n) { return kLandmarkNames[static_cast<std::size_t>(n)]; }

inline std::optional<LandmarkName> parse_landmark(std::string_view s) {
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    if (kLandmarkNames[i] == s) return static_cast<LandmarkName>(i);
  }
  return std::nullopt;
}

constexpr std::array<LandmarkName, 4> kCornerNames = {LandmarkName::CornerSupAnt, LandmarkName::CornerSupPost,
                                                      LandmarkName::CornerInfAnt, LandmarkName::CornerInfPost};

/// Shifted variant of a midline corpus landmark (sup/inf/ant/post or corner).
constexpr LandmarkName shifted(LandmarkName base, bool right) {
  int offset = -1;
  switch (base) {
    case LandmarkName::CorpusSup: offset = 0; break;
    case LandmarkName::CorpusInf: offset = 1; break;
    case LandmarkName::CorpusAnt: offset = 2; break;
    case LandmarkName::CorpusPost: offset = 3; break;
    case LandmarkName::CornerSupAnt: offset = 4; break;
    case LandmarkName::CornerSupPost: offset = 5; break;
    case LandmarkName::CornerInfAnt: offset = 6; break;
    case LandmarkName::CornerInfPost: offset = 7; break;
    default: break;
  }
  const int first = static_cast<int>(right ? LandmarkName::CorpusSupShiftedRight : LandmarkName::CorpusSupShiftedLeft);
  return static_cast<LandmarkName>(first + offset);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct BisectionConfig {
  double precision_mm = 0.05;
  double initial_step_mm = 4.0;
  int max_iterations = 200;

  void validate() const {
    if (!(precision_mm > 0.0) || !(initial_step_mm > 0.0) || !(precision_mm < initial_step_mm) || max_iterations < 1) {
      fail(ErrorCode::PreconditionViolation, "bisection config requires 0 < precision < initial step");
    }
  }
};

struct RayConfig {
  double march_step_mm = 0.25;
  /// 0 selects the diagonal of the target mask's bounding box.
  double max_travel_mm = 0.0;

  void validate(const LabelVolume& vol) const {
    if (!(march_step_mm > 0.0)) fail(ErrorCode::PreconditionViolation, "ray march step must be positive");
    if (march_step_mm > vol.frame().spacing().minCoeff() + 1e-12) {
      fail(ErrorCode::PreconditionViolation, "ray march step exceeds the smallest voxel spacing");
    }
  }
};

/// How the vertebra-dependent factor rescales the one-third SAP shift.
enum class ShiftMode { Divide, Multiply };

constexpr std::string_view to_string(ShiftMode m) { return m == ShiftMode::Divide ? "divide" : "multiply"; }

inline ShiftMode parse_shift_mode(std::string_view s) {
  if (s == "divide") return ShiftMode::Divide;
  if (s == "multiply") return ShiftMode::Multiply;
  fail(ErrorCode::FormatError, "unknown shift mode '" + std::string(s) + "'");
}

struct ExtractionConfig {
  OrientationMethod method = OrientationMethod::Projection2d;
  BisectionConfig bisection;
  RayConfig ray;
  ShiftMode shift_mode = ShiftMode::Divide;
  int threads = 1;
};

// ---------------------------------------------------------------------------
// Partial results
// ---------------------------------------------------------------------------

struct Skip {
  int v_id = 0;
  std::string name;
  std::string reason;

  friend bool operator==(const Skip&, const Skip&) = default;
};

/// Landmarks of one vertebra plus whatever could not be computed.
struct LandmarkBatch {
  std::vector<std::pair<LandmarkName, WorldPoint>> points;
  std::vector<Skip> skips;
  std::vector<Skip> notes;  // provenance for fallbacks that still produced a point

  void add(LandmarkName n, const WorldPoint& p) { points.emplace_back(n, p); }
  void skip(int v_id, LandmarkName n, std::string reason) { skips.push_back({v_id, std::string(to_string(n)), std::move(reason)}); }
  void note(int v_id, std::string name, std::string text) { notes.push_back({v_id, std::move(name), std::move(text)}); }

  [[nodiscard]] std::optional<WorldPoint> find(LandmarkName n) const {
    for (const auto& [name, p] : points) {
      if (name == n) return p;
    }
    return std::nullopt;
  }

  void append(LandmarkBatch other) {
    for (auto& p : other.points) points.push_back(std::move(p));
    for (auto& s : other.skips) skips.push_back(std::move(s));
    for (auto& s : other.notes) notes.push_back(std::move(s));
  }
};

// ---------------------------------------------------------------------------
// Primitive searches
// ---------------------------------------------------------------------------

/// Marches from `origin` along `direction` and returns the boundary beyond the
/// farthest inside sample, refined by scalar bisection on occupancy 0.5.
/// Interior gaps along the ray are stepped over.
inline WorldPoint raycast_surface_point(const LabelVolume& vol, const LabelSet& labels, const WorldPoint& origin,
                                        const Vec3& direction, const RayConfig& ray, const BisectionConfig& bis,
                                        double max_travel_mm) {
  if (!(direction.norm() > 0.0)) fail(ErrorCode::PreconditionViolation, "ray direction is zero");
  if (!is_inside(vol, labels, origin)) fail(ErrorCode::RayOriginOutside, "ray origin lies outside the mask");
  const Vec3 dir = direction.normalized();
  const double step = ray.march_step_mm;
  const auto samples = static_cast<long>(std::ceil(max_travel_mm / step));

  long last_inside = -1;
  for (long s = 0; s <= samples; ++s) {
    if (is_inside(vol, labels, origin + dir * (static_cast<double>(s) * step))) last_inside = s;
  }
  if (last_inside < 0) fail(ErrorCode::RayMiss, "no inside sample along the ray");

  double lo = static_cast<double>(last_inside) * step;
  double hi = lo + step;
  if (is_inside(vol, labels, origin + dir * hi)) return origin + dir * lo;  // travel limit reached
  while (hi - lo >= bis.precision_mm) {
    const double mid = 0.5 * (lo + hi);
    if (is_inside(vol, labels, origin + dir * mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return origin + dir * (0.5 * (lo + hi));
}

inline WorldPoint raycast_surface_point(const LabelVolume& vol, const LabelSet& labels, const WorldPoint& origin,
                                        const Vec3& direction, const RayConfig& ray, const BisectionConfig& bis,
                                        const IndexBox& mask_box) {
  const double travel = ray.max_travel_mm > 0.0 ? ray.max_travel_mm : world_diagonal(vol.frame(), mask_box);
  return raycast_surface_point(vol, labels, origin, direction, ray, bis, travel);
}

/// Greedy outward walk in the plane of two axes: alternately tries a step
/// along each signed axis, keeps it if the new point is inside and halves that
/// axis' step otherwise. Stops once both steps drop below the precision.
inline WorldPoint corner_bisection_2d(const LabelVolume& vol, const LabelSet& labels, const WorldPoint& start,
                                      const Vec3& axis_a, const Vec3& axis_b, int sign_a, int sign_b,
                                      const BisectionConfig& cfg) {
  if (std::abs(axis_a.normalized().dot(axis_b.normalized())) > 1e-6) {
    fail(ErrorCode::PreconditionViolation, "bisection axes are not orthogonal");
  }
  if (!is_inside(vol, labels, start)) fail(ErrorCode::BisectionStartOutside, "bisection start lies outside the mask");
  const Vec3 da = axis_a.normalized() * static_cast<double>(sign_a);
  const Vec3 db = axis_b.normalized() * static_cast<double>(sign_b);
  WorldPoint p = start;
  double sa = cfg.initial_step_mm;
  double sb = cfg.initial_step_mm;
  int iterations = 0;
  auto attempt = [&](const Vec3& dir, double& s) {
    if (++iterations > cfg.max_iterations) fail(ErrorCode::BisectionDiverged, "bisection exceeded max_iterations");
    const WorldPoint trial = p + dir * s;
    if (is_inside(vol, labels, trial)) {
      p = trial;
    } else {
      s *= 0.5;
    }
  };
  while (sa >= cfg.precision_mm || sb >= cfg.precision_mm) {
    if (sa >= cfg.precision_mm) attempt(da, sa);
    if (sb >= cfg.precision_mm) attempt(db, sb);
  }
  return p;
}

/// One-axis version of the walk above.
inline WorldPoint bisection_walk_1d(const LabelVolume& vol, const LabelSet& labels, const WorldPoint& start,
                                    const Vec3& direction, const BisectionConfig& cfg) {
  if (!is_inside(vol, labels, start)) fail(ErrorCode::BisectionStartOutside, "bisection start lies outside the mask");
  const Vec3 d = direction.normalized();
  WorldPoint p = start;
  double s = cfg.initial_step_mm;
  int iterations = 0;
  while (s >= cfg.precision_mm) {
    if (++iterations > cfg.max_iterations) fail(ErrorCode::BisectionDiverged, "bisection exceeded max_iterations");
    const WorldPoint trial = p + d * s;
    if (is_inside(vol, labels, trial)) {
      p = trial;
    } else {
      s *= 0.5;
    }
  }
  return p;
}

/// Nearest labeled voxel center to `p` within the mask's bounding box.
inline std::optional<WorldPoint> nearest_inside_voxel(const LabelVolume& vol, const LabelSet& labels,
                                                      const IndexBox& box, const WorldPoint& p) {
  std::optional<WorldPoint> best;
  double best_d = 1e300;
  for (int k = box.lo[2]; k <= box.hi[2]; ++k) {
    for (int j = box.lo[1]; j <= box.hi[1]; ++j) {
      for (int i = box.lo[0]; i <= box.hi[0]; ++i) {
        const Label l = vol.at(i, j, k);
        if (l == 0 || !labels.contains(l)) continue;
        const WorldPoint c = vol.center(i, j, k);
        const double d = (c - p).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Landmark groups
// ---------------------------------------------------------------------------

/// Tips of the spinous, costal and articular processes. Each ray starts at the
/// center of mass of its own subregion.
inline LandmarkBatch process_tip_pois(const VertebraInstance& v, const LocalFrame& f, const ExtractionConfig& cfg) {
  struct Target {
    LandmarkName name;
    Subregion region;
    Vec3 direction;
  };
  const Vec3 l = f.lateral.vec();
  const Vec3 p = f.posterior.vec();
  const Vec3 up = f.superior.vec();
  const std::array<Target, 7> targets = {{
      {LandmarkName::SpinosusTip, Subregion::Spinosus, -up + 0.2 * p},
      {LandmarkName::CostalTipLeft, Subregion::CostalLeft, 0.5 * (-l) + 0.5 * p},
      {LandmarkName::CostalTipRight, Subregion::CostalRight, 0.5 * l + 0.5 * p},
      {LandmarkName::SupArticularTipLeft, Subregion::SupArticularLeft, up},
      {LandmarkName::SupArticularTipRight, Subregion::SupArticularRight, up},
      {LandmarkName::InfArticularTipLeft, Subregion::InfArticularLeft, -up},
      {LandmarkName::InfArticularTipRight, Subregion::InfArticularRight, -up},
  }};
  LandmarkBatch out;
  for (const auto& t : targets) {
    if (v.empty(t.region)) {
      out.skip(v.v_id(), t.name, "empty subregion");
      continue;
    }
    try {
      out.add(t.name, raycast_surface_point(v.volume(), v.labels(t.region), v.center_of_mass(t.region), t.direction,
                                            cfg.ray, cfg.bisection, v.bbox(t.region)));
    } catch (const Error& e) {
      out.skip(v.v_id(), t.name, e.what());
    }
  }
  return out;
}

/// Start point for corpus searches: the center of mass, or the nearest corpus
/// voxel when the center falls outside the mask.
inline WorldPoint corpus_origin(const VertebraInstance& v, const LocalFrame& f, LandmarkBatch& notes) {
  const LabelSet& corpus = v.labels(Subregion::Corpus);
  if (is_inside(v.volume(), corpus, f.origin)) return f.origin;
  auto near = nearest_inside_voxel(v.volume(), corpus, v.bbox(Subregion::Corpus), f.origin);
  notes.note(v.v_id(), "Corpus", "center of mass outside corpus; searches start at nearest corpus voxel");
  return *near;  // corpus is non-empty by construction
}

/// One surface point along each of the six frame directions.
inline LandmarkBatch corpus_cardinal_pois(const VertebraInstance& v, const LocalFrame& f, const ExtractionConfig& cfg) {
  LandmarkBatch out;
  const WorldPoint o = corpus_origin(v, f, out);
  const std::array<std::pair<LandmarkName, Vec3>, 6> dirs = {{
      {LandmarkName::CorpusSup, f.superior.vec()},
      {LandmarkName::CorpusInf, -f.superior.vec()},
      {LandmarkName::CorpusAnt, -f.posterior.vec()},
      {LandmarkName::CorpusPost, f.posterior.vec()},
      {LandmarkName::CorpusLeft, -f.lateral.vec()},
      {LandmarkName::CorpusRight, f.lateral.vec()},
  }};
  for (const auto& [name, dir] : dirs) {
    try {
      out.add(name, raycast_surface_point(v.volume(), v.labels(Subregion::Corpus), o, dir, cfg.ray, cfg.bisection,
                                          v.bbox(Subregion::Corpus)));
    } catch (const Error& e) {
      out.skip(v.v_id(), name, e.what());
    }
  }
  return out;
}

/// (superior sign, posterior sign) per corner; anterior is -posterior.
constexpr std::array<std::pair<int, int>, 4> kCornerSigns = {{{+1, -1}, {+1, +1}, {-1, -1}, {-1, +1}}};

inline LandmarkBatch corners_from(const VertebraInstance& v, const LocalFrame& f, const WorldPoint& start,
                                  const BisectionConfig& cfg, bool shifted_right, bool is_shifted) {
  LandmarkBatch out;
  for (std::size_t c = 0; c < 4; ++c) {
    const LandmarkName name = is_shifted ? shifted(kCornerNames[c], shifted_right) : kCornerNames[c];
    try {
      out.add(name, corner_bisection_2d(v.volume(), v.labels(Subregion::Corpus), start, f.superior.vec(),
                                        f.posterior.vec(), kCornerSigns[c].first, kCornerSigns[c].second, cfg));
    } catch (const Error& e) {
      out.skip(v.v_id(), name, e.what());
    }
  }
  return out;
}

/// Four mid-sagittal corners of the vertebral body.
inline LandmarkBatch corpus_corners(const VertebraInstance& v, const LocalFrame& f, const BisectionConfig& cfg) {
  LandmarkBatch out;
  const WorldPoint o = corpus_origin(v, f, out);
  out.append(corners_from(v, f, o, cfg, false, false));
  return out;
}

/// Ligamentum flavum attachments on the anterior surface of the arch, one in
/// the axial plane of each posterior corner.
inline LandmarkBatch flavum_points(const VertebraInstance& v, const LocalFrame& f, const LandmarkBatch& corners,
                                   const ExtractionConfig& cfg) {
  LandmarkBatch out;
  constexpr double kRecoveryRadiusMm = 10.0;
  const std::array<std::pair<LandmarkName, LandmarkName>, 2> pairs = {{
      {LandmarkName::FlavumSup, LandmarkName::CornerSupPost},
      {LandmarkName::FlavumInf, LandmarkName::CornerInfPost},
  }};
  for (const auto& [name, corner_name] : pairs) {
    if (v.empty(Subregion::Arcus)) {
      out.skip(v.v_id(), name, "empty subregion Arcus");
      continue;
    }
    const auto corner = corners.find(corner_name);
    if (!corner) {
      out.skip(v.v_id(), name, std::string("missing ") + std::string(to_string(corner_name)));
      continue;
    }
    const LabelVolume& vol = v.volume();
    const LabelSet& arcus = v.labels(Subregion::Arcus);
    const Vec3 up = f.superior.vec();
    const Vec3 post = f.posterior.vec();
    const WorldPoint com = v.center_of_mass(Subregion::Arcus);
    WorldPoint start = com - (com - *corner).dot(up) * up;

    if (!is_inside(vol, arcus, start)) {
      // The arch usually surrounds the canal: look backwards for the lamina
      // first, then anywhere in the plane.
      std::optional<WorldPoint> found;
      const double step = cfg.ray.march_step_mm;
      for (double t = step; t <= kRecoveryRadiusMm + 1e-12 && !found; t += step) {
        const WorldPoint q = start + post * t;
        if (is_inside(vol, arcus, q)) found = q;
      }
      if (!found) {
        const Vec3 a = post;
        const Vec3 b = f.lateral.vec();
        double best = 1e300;
        const int n = static_cast<int>(std::floor(kRecoveryRadiusMm / step));
        for (int ib = -n; ib <= n; ++ib) {
          for (int ia = -n; ia <= n; ++ia) {
            const double d2 = (ia * ia + ib * ib) * step * step;
            if (d2 > kRecoveryRadiusMm * kRecoveryRadiusMm || d2 >= best) continue;
            const WorldPoint q = start + a * (ia * step) + b * (ib * step);
            if (is_inside(vol, arcus, q)) {
              best = d2;
              found = q;
            }
          }
        }
      }
      if (!found) {
        out.skip(v.v_id(), name, "no arcus voxel within 10 mm of the projected start");
        continue;
      }
      start = *found;
      out.note(v.v_id(), std::string(to_string(name)), "projected arcus center outside arcus; start moved into the arch");
    }
    try {
      out.add(name, bisection_walk_1d(vol, arcus, start, -post, cfg.bisection));
    } catch (const Error& e) {
      out.skip(v.v_id(), name, e.what());
    }
  }
  return out;
}

/// Vertebra-dependent factor, 2 at C1 falling linearly to 12/11 at v_id 11,
/// then 1.
constexpr double shift_factor(int v_id) {
  if (v_id <= 11) return (12.0 - static_cast<double>(v_id)) / 11.0 + 1.0;
  return 1.0;
}

struct LateralShift {
  double mm = 0.0;
  bool fallback = false;
};

/// One third of the distance between the superior articular centers, rescaled
/// by shift_factor. Without both SAP masks, one sixth of the corpus width from
/// the lateral cardinal points is used instead.
inline std::optional<LateralShift> lateral_shift_mm(const VertebraInstance& v, const LandmarkBatch& cardinal,
                                                    ShiftMode mode) {
  if (!v.empty(Subregion::SupArticularLeft) && !v.empty(Subregion::SupArticularRight)) {
    const double dist =
        (v.center_of_mass(Subregion::SupArticularLeft) - v.center_of_mass(Subregion::SupArticularRight)).norm();
    const double f = shift_factor(v.v_id());
    return LateralShift{mode == ShiftMode::Divide ? dist / 3.0 / f : dist / 3.0 * f, false};
  }
  const auto left = cardinal.find(LandmarkName::CorpusLeft);
  const auto right = cardinal.find(LandmarkName::CorpusRight);
  if (!left || !right) return std::nullopt;
  return LateralShift{(*left - *right).norm() / 6.0, true};
}

/// Corners and in-plane cardinal points recomputed in planes offset by
/// +-shift along the lateral axis.
inline LandmarkBatch shifted_pois(const VertebraInstance& v, const LocalFrame& f, double shift,
                                  const ExtractionConfig& cfg) {
  LandmarkBatch out;
  if (!(shift > 0.0)) fail(ErrorCode::PreconditionViolation, "lateral shift must be positive");
  const LabelVolume& vol = v.volume();
  const LabelSet& corpus = v.labels(Subregion::Corpus);
  const double pull_limit = vol.frame().spacing().maxCoeff();
  LandmarkBatch origin_notes;
  const WorldPoint center = corpus_origin(v, f, origin_notes);

  for (const bool right : {false, true}) {
    const double s = right ? 1.0 : -1.0;
    const Vec3 side = f.lateral.vec() * s;
    WorldPoint o = center + side * shift;
    const std::array<LandmarkName, 8> names = {
        shifted(LandmarkName::CorpusSup, right),    shifted(LandmarkName::CorpusInf, right),
        shifted(LandmarkName::CorpusAnt, right),    shifted(LandmarkName::CorpusPost, right),
        shifted(LandmarkName::CornerSupAnt, right), shifted(LandmarkName::CornerSupPost, right),
        shifted(LandmarkName::CornerInfAnt, right), shifted(LandmarkName::CornerInfPost, right),
    };
    if (!is_inside(vol, corpus, o)) {
      std::optional<WorldPoint> pulled;
      for (double t = cfg.ray.march_step_mm; t <= pull_limit + 1e-12; t += cfg.ray.march_step_mm) {
        const WorldPoint q = o - side * t;
        if (is_inside(vol, corpus, q)) {
          pulled = q;
          break;
        }
      }
      if (!pulled) {
        for (LandmarkName n : names) out.skip(v.v_id(), n, "offset outside corpus");
        continue;
      }
      o = *pulled;
      out.note(v.v_id(), right ? "ShiftedRight" : "ShiftedLeft", "offset origin pulled back into the corpus");
    }
    const std::array<std::pair<LandmarkName, Vec3>, 4> dirs = {{
        {names[0], f.superior.vec()},
        {names[1], -f.superior.vec()},
        {names[2], -f.posterior.vec()},
        {names[3], f.posterior.vec()},
    }};
    for (const auto& [name, dir] : dirs) {
      try {
        out.add(name, bisection_walk_1d(vol, corpus, o, dir, cfg.bisection));
      } catch (const Error& e) {
        out.skip(v.v_id(), name, e.what());
      }
    }
    out.append(corners_from(v, f, o, cfg.bisection, right, true));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PoiSet
// ---------------------------------------------------------------------------

/// Where PoiSet positions live: world millimeters in a convention, or voxel
/// indices of a grid whose affine maps into that convention.
struct CoordinateSpace {
  enum class Kind { World, Voxel };
  Kind kind = Kind::World;
  WorldConvention convention = WorldConvention::RAS;
  Mat4 affine = Mat4::Identity();  // voxel -> world, only meaningful for Voxel

  static CoordinateSpace world(WorldConvention c) { return {Kind::World, c, Mat4::Identity()}; }
  static CoordinateSpace voxel(const AffineFrame& f) { return {Kind::Voxel, f.convention(), f.matrix()}; }

  [[nodiscard]] WorldPoint to_world(const Vec3& p) const {
    if (kind == Kind::World) return p;
    return affine.topLeftCorner<3, 3>() * p + affine.topRightCorner<3, 1>();
  }
};

struct PoiKey {
  int v_id = 0;
  LandmarkName name = LandmarkName::SpinosusTip;
  friend auto operator<=>(const PoiKey&, const PoiKey&) = default;
};

struct VertebraFrame {
  std::string level;
  LocalFrame frame;
};

/// Named landmarks of a spine. Frames are always stored in world coordinates
/// of `space.convention`, even when positions are in voxel space.
class PoiSet {
 public:
  PoiSet() = default;
  explicit PoiSet(CoordinateSpace space) : space_(std::move(space)) {}

  [[nodiscard]] const CoordinateSpace& space() const noexcept { return space_; }
  [[nodiscard]] const std::map<PoiKey, Vec3>& entries() const noexcept { return entries_; }
  [[nodiscard]] const std::map<int, VertebraFrame>& frames() const noexcept { return frames_; }
  [[nodiscard]] const std::map<int, std::string>& levels() const noexcept { return levels_; }
  [[nodiscard]] const std::vector<Skip>& skips() const noexcept { return skips_; }
  [[nodiscard]] const std::vector<Skip>& notes() const noexcept { return notes_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

  /// Fails on duplicate keys.
  void insert(int v_id, LandmarkName name, const Vec3& p) {
    if (!p.allFinite()) fail(ErrorCode::FormatError, "non-finite landmark position");
    if (!entries_.emplace(PoiKey{v_id, name}, p).second) {
      fail(ErrorCode::FormatError, "duplicate landmark " + std::string(to_string(name)) + " for v_id " +
                                       std::to_string(v_id));
    }
  }

  void set_level(int v_id, std::string level) { levels_[v_id] = std::move(level); }
  void set_frame(int v_id, VertebraFrame frame) {
    levels_[v_id] = frame.level;
    frames_[v_id] = std::move(frame);
  }
  void add_skip(Skip s) { skips_.push_back(std::move(s)); }
  void add_note(Skip s) { notes_.push_back(std::move(s)); }

  [[nodiscard]] std::optional<Vec3> get(int v_id, LandmarkName name) const {
    auto it = entries_.find(PoiKey{v_id, name});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] std::string level_of(int v_id) const {
    auto it = levels_.find(v_id);
    return it == levels_.end() ? vid_to_level(v_id) : it->second;
  }

  void merge_batch(int v_id, const std::string& level, LandmarkBatch batch) {
    set_level(v_id, level);
    std::sort(batch.points.begin(), batch.points.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [name, p] : batch.points) insert(v_id, name, p);
    for (auto& s : batch.skips) skips_.push_back(std::move(s));
    for (auto& s : batch.notes) notes_.push_back(std::move(s));
  }

  /// Rebuilds the object in another space, mapping each position with `map`.
  template <typename Fn, typename FrameFn>
  [[nodiscard]] PoiSet transformed(CoordinateSpace target, Fn&& map, FrameFn&& map_frame) const {
    PoiSet out(std::move(target));
    out.levels_ = levels_;
    out.skips_ = skips_;
    out.notes_ = notes_;
    for (const auto& [key, p] : entries_) out.entries_.emplace(key, map(p));
    for (const auto& [v, fr] : frames_) out.frames_.emplace(v, VertebraFrame{fr.level, map_frame(fr.frame)});
    return out;
  }

 private:
  CoordinateSpace space_;
  std::map<PoiKey, Vec3> entries_;
  std::map<int, VertebraFrame> frames_;
  std::map<int, std::string> levels_;
  std::vector<Skip> skips_;
  std::vector<Skip> notes_;
};

namespace detail {

inline LocalFrame flip_frame(const LocalFrame& f, WorldConvention from, WorldConvention to) {
  LocalFrame out;
  out.origin = convert_convention(f.origin, from, to);
  out.superior = UnitVector::checked(convert_convention(f.superior.vec(), from, to));
  out.posterior = UnitVector::checked(convert_convention(f.posterior.vec(), from, to));
  out.lateral = UnitVector::checked(convert_convention(f.lateral.vec(), from, to));
  return out;
}

}  // namespace detail

/// World coordinates in `target`; no recomputation from masks.
inline PoiSet retarget(const PoiSet& pois, WorldConvention target) {
  const CoordinateSpace src = pois.space();
  return pois.transformed(
      CoordinateSpace::world(target),
      [&](const Vec3& p) { return convert_convention(src.to_world(p), src.convention, target); },
      [&](const LocalFrame& f) { return detail::flip_frame(f, src.convention, target); });
}

/// Voxel coordinates of the grid described by `target`.
inline PoiSet retarget(const PoiSet& pois, const AffineFrame& target) {
  const CoordinateSpace src = pois.space();
  return pois.transformed(
      CoordinateSpace::voxel(target),
      [&](const Vec3& p) {
        return target.world_to_voxel(convert_convention(src.to_world(p), src.convention, target.convention()));
      },
      [&](const LocalFrame& f) { return detail::flip_frame(f, src.convention, target.convention()); });
}

// ---------------------------------------------------------------------------
// Full extraction
// ---------------------------------------------------------------------------

struct VertebraResult {
  int v_id = 0;
  std::string level;
  std::optional<LocalFrame> frame;
  LandmarkBatch batch;
};

/// Frame with the requested method; on failure falls back to the all-posterior
/// center and finally to the world anterior-posterior axis, flagging it.
inline LocalFrame frame_with_fallback(const VertebraInstance& v, const UnitVector& up, OrientationMethod method,
                                      LandmarkBatch& batch) {
  std::string reason;
  try {
    return estimate_frame(v, up, method);
  } catch (const Error& e) {
    reason = e.what();
  }
  if (method != OrientationMethod::Cms3dAllPosterior) {
    try {
      LocalFrame f = estimate_frame(v, up, OrientationMethod::Cms3dAllPosterior);
      batch.skips.push_back({v.v_id(), "Frame", reason + "; fell back to cms3d-all"});
      return f;
    } catch (const Error&) {
    }
  }
  const Vec3 world_posterior = anatomical_direction('P', v.volume().frame().convention());
  batch.skips.push_back({v.v_id(), "Frame", reason + "; fell back to the volume's anterior-posterior axis"});
  return build_frame(v.center_of_mass(Subregion::Corpus), up, orthogonalize(world_posterior, up));
}

inline VertebraResult extract_vertebra(const SpineInstance& spine, std::size_t index, const ExtractionConfig& cfg) {
  const VertebraInstance& v = spine.vertebrae.at(index);
  VertebraResult r;
  r.v_id = v.v_id();
  r.level = v.level();
  LandmarkBatch& out = r.batch;
  const CraniocaudalAxis axis = spine.axis_at(index);
  const LocalFrame f = frame_with_fallback(v, axis.up, cfg.method, out);
  r.frame = f;

  out.append(process_tip_pois(v, f, cfg));
  LandmarkBatch cardinal = corpus_cardinal_pois(v, f, cfg);
  LandmarkBatch corners = corpus_corners(v, f, cfg.bisection);
  out.append(flavum_points(v, f, corners, cfg));

  const auto shift = lateral_shift_mm(v, cardinal, cfg.shift_mode);
  if (!shift) {
    for (bool right : {false, true}) {
      for (LandmarkName base : {LandmarkName::CorpusSup, LandmarkName::CorpusInf, LandmarkName::CorpusAnt,
                                LandmarkName::CorpusPost, LandmarkName::CornerSupAnt, LandmarkName::CornerSupPost,
                                LandmarkName::CornerInfAnt, LandmarkName::CornerInfPost}) {
        out.skip(v.v_id(), shifted(base, right), "no lateral shift available");
      }
    }
  } else {
    if (shift->fallback) out.note(v.v_id(), "Shift", "superior articular masks missing; shift from corpus width");
    out.append(shifted_pois(v, f, shift->mm, cfg));
  }
  out.append(std::move(cardinal));
  out.append(std::move(corners));
  return r;
}

/// Runs every vertebra (optionally in parallel) and merges in spine order, so
/// the result does not depend on the thread count.
inline PoiSet extract_all(const SpineInstance& spine, const ExtractionConfig& cfg) {
  cfg.bisection.validate();
  cfg.ray.validate(*spine.volume);
  const std::size_t n = spine.vertebrae.size();
  std::vector<VertebraResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i] = extract_vertebra(spine, i, cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::clamp(cfg.threads, 1, 256));
  if (threads == 1 || n < 2) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
  }

  PoiSet pois(CoordinateSpace::world(spine.volume->frame().convention()));
  for (std::size_t i = 0; i < n; ++i) {
    const VertebraInstance& v = spine.vertebrae[i];
    if (errors[i]) {
      std::string what = "unknown failure";
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        what = e.what();
      }
      pois.set_level(v.v_id(), v.level());
      pois.add_skip({v.v_id(), "Vertebra", what});
      continue;
    }
    VertebraResult& r = results[i];
    if (r.frame) pois.set_frame(r.v_id, VertebraFrame{r.level, *r.frame});
    pois.merge_batch(r.v_id, r.level, std::move(r.batch));
  }
  return pois;
}

}  // namespace spinepoi
