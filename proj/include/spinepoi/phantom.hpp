// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spinepoi/anatomy.hpp"
#include "spinepoi/errors.hpp"
#include "spinepoi/geometry.hpp"
#include "spinepoi/grid.hpp"
#include "spinepoi/label_dictionary.hpp"
#include "spinepoi/orientation.hpp"
#include "spinepoi/poi.hpp"

namespace spinepoi {

// ---------------------------------------------------------------------------
// Specification
// ---------------------------------------------------------------------------

/// Geometry of one synthetic vertebra in its local axes
/// (x = lateral/right, y = posterior, z = superior), millimeters.
struct VertebraSpec {
  std::string level = "L1";
  int v_id = 0;  // 0: derived from level

  Vec3 corpus_half{22.0, 16.0, 13.0};
  double corpus_rounding = 0.0;  // edge radius
  double wedge_deg = 0.0;        // anterior height loss, as an angle between the endplates

  bool arcus = true;
  double canal_half_width = 10.0;
  double canal_depth = 14.0;
  double arcus_wall = 6.0;
  double arcus_half_height = 14.0;
  double arcus_skew_deg = 0.0;  // endplate tilt of the arch about the posterior axis

  bool spinosus = true;
  double spinosus_length = 30.0;
  double spinosus_radius = 3.5;
  double spinosus_deflection_deg = 0.0;  // rotation about the posterior axis

  bool costal = true;
  double costal_length = 22.0;
  double costal_radius = 3.0;

  bool articular = true;
  double articular_length = 10.0;
  double articular_radius = 3.0;

  double process_asymmetry = 0.0;  // a > 0 shortens the left processes by a, a < 0 the right ones
  double axial_rotation_deg = 0.0;  // about the superior axis

  [[nodiscard]] int resolved_v_id() const {
    if (v_id >= 1) return v_id;
    if (auto v = level_to_vid(level)) return *v;
    fail(ErrorCode::PhantomDegenerate, "vertebra '" + level + "' has no v_id");
  }
};

/// Random asymmetry applied per vertebra; each field is the half-width of a
/// uniform distribution centered on the spec value.
struct AsymmetryRanges {
  double spinosus_deflection_deg = 0.0;
  double arcus_skew_deg = 0.0;
  double process_asymmetry = 0.0;
  double axial_rotation_deg = 0.0;

  [[nodiscard]] bool any() const {
    return spinosus_deflection_deg > 0.0 || arcus_skew_deg > 0.0 || process_asymmetry > 0.0 ||
           axial_rotation_deg > 0.0;
  }
};

struct PhantomSpec {
  std::vector<VertebraSpec> vertebrae;
  double curvature_deg = 0.0;  // total lateral tangent change along the spine
  double disc_mm = 10.0;
  Mat3 rotation = Mat3::Identity();  // global pose, applied about the first corpus center
  Vec3 translation = Vec3::Zero();
  Vec3 spacing{1.0, 1.0, 1.0};       // per voxel axis
  std::string axes = "RAS";          // anatomical direction of each voxel axis
  WorldConvention convention = WorldConvention::RAS;
  double margin_mm = 4.0;
  std::uint64_t seed = 0;
  AsymmetryRanges randomize;
};

// ---------------------------------------------------------------------------
// Deterministic sampling
// ---------------------------------------------------------------------------

/// mt19937_64 with a fixed double mapping, so draws are identical across
/// standard libraries.
class PhantomRng {
 public:
  explicit PhantomRng(std::uint64_t seed) : engine_(seed) {}

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  double symmetric(double half) { return uniform(-half, half); }

  /// Uniformly distributed rotation (Shoemake).
  Mat3 rotation() {
    const double u1 = uniform01(), u2 = uniform01(), u3 = uniform01();
    const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    const double t1 = 2.0 * std::numbers::pi * u2, t2 = 2.0 * std::numbers::pi * u3;
    const Eigen::Quaterniond q(b * std::cos(t2), a * std::sin(t1), a * std::cos(t1), b * std::sin(t2));
    return q.normalized().toRotationMatrix();
  }

 private:
  std::mt19937_64 engine_;
};

/// Spec with the seeded asymmetry draws applied and the ranges cleared.
inline PhantomSpec materialize(PhantomSpec spec) {
  if (!spec.randomize.any()) return spec;
  PhantomRng rng(spec.seed);
  for (VertebraSpec& v : spec.vertebrae) {
    v.spinosus_deflection_deg += rng.symmetric(spec.randomize.spinosus_deflection_deg);
    v.arcus_skew_deg += rng.symmetric(spec.randomize.arcus_skew_deg);
    v.process_asymmetry += rng.symmetric(spec.randomize.process_asymmetry);
    v.axial_rotation_deg += rng.symmetric(spec.randomize.axial_rotation_deg);
  }
  spec.randomize = {};
  return spec;
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace detail {

struct LocalBox {
  Vec3 lo;
  Vec3 hi;
};

struct Solid {
  Subregion region;
  LocalBox bounds;
  std::function<bool(const Vec3&)> inside;
};

struct Rod {
  Vec3 base;
  Vec3 dir;  // unit
  double length;
  double radius;

  [[nodiscard]] Vec3 tip() const { return base + dir * length; }
  [[nodiscard]] Vec3 center() const { return base + dir * (0.5 * length); }

  [[nodiscard]] bool contains(const Vec3& p) const {
    const Vec3 d = p - base;
    const double t = d.dot(dir);
    if (t < 0.0 || t > length) return false;
    return (d - t * dir).squaredNorm() <= radius * radius;
  }

  [[nodiscard]] LocalBox bounds() const {
    const Vec3 e = tip();
    const Vec3 r = Vec3::Constant(radius);
    return {base.cwiseMin(e) - r, base.cwiseMax(e) + r};
  }
};

/// Analytic parts of one vertebra, in local coordinates.
struct VertebraModel {
  VertebraSpec spec;
  double wedge_tan = 0.0;
  double skew_tan = 0.0;
  std::optional<Rod> spinosus, costal_left, costal_right, sap_left, sap_right, iap_left, iap_right;

  /// Superior endplate height at posterior coordinate y.
  [[nodiscard]] double corpus_top(double y) const { return spec.corpus_half.z() + 0.5 * y * wedge_tan; }
  [[nodiscard]] double arcus_top(double x) const { return spec.arcus_half_height + 0.5 * x * skew_tan; }
  [[nodiscard]] double arch_front() const { return spec.corpus_half.y(); }
  [[nodiscard]] double lamina_front() const { return arch_front() + spec.canal_depth; }
  [[nodiscard]] double lamina_back() const { return lamina_front() + spec.arcus_wall; }
  [[nodiscard]] double arch_half_width() const { return spec.canal_half_width + spec.arcus_wall; }

  [[nodiscard]] bool in_corpus(const Vec3& p) const {
    const Vec3 h = spec.corpus_half;
    const double top = corpus_top(p.y());
    const double r = spec.corpus_rounding;
    const Vec3 q(std::abs(p.x()) - h.x() + r, std::abs(p.y()) - h.y() + r, std::abs(p.z()) - top + r);
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    return outside + inside <= r;
  }

  [[nodiscard]] bool in_arcus(const Vec3& p) const {
    const double ax = std::abs(p.x());
    if (ax > arch_half_width() || p.y() < arch_front() || p.y() > lamina_back()) return false;
    if (std::abs(p.z()) > arcus_top(p.x())) return false;
    return ax >= spec.canal_half_width || p.y() >= lamina_front();
  }
};

inline VertebraModel build_model(const VertebraSpec& s) {
  const Vec3 h = s.corpus_half;
  if (h.minCoeff() <= 0.0) fail(ErrorCode::PhantomDegenerate, s.level + ": corpus extents must be positive");
  if (s.corpus_rounding < 0.0 || s.corpus_rounding >= h.minCoeff()) {
    fail(ErrorCode::PhantomDegenerate, s.level + ": corpus rounding must be below the smallest half extent");
  }
  VertebraModel m;
  m.spec = s;
  m.wedge_tan = std::tan(deg_to_rad(s.wedge_deg));
  m.skew_tan = std::tan(deg_to_rad(s.arcus_skew_deg));
  if (m.corpus_top(-h.y()) <= 0.0) fail(ErrorCode::PhantomDegenerate, s.level + ": wedge collapses the corpus");

  const double right_scale = 1.0 - std::max(0.0, -s.process_asymmetry);
  const double left_scale = 1.0 - std::max(0.0, s.process_asymmetry);
  if (right_scale <= 0.0 || left_scale <= 0.0) fail(ErrorCode::PhantomDegenerate, s.level + ": asymmetry out of range");
  constexpr double kGap = 1.0;

  if (s.arcus) {
    if (s.canal_half_width <= 0.0 || s.canal_depth <= 0.0 || s.arcus_wall <= 0.0 || s.arcus_half_height <= 0.0) {
      fail(ErrorCode::PhantomDegenerate, s.level + ": arcus dimensions must be positive");
    }
    if (m.arcus_top(-m.arch_half_width()) <= 0.0) fail(ErrorCode::PhantomDegenerate, s.level + ": arcus skew too large");
  }
  if (s.spinosus) {
    const Vec3 base_dir = Vec3(0.0, 0.2, -1.0).normalized();
    const Vec3 dir = axis_angle(Vec3::UnitY(), deg_to_rad(s.spinosus_deflection_deg)) * base_dir;
    m.spinosus = Rod{Vec3(0.0, m.lamina_back() + s.spinosus_radius + kGap, 0.0), dir, s.spinosus_length,
                     s.spinosus_radius};
  }
  if (s.costal) {
    const double x0 = m.arch_half_width() + s.costal_radius / std::sqrt(2.0) + kGap;
    const double y0 = 0.5 * (m.arch_front() + m.lamina_back());
    m.costal_right = Rod{Vec3(x0, y0, 0.0), Vec3(1.0, 1.0, 0.0).normalized(), s.costal_length * right_scale,
                         s.costal_radius};
    m.costal_left = Rod{Vec3(-x0, y0, 0.0), Vec3(-1.0, 1.0, 0.0).normalized(), s.costal_length * left_scale,
                        s.costal_radius};
  }
  if (s.articular) {
    // Just lateral of the pedicles, so the inferior rods clear the arch below.
    const double r = s.articular_radius;
    const double x = m.arch_half_width() + r + 3.0 * kGap;
    const double y_sup = m.arch_front() + r + kGap;
    const double y_inf = m.lamina_back() - r;
    auto top = [&](double xx) { return m.arcus_top(xx) + r * std::abs(m.skew_tan) + kGap; };
    auto bottom = [&](double xx) { return -m.arcus_top(xx) - r * std::abs(m.skew_tan) - kGap; };
    m.sap_right = Rod{Vec3(x, y_sup, top(x)), Vec3::UnitZ(), s.articular_length * right_scale, r};
    m.sap_left = Rod{Vec3(-x, y_sup, top(-x)), Vec3::UnitZ(), s.articular_length * left_scale, r};
    m.iap_right = Rod{Vec3(x, y_inf, bottom(x)), -Vec3::UnitZ(), s.articular_length * right_scale, r};
    m.iap_left = Rod{Vec3(-x, y_inf, bottom(-x)), -Vec3::UnitZ(), s.articular_length * left_scale, r};
  }
  for (const auto* rod : {&m.spinosus, &m.costal_left, &m.costal_right, &m.sap_left, &m.sap_right, &m.iap_left,
                          &m.iap_right}) {
    if (*rod && (!((*rod)->length > 0.0) || !((*rod)->radius > 0.0))) {
      fail(ErrorCode::PhantomDegenerate, s.level + ": process rods need positive length and radius");
    }
  }
  return m;
}

/// Rasterization order; within a vertebra the first solid claiming a voxel
/// keeps it.
inline std::vector<Solid> solids_of(const VertebraModel& m) {
  std::vector<Solid> out;
  const Vec3 h = m.spec.corpus_half;
  const double zmax = std::max(m.corpus_top(h.y()), m.corpus_top(-h.y()));
  out.push_back({Subregion::Corpus, {Vec3(-h.x(), -h.y(), -zmax), Vec3(h.x(), h.y(), zmax)},
                 [&m](const Vec3& p) { return m.in_corpus(p); }});
  if (m.spec.arcus) {
    const double w = m.arch_half_width();
    const double z = m.spec.arcus_half_height + 0.5 * w * std::abs(m.skew_tan);
    out.push_back({Subregion::Arcus, {Vec3(-w, m.arch_front(), -z), Vec3(w, m.lamina_back(), z)},
                   [&m](const Vec3& p) { return m.in_arcus(p); }});
  }
  auto add_rod = [&out](Subregion s, const std::optional<Rod>& rod) {
    if (!rod) return;
    const LocalBox b = rod->bounds();
    out.push_back({s, b, [r = *rod](const Vec3& p) { return r.contains(p); }});
  };
  add_rod(Subregion::Spinosus, m.spinosus);
  add_rod(Subregion::CostalLeft, m.costal_left);
  add_rod(Subregion::CostalRight, m.costal_right);
  add_rod(Subregion::SupArticularLeft, m.sap_left);
  add_rod(Subregion::SupArticularRight, m.sap_right);
  add_rod(Subregion::InfArticularLeft, m.iap_left);
  add_rod(Subregion::InfArticularRight, m.iap_right);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

struct VertebraTruth {
  int v_id = 0;
  std::string level;
  LocalFrame frame;
  UnitVector tangent;  // superior direction of the analytic centerline
  std::vector<std::pair<LandmarkName, WorldPoint>> landmarks;
  double shift_mm = 0.0;  // analytic lateral shift (divide mode); 0 when undefined

  [[nodiscard]] std::optional<WorldPoint> find(LandmarkName n) const {
    for (const auto& [name, p] : landmarks) {
      if (name == n) return p;
    }
    return std::nullopt;
  }
};

struct PhantomTruth {
  WorldConvention convention = WorldConvention::RAS;
  double curvature_deg = 0.0;
  std::vector<VertebraTruth> vertebrae;

  [[nodiscard]] const VertebraTruth* by_vid(int v_id) const {
    for (const auto& v : vertebrae) {
      if (v.v_id == v_id) return &v;
    }
    return nullptr;
  }

  /// Landmarks and frames as a PoiSet in world coordinates.
  [[nodiscard]] PoiSet to_poi_set() const {
    PoiSet out(CoordinateSpace::world(convention));
    for (const auto& v : vertebrae) {
      out.set_frame(v.v_id, VertebraFrame{v.level, v.frame});
      for (const auto& [name, p] : v.landmarks) out.insert(v.v_id, name, p);
    }
    return out;
  }
};

struct Phantom {
  std::shared_ptr<const LabelVolume> volume;
  PhantomTruth truth;
};

namespace detail {

inline VertebraTruth truth_of(const VertebraModel& m, const LocalFrame& f, int v_id) {
  VertebraTruth t;
  t.v_id = v_id;
  t.level = m.spec.level;
  t.frame = f;
  t.tangent = f.superior;
  auto world = [&f](const Vec3& p) -> WorldPoint {
    return f.origin + p.x() * f.lateral.vec() + p.y() * f.posterior.vec() + p.z() * f.superior.vec();
  };
  auto add = [&](LandmarkName n, const Vec3& local) { t.landmarks.emplace_back(n, world(local)); };

  if (m.spinosus) add(LandmarkName::SpinosusTip, m.spinosus->tip());
  if (m.costal_left) add(LandmarkName::CostalTipLeft, m.costal_left->tip());
  if (m.costal_right) add(LandmarkName::CostalTipRight, m.costal_right->tip());
  if (m.sap_left) add(LandmarkName::SupArticularTipLeft, m.sap_left->tip());
  if (m.sap_right) add(LandmarkName::SupArticularTipRight, m.sap_right->tip());
  if (m.iap_left) add(LandmarkName::InfArticularTipLeft, m.iap_left->tip());
  if (m.iap_right) add(LandmarkName::InfArticularTipRight, m.iap_right->tip());

  const Vec3 h = m.spec.corpus_half;
  add(LandmarkName::CorpusSup, Vec3(0, 0, m.corpus_top(0)));
  add(LandmarkName::CorpusInf, Vec3(0, 0, -m.corpus_top(0)));
  add(LandmarkName::CorpusAnt, Vec3(0, -h.y(), 0));
  add(LandmarkName::CorpusPost, Vec3(0, h.y(), 0));
  add(LandmarkName::CorpusLeft, Vec3(-h.x(), 0, 0));
  add(LandmarkName::CorpusRight, Vec3(h.x(), 0, 0));

  // Corner positions are only analytic for sharp edges.
  const bool sharp = m.spec.corpus_rounding == 0.0;
  const std::array<Vec3, 4> corners = {Vec3(0, -h.y(), m.corpus_top(-h.y())), Vec3(0, h.y(), m.corpus_top(h.y())),
                                       Vec3(0, -h.y(), -m.corpus_top(-h.y())), Vec3(0, h.y(), -m.corpus_top(h.y()))};
  if (sharp) {
    for (std::size_t c = 0; c < 4; ++c) add(kCornerNames[c], corners[c]);
  }
  if (m.spec.arcus) {
    add(LandmarkName::FlavumSup, Vec3(0, m.lamina_front(), corners[1].z()));
    add(LandmarkName::FlavumInf, Vec3(0, m.lamina_front(), corners[3].z()));
  }
  if (m.sap_left && m.sap_right) {
    const double dist = (m.sap_left->center() - m.sap_right->center()).norm();
    t.shift_mm = dist / 3.0 / shift_factor(v_id);
    if (sharp && t.shift_mm < h.x()) {
      for (bool right : {false, true}) {
        const Vec3 off(right ? t.shift_mm : -t.shift_mm, 0, 0);
        add(shifted(LandmarkName::CorpusSup, right), Vec3(0, 0, m.corpus_top(0)) + off);
        add(shifted(LandmarkName::CorpusInf, right), Vec3(0, 0, -m.corpus_top(0)) + off);
        add(shifted(LandmarkName::CorpusAnt, right), Vec3(0, -h.y(), 0) + off);
        add(shifted(LandmarkName::CorpusPost, right), Vec3(0, h.y(), 0) + off);
        for (std::size_t c = 0; c < 4; ++c) add(shifted(kCornerNames[c], right), corners[c] + off);
      }
    }
  }
  std::sort(t.landmarks.begin(), t.landmarks.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return t;
}

/// Voxel-to-world matrix whose voxel faces sit on multiples of the spacing
/// and whose grid covers [lo, hi] (world).
inline std::pair<AffineFrame, Dims> covering_grid(const PhantomSpec& spec, const Vec3& lo, const Vec3& hi) {
  if (spec.axes.size() != 3) fail(ErrorCode::PhantomDegenerate, "axis code must have three letters");
  if (!(spec.spacing.minCoeff() > 0.0)) fail(ErrorCode::PhantomDegenerate, "spacing must be positive");
  Mat4 m = Mat4::Identity();
  Dims dims{};
  std::array<bool, 3> used{false, false, false};
  for (int a = 0; a < 3; ++a) {
    const Vec3 dir = anatomical_direction(spec.axes[static_cast<std::size_t>(a)], spec.convention);
    int w = 0;
    dir.cwiseAbs().maxCoeff(&w);
    if (used[static_cast<std::size_t>(w)]) fail(ErrorCode::PhantomDegenerate, "axis code repeats a world axis");
    used[static_cast<std::size_t>(w)] = true;
    const double sign = dir[w];
    const double s = spec.spacing[a];
    const double from = lo[w] - spec.margin_mm;
    const double to = hi[w] + spec.margin_mm;
    double origin = 0.0;
    if (sign > 0) {
      origin = (std::floor(from / s - 0.5) + 0.5) * s;
      dims[static_cast<std::size_t>(a)] = static_cast<int>(std::ceil((to - origin) / s)) + 1;
    } else {
      origin = (std::ceil(to / s - 0.5) + 0.5) * s;
      dims[static_cast<std::size_t>(a)] = static_cast<int>(std::ceil((origin - from) / s)) + 1;
    }
    m.block<3, 1>(0, a) = dir * s;
    m(w, 3) = origin;
  }
  // NIfTI stores the affine in single precision; keep written files exact.
  m = m.cast<float>().cast<double>();
  return {AffineFrame(m, spec.convention), dims};
}

}  // namespace detail

/// Stacks the vertebrae along a circular arc in the coronal plane, applies the
/// global pose and rasterizes every primitive by voxel-center inclusion.
inline Phantom generate_spine(const PhantomSpec& raw_spec) {
  const PhantomSpec spec = materialize(raw_spec);
  const std::size_t n = spec.vertebrae.size();
  if (n == 0) fail(ErrorCode::PhantomDegenerate, "phantom has no vertebrae");
  if (!(spec.disc_mm >= 0.0)) fail(ErrorCode::PhantomDegenerate, "disc height must be non-negative");
  const double min_spacing = spec.spacing.minCoeff();

  std::vector<detail::VertebraModel> models;
  models.reserve(n);
  for (const auto& v : spec.vertebrae) {
    if (v.corpus_half.minCoeff() * 2.0 < spec.spacing.maxCoeff()) {
      fail(ErrorCode::PhantomDegenerate, v.level + ": corpus smaller than one voxel");
    }
    models.push_back(detail::build_model(v));
    for (const auto* rod : {&models.back().spinosus, &models.back().costal_left, &models.back().sap_left}) {
      if (*rod && (*rod)->radius * 2.0 < min_spacing) {
        fail(ErrorCode::PhantomDegenerate, v.level + ": process thinner than one voxel");
      }
    }
  }

  // Arc length of each corpus center along the centerline.
  std::vector<double> arc(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) {
    arc[k] = arc[k - 1] + spec.vertebrae[k - 1].corpus_half.z() + spec.disc_mm + spec.vertebrae[k].corpus_half.z();
  }
  const double total = arc.back();
  const double kappa = (n > 1 && total > 0.0) ? deg_to_rad(spec.curvature_deg) / total : 0.0;

  const Vec3 lat0 = anatomical_direction('R', spec.convention);
  const Vec3 post0 = anatomical_direction('P', spec.convention);
  const Vec3 sup0 = anatomical_direction('S', spec.convention);

  std::vector<LocalFrame> frames(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double phi = kappa * arc[k];
    // Position on the arc: lateral drift (R (1 - cos phi)) and descent (R sin phi).
    const double lateral = std::abs(kappa) > 0.0 ? (1.0 - std::cos(phi)) / kappa : 0.0;
    const double descent = std::abs(kappa) > 0.0 ? std::sin(phi) / kappa : arc[k];
    const Vec3 origin = lateral * lat0 - descent * sup0;
    const Vec3 up = std::cos(phi) * sup0 - std::sin(phi) * lat0;
    const Mat3 axial = axis_angle(up, deg_to_rad(spec.vertebrae[k].axial_rotation_deg));
    const Vec3 lat = axial * (std::cos(phi) * lat0 + std::sin(phi) * sup0);
    const Vec3 post = axial * post0;

    LocalFrame f;
    f.origin = spec.rotation * origin + spec.translation;
    f.superior = UnitVector::normalize(spec.rotation * up);
    f.posterior = UnitVector::normalize(spec.rotation * post);
    f.lateral = UnitVector::normalize(spec.rotation * lat);
    frames[k] = f;
  }

  // World bounds of every primitive.
  std::vector<std::vector<detail::Solid>> solids(n);
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (std::size_t k = 0; k < n; ++k) {
    solids[k] = detail::solids_of(models[k]);
    const Mat3 r = frames[k].rotation();
    for (const auto& s : solids[k]) {
      for (int c = 0; c < 8; ++c) {
        const Vec3 local(c & 1 ? s.bounds.hi.x() : s.bounds.lo.x(), c & 2 ? s.bounds.hi.y() : s.bounds.lo.y(),
                         c & 4 ? s.bounds.hi.z() : s.bounds.lo.z());
        const Vec3 w = frames[k].origin + r * Vec3(local.z(), local.y(), local.x());
        lo = lo.cwiseMin(w);
        hi = hi.cwiseMax(w);
      }
    }
  }
  const auto [frame, dims] = detail::covering_grid(spec, lo, hi);
  std::vector<Label> labels(static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
                            static_cast<std::size_t>(dims[2]), 0);
  const LabelVolume probe(dims, std::vector<Label>(labels.size(), 0), frame);

  for (std::size_t k = 0; k < n; ++k) {
    const int v_id = models[k].spec.resolved_v_id();
    const LocalFrame& f = frames[k];
    for (std::size_t j = 0; j < k; ++j) {
      if (models[j].spec.resolved_v_id() == v_id) fail(ErrorCode::PhantomDegenerate, "duplicate v_id in phantom");
    }
    for (const auto& s : solids[k]) {
      const Label code = kBlockSize * static_cast<Label>(v_id) + spineps_subregion_code(s.region);
      // Voxel-index range of the solid's world box.
      std::array<int, 3> ilo{dims[0], dims[1], dims[2]}, ihi{-1, -1, -1};
      for (int c = 0; c < 8; ++c) {
        const Vec3 local(c & 1 ? s.bounds.hi.x() : s.bounds.lo.x(), c & 2 ? s.bounds.hi.y() : s.bounds.lo.y(),
                         c & 4 ? s.bounds.hi.z() : s.bounds.lo.z());
        const Vec3 w = f.origin + local.x() * f.lateral.vec() + local.y() * f.posterior.vec() +
                       local.z() * f.superior.vec();
        const Vec3 idx = frame.world_to_voxel(w);
        for (int a = 0; a < 3; ++a) {
          const auto ua = static_cast<std::size_t>(a);
          ilo[ua] = std::min(ilo[ua], static_cast<int>(std::floor(idx[a])) - 1);
          ihi[ua] = std::max(ihi[ua], static_cast<int>(std::ceil(idx[a])) + 1);
        }
      }
      for (int a = 0; a < 3; ++a) {
        const auto ua = static_cast<std::size_t>(a);
        ilo[ua] = std::max(ilo[ua], 0);
        ihi[ua] = std::min(ihi[ua], dims[ua] - 1);
      }
      for (int kk = ilo[2]; kk <= ihi[2]; ++kk) {
        for (int jj = ilo[1]; jj <= ihi[1]; ++jj) {
          for (int ii = ilo[0]; ii <= ihi[0]; ++ii) {
            const Vec3 d = frame.voxel_to_world(Vec3(ii, jj, kk)) - f.origin;
            const Vec3 local(d.dot(f.lateral.vec()), d.dot(f.posterior.vec()), d.dot(f.superior.vec()));
            if (!s.inside(local)) continue;
            Label& slot = labels[probe.offset(ii, jj, kk)];
            if (slot == 0) {
              slot = code;
            } else if (static_cast<int>(slot / kBlockSize) != v_id) {
              std::string other = vid_to_level(static_cast<int>(slot / kBlockSize));
              for (Subregion r : kAllSubregions) {
                if (spineps_subregion_code(r) == slot % kBlockSize) other += " " + std::string(to_string(r));
              }
              fail(ErrorCode::PhantomDegenerate, other + " and " + models[k].spec.level + " " +
                                                     std::string(to_string(s.region)) + " overlap");
            }
          }
        }
      }
    }
  }

  Phantom out;
  out.truth.convention = spec.convention;
  out.truth.curvature_deg = spec.curvature_deg;
  for (std::size_t k = 0; k < n; ++k) {
    out.truth.vertebrae.push_back(detail::truth_of(models[k], frames[k], models[k].spec.resolved_v_id()));
  }
  out.volume = std::make_shared<const LabelVolume>(dims, std::move(labels), frame);
  return out;
}

/// Single vertebra under the spec's pose.
inline Phantom generate_vertebra(const VertebraSpec& v, const PhantomSpec& grid = {}) {
  PhantomSpec spec = grid;
  spec.vertebrae = {v};
  return generate_spine(spec);
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Lumbar-sized vertebra; smaller bodies towards the neck.
inline VertebraSpec default_vertebra(const std::string& level) {
  VertebraSpec v;
  v.level = level;
  const int id = level_to_vid(level).value_or(20);
  const double t = std::clamp((static_cast<double>(id) - 1.0) / 25.0, 0.0, 1.0);  // 0 at C1, 1 at S1
  v.corpus_half = Vec3(14.0 + 8.0 * t, 10.0 + 6.0 * t, 8.0 + 5.0 * t);
  v.canal_half_width = 9.0 + 1.0 * t;
  v.arcus_half_height = v.corpus_half.z() + 1.0;
  v.costal_length = 16.0 + 6.0 * t;
  v.spinosus_length = 22.0 + 8.0 * t;
  return v;
}

/// The last `count` levels ending at S1; 24 levels run from C3 (L6 included).
inline std::vector<std::string> default_levels(std::size_t count) {
  std::vector<std::string> out;
  for (int v = 26 - static_cast<int>(count) + 1; v <= 26; ++v) out.push_back(vid_to_level(v));
  return out;
}

/// 24-vertebra scoliotic spine at clinical-like anisotropic resolution.
inline PhantomSpec default_spine_spec(std::size_t count = 24, double curvature_deg = 30.0) {
  PhantomSpec spec;
  for (const auto& level : default_levels(count)) spec.vertebrae.push_back(default_vertebra(level));
  spec.curvature_deg = curvature_deg;
  spec.spacing = Vec3(0.8, 0.8, 3.3);
  spec.axes = "ASR";
  return spec;
}

struct SuiteConfig {
  std::uint64_t seed = 20240601;
  int spines = 18;
  int levels_per_spine = 5;
  double max_curvature_deg = 25.0;
  double spinosus_deflection_deg = 15.0;
  double arcus_skew_deg = 20.0;
  double process_asymmetry = 0.6;
  double axial_rotation_deg = 0.0;
  Vec3 spacing{1.0, 1.0, 1.0};
};

/// Seeded set of asymmetric, randomly posed lumbar spines.
inline std::vector<PhantomSpec> orientation_suite(const SuiteConfig& cfg = {}) {
  PhantomRng rng(cfg.seed);
  std::vector<PhantomSpec> out;
  for (int s = 0; s < cfg.spines; ++s) {
    PhantomSpec spec;
    const int first = 20 - cfg.levels_per_spine / 2;  // around the thoracolumbar junction
    for (int k = 0; k < cfg.levels_per_spine; ++k) {
      VertebraSpec v;
      v.level = vid_to_level(first + k);
      spec.vertebrae.push_back(v);
    }
    spec.curvature_deg = rng.symmetric(cfg.max_curvature_deg);
    spec.rotation = rng.rotation();
    spec.spacing = cfg.spacing;
    spec.seed = cfg.seed + static_cast<std::uint64_t>(s) + 1;
    spec.randomize.spinosus_deflection_deg = cfg.spinosus_deflection_deg;
    spec.randomize.arcus_skew_deg = cfg.arcus_skew_deg;
    spec.randomize.process_asymmetry = cfg.process_asymmetry;
    spec.randomize.axial_rotation_deg = cfg.axial_rotation_deg;
    out.push_back(std::move(spec));
  }
  return out;
}

}  // namespace spinepoi
