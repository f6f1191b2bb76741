// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>
#include <numbers>
#include <random>

#include "test_support.hpp"

namespace spinepoi {
namespace {

using testing::code_of;
using testing::make_volume;

const UnitVector kUp = UnitVector::checked(Vec3(0, 0, 1));

bool near(const Vec3& a, const Vec3& b, double tol) { return (a - b).norm() <= tol; }

// acos bottoms out near 1e-6 degrees; atan2 resolves smaller angles.
double fine_angle_deg(const Vec3& a, const Vec3& b) { return rad_to_deg(std::atan2(a.cross(b).norm(), a.dot(b))); }

TEST(Orthogonalize, KeepsAnOrthogonalVector) {
  EXPECT_TRUE(near(orthogonalize(Vec3(0, -1, 0), kUp).vec(), Vec3(0, -1, 0), 1e-15));
}

TEST(Orthogonalize, RemovesTheUpComponent) {
  EXPECT_TRUE(near(orthogonalize(Vec3(0, -1, -1), kUp).vec(), Vec3(0, -1, 0), 1e-15));
}

TEST(Orthogonalize, StaysInTheSpanAndOrthogonalToUp) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  for (int i = 0; i < 500; ++i) {
    const Vec3 raw(g(rng), g(rng), g(rng));
    const UnitVector up = UnitVector::normalize(Vec3(g(rng), g(rng), g(rng)));
    const Vec3 p = orthogonalize(raw, up).vec();
    EXPECT_NEAR(p.dot(up.vec()), 0.0, 1e-9);
    EXPECT_NEAR(p.norm(), 1.0, 1e-12);
    // Oracle: component of raw orthogonal to up, by projection matrix.
    const Mat3 proj = Mat3::Identity() - up.vec() * up.vec().transpose();
    EXPECT_TRUE(near(p, (proj * raw).normalized(), 1e-9));
  }
}

TEST(Orthogonalize, RejectsParallelInput) {
  try {
    (void)orthogonalize(Vec3(0, 0, 3), kUp);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateOrientation);
  }
  EXPECT_THROW((void)orthogonalize(Vec3(1e-6, 0, 1), kUp), Error);
}

TEST(BuildFrame, LateralIsAnatomicalRightInRas) {
  const LocalFrame f = build_frame(Vec3(1, 2, 3), kUp, UnitVector::checked(Vec3(0, -1, 0)));
  EXPECT_EQ(f.lateral.vec(), Vec3(1, 0, 0));
  EXPECT_EQ(f.right().vec(), Vec3(1, 0, 0));
  EXPECT_EQ(f.origin, Vec3(1, 2, 3));
}

TEST(BuildFrame, CrossProductOrder) {
  const LocalFrame f = build_frame(Vec3::Zero(), kUp, UnitVector::checked(Vec3(-1, 0, 0)));
  EXPECT_EQ(f.lateral.vec(), Vec3(0, -1, 0));
}

TEST(BuildFrame, RandomPairsAreRightHanded) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> g;
  for (int i = 0; i < 200; ++i) {
    const UnitVector up = UnitVector::normalize(Vec3(g(rng), g(rng), g(rng)));
    const UnitVector post = orthogonalize(Vec3(g(rng), g(rng), g(rng)), up);
    const LocalFrame f = build_frame(Vec3::Zero(), up, post);
    const Mat3 r = f.rotation();
    EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).norm(), 1e-9);
  }
  EXPECT_THROW((void)build_frame(Vec3::Zero(), kUp, UnitVector::checked(Vec3(0, 0.6, 0.8))), Error);
}

TEST(AngularDeviation, Examples) {
  EXPECT_EQ(angular_deviation(Vec3(1, 2, 3), Vec3(1, 2, 3)), 0.0);
  EXPECT_NEAR(angular_deviation(Vec3(1, 0, 0), Vec3(0, 5, 0)), 90.0, 1e-12);
  EXPECT_NEAR(angular_deviation(Vec3(1, 0, 0), Vec3(1, 1, 0).normalized()), 45.0, 1e-12);
}

TEST(Summarize, ExactEstimates) {
  const std::vector<std::optional<double>> d(5, 0.0);
  const auto s = summarize_deviations(d);
  EXPECT_EQ(s.mean_deg, 0.0);
  EXPECT_EQ(s.frac_le_3, 1.0);
  EXPECT_EQ(s.frac_le_10, 1.0);
  EXPECT_EQ(s.n, 5u);
}

TEST(Summarize, ThreeDeviations) {
  const std::vector<std::optional<double>> d = {2.0, 4.0, 12.0};
  const auto s = summarize_deviations(d);
  EXPECT_DOUBLE_EQ(s.mean_deg, 6.0);
  EXPECT_DOUBLE_EQ(s.std_deg, std::sqrt((16.0 + 4.0 + 36.0) / 3.0));
  EXPECT_DOUBLE_EQ(s.frac_le_3, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.frac_le_10, 2.0 / 3.0);
}

TEST(Summarize, FailuresCountInN) {
  const std::vector<std::optional<double>> d = {1.0, std::nullopt};
  const auto s = summarize_deviations(d);
  EXPECT_EQ(s.n, 2u);
  EXPECT_EQ(s.failures, 1u);
  EXPECT_DOUBLE_EQ(s.mean_deg, 1.0);
  EXPECT_DOUBLE_EQ(s.frac_le_3, 0.5);
  EXPECT_THROW((void)summarize_deviations(std::vector<std::optional<double>>{}), Error);
}

TEST(MethodNames, RoundTrip) {
  for (auto m : kAllOrientationMethods) EXPECT_EQ(parse_orientation_method(to_string(m)), m);
  EXPECT_THROW((void)parse_orientation_method("pca"), Error);
}

// One vertebra on a 1 mm grid around the origin; `fill` labels by world point.
VertebraInstance single(const std::function<Label(const Vec3&)>& fill, const Mat3& rotation = Mat3::Identity()) {
  const auto vol = make_volume(Dims{41, 61, 41}, Vec3(1, 1, 1), Vec3(-20, -30, -20), fill, rotation);
  const SpineInstance spine = assemble_spine(vol, LabelDictionary::spineps_default());
  return spine.vertebrae.at(0);
}

Label corpus_block(const Vec3& p) {
  return std::abs(p.x()) <= 8 && std::abs(p.y()) <= 6 && std::abs(p.z()) <= 5 ? code_of(20, Subregion::Corpus) : 0;
}

TEST(PosteriorRaw, SymmetricPosteriorBlockPointsAlongMinusY) {
  const VertebraInstance v = single([](const Vec3& p) -> Label {
    if (Label l = corpus_block(p)) return l;
    if (std::abs(p.x()) <= 6 && p.y() <= -8 && p.y() >= -14 && std::abs(p.z()) <= 4) return code_of(20, Subregion::Arcus);
    if (std::abs(p.x()) <= 1 && p.y() < -14 && p.y() >= -24 && std::abs(p.z()) <= 1) {
      return code_of(20, Subregion::Spinosus);
    }
    return 0;
  });
  for (auto m : kAllOrientationMethods) {
    const Vec3 raw = posterior_raw(v, kUp, m);
    EXPECT_NEAR(raw.x(), 0.0, 1e-9) << to_string(m);
    EXPECT_NEAR(raw.z(), 0.0, 1e-9) << to_string(m);
    EXPECT_LT(raw.y(), 0.0) << to_string(m);
    EXPECT_TRUE(near(estimate_frame(v, kUp, m).posterior.vec(), Vec3(0, -1, 0), 1e-9)) << to_string(m);
  }
}

// Arcus block 10 mm behind the corpus and 3 mm above it.
Label displaced_arcus(const Vec3& p) {
  if (Label l = corpus_block(p)) return l;
  if (std::abs(p.x()) <= 4 && std::abs(p.y() + 10.0) <= 2 && std::abs(p.z() - 3.0) <= 2) {
    return code_of(20, Subregion::Arcus);
  }
  return 0;
}

TEST(PosteriorRaw, ProjectionDropsTheSuperiorOffset) {
  const VertebraInstance v = single(displaced_arcus);
  const Vec3 proj = posterior_raw(v, kUp, OrientationMethod::Projection2d);
  EXPECT_NEAR(proj.z(), 0.0, 1e-9);
  EXPECT_NEAR(proj.y(), -10.0, 1e-9);
  const Vec3 arcspin = posterior_raw(v, kUp, OrientationMethod::Cms3dArcusSpinosus);
  // Centroid arithmetic: arcus rows z = 1..5 around 3, corpus symmetric about 0.
  EXPECT_NEAR(arcspin.z(), 3.0, 1e-9);
  EXPECT_NEAR(arcspin.y(), -10.0, 1e-9);
}

TEST(PosteriorRaw, MissingStructuresRaise) {
  const VertebraInstance v = single(corpus_block);
  for (auto m : kAllOrientationMethods) {
    try {
      (void)posterior_raw(v, kUp, m);
      FAIL() << to_string(m);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::EmptySubregion) << to_string(m);
    }
  }
}

TEST(PosteriorRaw, PosteriorAtTheCorpusCenterIsDegenerate) {
  // Arcus split symmetrically around the corpus center.
  const VertebraInstance v = single([](const Vec3& p) -> Label {
    if (Label l = corpus_block(p)) return l;
    if (std::abs(p.x()) <= 2 && std::abs(p.y()) <= 2 && std::abs(p.z()) >= 8 && std::abs(p.z()) <= 10) {
      return code_of(20, Subregion::Arcus);
    }
    return 0;
  });
  try {
    (void)posterior_raw(v, kUp, OrientationMethod::Cms3dArcusSpinosus);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateOrientation);
  }
}

// Spinosus tip bent to the right and costal processes of unequal length.
Label skewed(const Vec3& p) {
  if (Label l = corpus_block(p)) return l;
  if (std::abs(p.x()) <= 7 && p.y() <= -7 && p.y() >= -12 && std::abs(p.z()) <= 4) return code_of(20, Subregion::Arcus);
  if (p.y() < -12 && p.y() >= -26 && std::abs(p.z()) <= 2 && std::abs(p.x() - 0.6 * (-12.0 - p.y())) <= 1.5) {
    return code_of(20, Subregion::Spinosus);
  }
  if (std::abs(p.y() + 9) <= 1.5 && std::abs(p.z()) <= 1.5 && p.x() > 7 && p.x() <= 18) {
    return code_of(20, Subregion::CostalRight);
  }
  if (std::abs(p.y() + 9) <= 1.5 && std::abs(p.z()) <= 1.5 && p.x() < -7 && p.x() >= -11) {
    return code_of(20, Subregion::CostalLeft);
  }
  return 0;
}

TEST(PosteriorRaw, SkewedSpinosusGapMatchesBruteForceCentroids) {
  const VertebraInstance v = single(skewed);
  const LabelVolume& vol = v.volume();
  const Label corpus = code_of(20, Subregion::Corpus);
  const Label arcus = code_of(20, Subregion::Arcus);
  const Label spinosus = code_of(20, Subregion::Spinosus);

  Vec3 corpus_sum = Vec3::Zero(), post_sum = Vec3::Zero();
  long nc = 0, np = 0;
  std::map<std::pair<int, int>, Vec3> columns;  // (i, j) -> x, y of the column
  const auto& d = vol.dims();
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        const Label l = vol.at(i, j, k);
        if (l == 0) continue;
        const Vec3 p = vol.frame().voxel_to_world(Vec3(i, j, k));
        if (l == corpus) {
          corpus_sum += p;
          ++nc;
        } else {
          post_sum += p;
          ++np;
          if (l == arcus || l == spinosus) columns[{i, j}] = Vec3(p.x(), p.y(), 0.0);
        }
      }
    }
  }
  const Vec3 c = corpus_sum / static_cast<double>(nc);
  Vec3 silhouette = Vec3::Zero();
  for (const auto& [key, xy] : columns) silhouette += xy;
  silhouette /= static_cast<double>(columns.size());
  const Vec3 oracle_proj = Vec3(silhouette.x() - c.x(), silhouette.y() - c.y(), 0.0).normalized();
  const Vec3 all = post_sum / static_cast<double>(np) - c;
  const Vec3 oracle_all = Vec3(all.x(), all.y(), 0.0).normalized();

  const Vec3 got_proj = estimate_frame(v, kUp, OrientationMethod::Projection2d).posterior.vec();
  const Vec3 got_all = estimate_frame(v, kUp, OrientationMethod::Cms3dAllPosterior).posterior.vec();
  EXPECT_LT(angular_deviation(got_proj, oracle_proj), 1e-6);
  EXPECT_LT(angular_deviation(got_all, oracle_all), 1e-6);
  const double gap = angular_deviation(got_proj, got_all);
  EXPECT_NEAR(gap, angular_deviation(oracle_proj, oracle_all), 1e-6);
  EXPECT_GT(gap, 1.0);
}

TEST(Projection2d, InvariantToShiftsAlongUp) {
  const Vec3 base = posterior_raw(single(skewed), kUp, OrientationMethod::Projection2d);
  for (int dz : {-3, 2, 5}) {
    // Same posterior voxels moved dz voxels along the superior axis.
    const VertebraInstance moved = single([dz](const Vec3& p) -> Label {
      if (Label l = corpus_block(p)) return l;
      const Label l = skewed(p - Vec3(0, 0, dz));
      return l == code_of(20, Subregion::Corpus) ? 0 : l;
    });
    const Vec3 raw = posterior_raw(moved, kUp, OrientationMethod::Projection2d);
    EXPECT_LT(fine_angle_deg(raw, base), 1e-6) << dz;
  }
}

TEST(Orientation, RigidRotationIsEquivariant) {
  SuiteConfig cfg;
  cfg.spines = 2;
  const auto specs = orientation_suite(cfg);
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto dict = LabelDictionary::spineps_default();
  for (const auto& spec : specs) {
    const Phantom ph = generate_spine(spec);
    const SpineInstance base = assemble_spine(ph.volume, dict);
    for (int trial = 0; trial < 3; ++trial) {
      Mat4 t = Mat4::Identity();
      const Mat3 r = axis_angle(Vec3(u(rng), u(rng), u(rng)), std::numbers::pi * u(rng));
      t.topLeftCorner<3, 3>() = r;
      t.topRightCorner<3, 1>() = 40.0 * Vec3(u(rng), u(rng), u(rng));
      const auto moved = std::make_shared<const LabelVolume>(ph.volume->with_frame(ph.volume->frame().composed(t)));
      const SpineInstance spine = assemble_spine(moved, dict);
      ASSERT_EQ(spine.vertebrae.size(), base.vertebrae.size());
      for (std::size_t k = 0; k < base.vertebrae.size(); ++k) {
        for (auto m : kAllOrientationMethods) {
          const LocalFrame f0 = estimate_frame(base.vertebrae[k], base.axis_at(k).up, m);
          const LocalFrame f1 = estimate_frame(spine.vertebrae[k], spine.axis_at(k).up, m);
          EXPECT_LT(angular_deviation(f1.superior.vec(), r * f0.superior.vec()), 0.5);
          EXPECT_LT(angular_deviation(f1.posterior.vec(), r * f0.posterior.vec()), 0.5) << to_string(m);
          EXPECT_LT(angular_deviation(f1.lateral.vec(), r * f0.lateral.vec()), 0.5) << to_string(m);
          EXPECT_NEAR(f1.rotation().determinant(), 1.0, 1e-9);
        }
      }
    }
  }
}

TEST(Orientation, RotatedVertebraRecoversTheTrueFrame) {
  // Posterior structures only point along the true posterior if the method
  // follows the data; a pure 35 degree axial turn has a known answer.
  const Mat3 r = axis_angle(Vec3(0, 0, 1), deg_to_rad(35.0));
  const VertebraInstance v = single([&](const Vec3& p) -> Label {
    const Vec3 q = r.transpose() * p;
    if (Label l = corpus_block(q)) return l;
    if (std::abs(q.x()) <= 6 && q.y() <= -8 && q.y() >= -14 && std::abs(q.z()) <= 4) return code_of(20, Subregion::Arcus);
    return 0;
  });
  const Vec3 truth = r * Vec3(0, -1, 0);
  for (auto m : kAllOrientationMethods) {
    EXPECT_LT(angular_deviation(estimate_frame(v, kUp, m).posterior.vec(), truth), 1.0) << to_string(m);
  }
}

TEST(Evaluation, SymmetricSuiteIsExact) {
  SuiteConfig cfg;
  cfg.spines = 2;
  cfg.spinosus_deflection_deg = 0.0;
  cfg.arcus_skew_deg = 0.0;
  cfg.process_asymmetry = 0.0;
  cfg.max_curvature_deg = 0.0;
  std::vector<Phantom> phantoms;
  for (const auto& s : orientation_suite(cfg)) phantoms.push_back(generate_spine(s));
  for (auto m : kAllOrientationMethods) {
    const auto ev = evaluate_orientation(phantoms, m);
    EXPECT_EQ(ev.stats.n, 10u);
    EXPECT_EQ(ev.stats.failures, 0u);
    EXPECT_LT(ev.stats.mean_deg, 0.5) << to_string(m);
    EXPECT_EQ(ev.stats.frac_le_3, 1.0);
  }
}

}  // namespace
}  // namespace spinepoi
