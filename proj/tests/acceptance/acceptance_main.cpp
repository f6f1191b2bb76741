// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks 1-9. One PASS/FAIL line per criterion on stdout; the exit
// status is nonzero when any criterion fails.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cli.hpp"
#include "spinepoi/io/config.hpp"
#include "spinepoi/io/nifti.hpp"
#include "spinepoi/io/poi_json.hpp"
#include "spinepoi/io/slicer.hpp"
#include "test_support.hpp"

namespace spinepoi {
namespace {

using Clock = std::chrono::steady_clock;
using testing::code_of;
using testing::make_volume;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;
};

int g_failed = 0;

void report(int id, const char* title, const Verdict& v) {
  std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, title, v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++g_failed;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const LabelDictionary& dict() {
  static const LabelDictionary d = LabelDictionary::spineps_default();
  return d;
}

ExtractionConfig config(int threads = 1) {
  ExtractionConfig cfg;
  cfg.threads = threads;
  return cfg;
}

PoiSet extract(std::shared_ptr<const LabelVolume> vol, int threads = 1) {
  return extract_all(assemble_spine(std::move(vol), dict()), config(threads));
}

// ---------------------------------------------------------------------------
// 1, 2: orientation suite
// ---------------------------------------------------------------------------

struct SuiteRun {
  std::vector<Phantom> phantoms;
  std::vector<OrientationEvaluation> rows;
  double proj2d_seconds = 0.0;
};

SuiteRun run_suite() {
  SuiteRun s;
  const auto t0 = Clock::now();
  for (const auto& spec : orientation_suite()) s.phantoms.push_back(generate_spine(spec));
  s.rows.push_back(evaluate_orientation(s.phantoms, OrientationMethod::Projection2d));
  s.proj2d_seconds = seconds_since(t0);
  s.rows.push_back(evaluate_orientation(s.phantoms, OrientationMethod::Cms3dArcusSpinosus));
  s.rows.push_back(evaluate_orientation(s.phantoms, OrientationMethod::Cms3dAllPosterior));
  return s;
}

Verdict criterion_1(const SuiteRun& s) {
  const OrientationStats& st = s.rows[0].stats;
  Verdict v;
  v.pass = st.n == 90 && st.failures == 0 && st.mean_deg <= 3.0 && st.frac_le_10 == 1.0 && s.proj2d_seconds < 30.0;
  v.detail = fmt("proj2d mean %.3f deg over n=%zu (failures %zu), <=10 deg %.2f, suite generation + evaluation %.2f s",
                 st.mean_deg, st.n, st.failures, st.frac_le_10, s.proj2d_seconds);
  return v;
}

Verdict criterion_2(const SuiteRun& s) {
  // Table 1 layout, best method first.
  std::fputs(io::orientation_report_csv(s.rows).c_str(), stdout);
  const double proj = s.rows[0].stats.mean_deg;
  const double arcspin = s.rows[1].stats.mean_deg;
  const double all = s.rows[2].stats.mean_deg;
  Verdict v;
  v.pass = proj <= arcspin && arcspin <= all;
  v.detail = fmt("proj2d %.3f <= cms3d-arcspin %.3f <= cms3d-all %.3f", proj, arcspin, all);
  return v;
}

// ---------------------------------------------------------------------------
// 3: corners against the lattice replay
// ---------------------------------------------------------------------------

Verdict criterion_3(const SuiteRun& s) {
  const BisectionConfig bis;
  double worst = 0.0;
  std::size_t compared = 0, over = 0;
  double extract_seconds = 0.0;
  std::string worst_where;
  for (std::size_t p = 0; p < s.phantoms.size(); ++p) {
    const auto t0 = Clock::now();
    const SpineInstance spine = assemble_spine(s.phantoms[p].volume, dict());
    const PoiSet pois = extract_all(spine, config());
    extract_seconds += seconds_since(t0);
    for (const VertebraInstance& v : spine.vertebrae) {
      const auto fr = pois.frames().find(v.v_id());
      if (fr == pois.frames().end()) continue;
      const LocalFrame& f = fr->second.frame;
      const LabelSet& corpus = v.labels(Subregion::Corpus);
      auto inside = [&](const Vec3& q) { return testing::oracle_occupancy(v.volume(), corpus, q) >= 0.5; };
      if (!inside(f.origin)) {
        worst = 1e9;
        worst_where = v.level() + " corpus center outside corpus";
        continue;
      }
      // Start points: the corpus center, and the two laterally shifted
      // origins pulled back into the corpus the way the extractor does.
      std::vector<std::pair<std::optional<bool>, Vec3>> starts = {{std::nullopt, f.origin}};
      if (const auto shift = lateral_shift_mm(v, LandmarkBatch{}, ShiftMode::Divide)) {
        for (bool right : {false, true}) {
          const Vec3 side = f.lateral.vec() * (right ? 1.0 : -1.0);
          Vec3 o = f.origin + side * shift->mm;
          bool ok = inside(o);
          const double step = RayConfig{}.march_step_mm;
          for (double t = step; !ok && t <= v.volume().frame().spacing().maxCoeff() + 1e-12; t += step) {
            if (inside(f.origin + side * (shift->mm - t))) {
              o = f.origin + side * (shift->mm - t);
              ok = true;
            }
          }
          if (ok) starts.emplace_back(right, o);
        }
      }
      for (const auto& [right, start] : starts) {
        for (std::size_t c = 0; c < 4; ++c) {
          const LandmarkName name = right ? shifted(kCornerNames[c], *right) : kCornerNames[c];
          const auto got = pois.get(v.v_id(), name);
          if (!got) continue;
          const Vec3 oracle = testing::replay_corner_walk(v.volume(), corpus, start, f.superior.vec(),
                                                          f.posterior.vec(), kCornerSigns[c].first,
                                                          kCornerSigns[c].second, bis);
          const double d = (*got - oracle).norm();
          ++compared;
          if (d > 0.1) ++over;
          if (d > worst) {
            worst = d;
            worst_where = "spine " + std::to_string(p) + " " + v.level() + " " + std::string(to_string(name));
          }
        }
      }
    }
  }
  Verdict v;
  v.pass = compared > 0 && over == 0 && worst <= 0.1 && extract_seconds < 60.0;
  v.detail = fmt("%zu corners, worst %.4f mm (%s), %zu over 0.1 mm, suite extraction %.2f s", compared, worst,
                 worst_where.c_str(), over, extract_seconds);
  return v;
}

// ---------------------------------------------------------------------------
// 4: cardinal points on cuboids
// ---------------------------------------------------------------------------

// Cuboid on a 1 mm grid; the box faces of an axis-aligned cuboid coincide
// with voxel faces, so the rasterized solid is the analytic one.
double cuboid_error(const Vec3& half, const Vec3& center, const Mat3& r, double h) {
  const Label corpus = code_of(20, Subregion::Corpus);
  const double reach = half.norm() + 4.0;
  const int n = 2 * static_cast<int>(std::ceil(reach / h));
  const Vec3 origin = center - Vec3::Constant((n / 2.0 - 0.5) * h);
  const auto vol = make_volume(Dims{n, n, n}, Vec3(h, h, h), origin, [&](const Vec3& p) -> Label {
    const Vec3 q = r.transpose() * (p - center);
    return (q.cwiseAbs() - half).maxCoeff() <= 0.0 ? corpus : 0;
  });
  const SpineInstance spine = assemble_spine(vol, dict());
  const VertebraInstance& v = spine.vertebrae.at(0);
  LocalFrame f;
  f.origin = v.center_of_mass(Subregion::Corpus);
  f.superior = UnitVector::normalize(r.col(2));
  f.posterior = UnitVector::normalize(-r.col(1));
  f.lateral = UnitVector::normalize(r.col(0));
  const LandmarkBatch b = corpus_cardinal_pois(v, f, config());
  const std::array<std::pair<LandmarkName, Vec3>, 6> expect = {{
      {LandmarkName::CorpusSup, Vec3(0, 0, half.z())},
      {LandmarkName::CorpusInf, Vec3(0, 0, -half.z())},
      {LandmarkName::CorpusAnt, Vec3(0, half.y(), 0)},
      {LandmarkName::CorpusPost, Vec3(0, -half.y(), 0)},
      {LandmarkName::CorpusLeft, Vec3(-half.x(), 0, 0)},
      {LandmarkName::CorpusRight, Vec3(half.x(), 0, 0)},
  }};
  double worst = 0.0;
  for (const auto& [name, local] : expect) {
    const auto got = b.find(name);
    if (!got) return 1e9;
    worst = std::max(worst, (*got - (center + r * local)).norm());
  }
  return worst;
}

Verdict criterion_4() {
  const std::vector<Vec3> halves = {Vec3(20, 15, 12), Vec3(14, 10, 8), Vec3(22, 16, 13), Vec3(9, 12, 7)};
  const std::vector<Vec3> centers = {Vec3(0, 0, 0), Vec3(3, -7, 11)};
  double aligned = 0.0;
  for (const Vec3& h : halves) {
    for (const Vec3& c : centers) aligned = std::max(aligned, cuboid_error(h, c, Mat3::Identity(), 1.0));
  }
  // A tilted face rasterized by center inclusion staircases by up to half a
  // voxel along its normal, so the rotated bound is judged on a 0.5 mm grid.
  // The 1 mm figure is reported alongside.
  double rotated = 0.0, rotated_1mm = 0.0;
  std::string where;
  for (double deg : {15.0, 30.0, 45.0}) {
    for (const Vec3& axis : {Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 1)}) {
      for (const Vec3& h : halves) {
        const Mat3 r = axis_angle(axis, deg_to_rad(deg));
        const double e = cuboid_error(h, Vec3(0.3, -0.2, 0.1), r, 0.5);
        rotated_1mm = std::max(rotated_1mm, cuboid_error(h, Vec3(0.3, -0.2, 0.1), r, 1.0));
        if (e > rotated) {
          rotated = e;
          where = fmt("%.0f deg about (%g,%g,%g)", deg, axis.x(), axis.y(), axis.z());
        }
      }
    }
  }
  Verdict v;
  v.pass = aligned <= 0.05 && rotated <= 0.3;
  v.detail = fmt(
      "axis-aligned worst %.4f mm (8 cuboids, 1 mm grid); rotated 15/30/45 deg worst %.4f mm at %s "
      "(48 cuboids, 0.5 mm grid; 1 mm grid worst %.4f mm)",
      aligned, rotated, where.c_str(), rotated_1mm);
  return v;
}

// ---------------------------------------------------------------------------
// 5: rigid motion
// ---------------------------------------------------------------------------

Verdict criterion_5() {
  PhantomSpec spec;
  for (const char* level : {"T12", "L1", "L2"}) spec.vertebrae.push_back(default_vertebra(level));
  spec.curvature_deg = 10.0;
  const Phantom ph = generate_spine(spec);
  const PoiSet base = extract(ph.volume);
  PhantomRng rng(20240602);
  double worst = 0.0;
  std::size_t compared = 0, missing = 0;
  for (int t = 0; t < 20; ++t) {
    const Mat3 r = rng.rotation();
    const Vec3 tr(rng.symmetric(50), rng.symmetric(50), rng.symmetric(50));
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = tr;
    const AffineFrame moved(m * ph.volume->frame().matrix(), WorldConvention::RAS);
    const auto vol = std::make_shared<const LabelVolume>(
        ph.volume->dims(), std::vector<Label>(ph.volume->labels().begin(), ph.volume->labels().end()), moved);
    const PoiSet got = extract(vol);
    for (const auto& [key, p] : base.entries()) {
      const auto q = got.get(key.v_id, key.name);
      if (!q) {
        ++missing;
        continue;
      }
      worst = std::max(worst, (*q - (r * p + tr)).norm());
      ++compared;
    }
  }
  Verdict v;
  v.pass = missing == 0 && worst <= 0.5;
  v.detail = fmt("20 transforms, %zu landmarks, worst %.4f mm, %zu missing", compared, worst, missing);
  return v;
}

// ---------------------------------------------------------------------------
// 6: anisotropic spacing
// ---------------------------------------------------------------------------

Verdict criterion_6() {
  PhantomSpec iso = default_spine_spec();
  iso.spacing = Vec3(1, 1, 1);
  iso.axes = "RAS";
  const PoiSet fine = extract(generate_spine(iso).volume);
  const PoiSet coarse = extract(generate_spine(default_spine_spec()).volume);
  double worst = 0.0;
  std::size_t compared = 0, over = 0;
  std::string where;
  for (const auto& [key, p] : fine.entries()) {
    const auto q = coarse.get(key.v_id, key.name);
    if (!q) continue;
    const double d = (*q - p).norm();
    ++compared;
    if (d > 1.7) ++over;
    if (d > worst) {
      worst = d;
      where = fine.level_of(key.v_id) + " " + std::string(to_string(key.name));
    }
  }
  Verdict v;
  v.pass = compared > 0 && worst <= 1.7;
  v.detail = fmt("24 levels, %zu landmarks compared, worst %.3f mm (%s), %zu over 1.7 mm", compared, worst,
                 where.c_str(), over);
  return v;
}

// ---------------------------------------------------------------------------
// 7: runtime
// ---------------------------------------------------------------------------

Verdict criterion_7() {
  std::fflush(stdout);
  const std::string path = (std::filesystem::temp_directory_path() / "spinepoi-bench.txt").string();
  std::FILE* saved = std::fopen(path.c_str(), "w");
  const auto t0 = Clock::now();
  // bench prints to stdout; capture it through a temporary file.
  const int fd = dup(fileno(stdout));
  dup2(fileno(saved), fileno(stdout));
  const int code = cli::run({"spinepoi", "bench", "--threads", "1"});
  std::fflush(stdout);
  dup2(fd, fileno(stdout));
  close(fd);
  std::fclose(saved);
  const double total = seconds_since(t0);
  const std::string out = slurp(path);
  std::filesystem::remove(path);
  double wall = -1.0;
  if (const auto at = out.find("wall_time_s="); at != std::string::npos) wall = std::atof(out.c_str() + at + 12);
  std::string line = out.substr(0, out.find('\n'));
  Verdict v;
  v.pass = code <= cli::kRecordedSkips && wall >= 0.0 && wall < 60.0;
  v.detail = fmt("exit %d, extraction %.2f s, including phantom generation %.2f s [%s]", code, wall, total,
                 line.c_str());
  return v;
}

// ---------------------------------------------------------------------------
// 8: shift factor
// ---------------------------------------------------------------------------

Verdict criterion_8() {
  bool ok = shift_factor(1) == 2.0 && shift_factor(11) == 12.0 / 11.0;
  for (int v = 12; v <= 26; ++v) ok = ok && shift_factor(v) == 1.0;
  for (int v = 1; v < 11; ++v) ok = ok && shift_factor(v) > shift_factor(v + 1);
  Verdict v;
  v.pass = ok;
  v.detail = fmt("f(1)=%.17g f(11)=%.17g f(12)=%.17g f(26)=%.17g", shift_factor(1), shift_factor(11),
                 shift_factor(12), shift_factor(26));
  return v;
}

// ---------------------------------------------------------------------------
// 9: I/O contracts
// ---------------------------------------------------------------------------

Verdict criterion_9() {
  testing::TempDir dir;
  const Phantom ph = generate_spine(default_spine_spec(24, 30.0));
  std::vector<std::string> problems;

  // POI JSON round trip: truth and an extraction.
  double json_err = 0.0;
  const PoiSet extracted = extract(ph.volume, 1);
  for (const PoiSet* set : {&extracted}) {
    io::write_poi_json(*set, dir.file("p.json"));
    const PoiSet back = io::read_poi_json(dir.file("p.json"));
    if (back.size() != set->size()) problems.push_back("round trip lost entries");
    for (const auto& [key, p] : set->entries()) {
      const auto q = back.get(key.v_id, key.name);
      json_err = std::max(json_err, q ? (*q - p).norm() : 1e9);
    }
  }
  const io::PoiDocument truth = io::truth_document(ph.truth);
  io::write_poi_document(truth, dir.file("t.json"));
  const io::PoiDocument truth_back = io::read_poi_document(dir.file("t.json"));
  for (const auto& [key, p] : truth.pois.entries()) {
    const auto q = truth_back.pois.get(key.v_id, key.name);
    json_err = std::max(json_err, q ? (*q - p).norm() : 1e9);
  }
  if (json_err > 1e-9) problems.push_back(fmt("JSON round trip error %.3g mm", json_err));

  // Slicer export: built-in checks, then the independent schema validator.
  io::export_slicer(extracted, dir.file("p.mkr.json"));
  const io::Json mkr = io::read_json_file(dir.file("p.mkr.json"));
  const auto internal = io::validate_slicer_markups(mkr);
  if (!internal.empty()) problems.push_back("markups: " + internal.front());
  std::string schema_status = "skipped";
#if defined(SPINEPOI_PYTHON) && defined(SPINEPOI_SCHEMA_CHECK)
  {
    const std::string cmd = std::string("\"") + SPINEPOI_PYTHON + "\" \"" + SPINEPOI_SCHEMA_CHECK + "\" \"" +
                            SPINEPOI_MARKUPS_SCHEMA + "\" \"" + dir.file("p.mkr.json") + "\"";
    const int rc = std::system(cmd.c_str());
    schema_status = rc == 0 ? "valid" : "invalid";
    if (rc != 0) problems.push_back("jsonschema check exit " + std::to_string(rc));
  }
#else
  problems.push_back("no Python interpreter for the schema check");
#endif
  double lps_err = 0.0;
  const PoiSet from_slicer = io::poi_set_from_slicer(mkr, WorldConvention::RAS);
  for (const auto& [key, p] : extracted.entries()) {
    const auto q = from_slicer.get(key.v_id, key.name);
    lps_err = std::max(lps_err, q ? (*q - p).norm() : 1e9);
  }
  if (lps_err > 1e-6) problems.push_back(fmt("RAS/LPS round trip error %.3g mm", lps_err));

  // Byte determinism: repeated runs and thread counts, in memory and via the CLI.
  const std::string one = io::dump(io::poi_document_json(io::PoiDocument{"extracted", extracted, {}}));
  for (int threads : {1, 2, 4, 8}) {
    const PoiSet again = extract(ph.volume, threads);
    if (io::dump(io::poi_document_json(io::PoiDocument{"extracted", again, {}})) != one) {
      problems.push_back(fmt("output differs with %d threads", threads));
    }
  }
  io::write_label_volume(*ph.volume, dir.file("spine.nii.gz"));
  std::vector<std::string> outputs;
  for (const char* threads : {"1", "1", "4"}) {
    const std::string out = dir.file(std::string("cli") + std::to_string(outputs.size()));
    const int rc = cli::run({"spinepoi", "extract", "--input", dir.file("spine.nii.gz"), "--threads", threads, "--out",
                             out + ".json", "--slicer-out", out + ".mkr.json"});
    if (rc > cli::kRecordedSkips) problems.push_back("cli extract exit " + std::to_string(rc));
    outputs.push_back(slurp(out + ".json") + slurp(out + ".mkr.json"));
  }
  if (outputs[0].empty() || outputs[0] != outputs[1] || outputs[0] != outputs[2]) {
    problems.push_back("CLI outputs differ across runs or thread counts");
  }

  Verdict v;
  v.pass = problems.empty();
  v.detail = fmt("JSON max error %.3g mm, schema %s, LPS round trip %.3g mm, byte-identical across 1/2/4/8 threads",
                 json_err, schema_status.c_str(), lps_err);
  for (const auto& p : problems) v.detail += "; " + p;
  return v;
}

}  // namespace
}  // namespace spinepoi

int main() {
  using namespace spinepoi;
  const auto t0 = Clock::now();
  const SuiteRun suite = run_suite();
  report(1, "orientation accuracy", criterion_1(suite));
  report(2, "method ordering", criterion_2(suite));
  report(3, "corner bisection fidelity", criterion_3(suite));
  report(4, "cardinal raycast exactness", criterion_4());
  report(5, "rigid-motion equivariance", criterion_5());
  report(6, "anisotropy robustness", criterion_6());
  report(7, "single-thread runtime", criterion_7());
  report(8, "shift factor", criterion_8());
  report(9, "I/O contracts", criterion_9());
  std::printf("%d of 9 criteria met in %.1f s\n", 9 - g_failed, seconds_since(t0));
  return g_failed == 0 ? 0 : 1;
}
