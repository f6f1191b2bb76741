// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "spinepoi/spinepoi.hpp"

namespace spinepoi::cli {
namespace {

std::shared_ptr<spdlog::logger> make_logger() {
  auto log = spdlog::stderr_color_mt("spinepoi");
  log->set_pattern("%^%l%$: %v");
  const char* env = std::getenv("SPINEPOI_LOG");
  log->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
  return log;
}

spdlog::logger& logger() {
  static std::shared_ptr<spdlog::logger> log = make_logger();
  return *log;
}

struct ExtractOptions {
  std::string input;
  std::string labels;
  std::string instances;
  std::string out;
  std::string slicer_out;
  std::string method = "proj2d";
  std::string convention = "ras";
  std::string shift_mode = "divide";
  double precision_mm = 0.05;
  double step_mm = 0.25;
  double initial_step_mm = 4.0;
  int threads = 1;
};

ExtractionConfig extraction_config(const ExtractOptions& o) {
  ExtractionConfig cfg;
  cfg.method = parse_orientation_method(o.method);
  cfg.bisection.precision_mm = o.precision_mm;
  cfg.bisection.initial_step_mm = o.initial_step_mm;
  cfg.ray.march_step_mm = o.step_mm;
  cfg.shift_mode = parse_shift_mode(o.shift_mode);
  cfg.threads = o.threads;
  return cfg;
}

std::shared_ptr<const LabelVolume> load_volume(const ExtractOptions& o) {
  LabelVolume vol = io::read_label_volume(o.input);
  if (!o.instances.empty()) vol = io::merge_instances(vol, io::read_label_volume(o.instances));
  return std::make_shared<const LabelVolume>(std::move(vol));
}

LabelDictionary load_dictionary(const std::string& path) {
  return path.empty() ? LabelDictionary::spineps_default() : io::read_label_dictionary(path);
}

void report_spine(const SpineInstance& spine) {
  for (const auto& w : spine.warnings) logger().warn("{}", w);
  logger().info("{} vertebrae", spine.vertebrae.size());
}

int report_skips(const PoiSet& pois) {
  for (const auto& s : pois.skips()) logger().warn("{} {}: {}", pois.level_of(s.v_id), s.name, s.reason);
  for (const auto& s : pois.notes()) logger().info("{} {}: {}", pois.level_of(s.v_id), s.name, s.reason);
  return pois.skips().empty() ? kSuccess : kRecordedSkips;
}

void add_extraction_flags(CLI::App* cmd, ExtractOptions& o) {
  cmd->add_option("--method", o.method, "Orientation method")
      ->check(CLI::IsMember({"cms3d-all", "cms3d-arcspin", "proj2d"}))
      ->capture_default_str();
  cmd->add_option("--precision-mm", o.precision_mm, "Bisection precision")->capture_default_str();
  cmd->add_option("--step-mm", o.step_mm, "Ray march step")->capture_default_str();
  cmd->add_option("--initial-step-mm", o.initial_step_mm, "Initial bisection step")->capture_default_str();
  cmd->add_option("--shift-mode", o.shift_mode, "How the level factor scales the lateral shift")
      ->check(CLI::IsMember({"divide", "multiply"}))
      ->capture_default_str();
  cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::Range(1, 256))->capture_default_str();
}

int run_extract(const ExtractOptions& o) {
  const auto vol = load_volume(o);
  const SpineInstance spine = assemble_spine(vol, load_dictionary(o.labels));
  report_spine(spine);
  PoiSet pois = extract_all(spine, extraction_config(o));
  pois = retarget(pois, parse_convention(o.convention));
  io::write_poi_json(pois, o.out);
  if (!o.slicer_out.empty()) io::export_slicer(pois, o.slicer_out);
  logger().info("{} landmarks written to {}", pois.size(), o.out);
  return report_skips(pois);
}

struct PhantomOptions {
  std::string spec;
  std::string out;
  std::string truth_out;
  std::optional<std::uint64_t> seed;
};

int run_phantom(const PhantomOptions& o) {
  PhantomSpec spec = o.spec.empty() ? default_spine_spec() : io::read_phantom_spec(o.spec);
  if (o.seed) spec.seed = *o.seed;
  const Phantom ph = generate_spine(spec);
  io::write_label_volume(*ph.volume, o.out);
  if (!o.truth_out.empty()) io::write_poi_document(io::truth_document(ph.truth), o.truth_out);
  const auto& d = ph.volume->dims();
  logger().info("phantom {}x{}x{} with {} vertebrae written to {}", d[0], d[1], d[2], ph.truth.vertebrae.size(), o.out);
  return kSuccess;
}

struct EvalOptions {
  std::string out;
  std::string json_out;
  std::uint64_t seed = SuiteConfig{}.seed;
  int spines = SuiteConfig{}.spines;
  int levels = SuiteConfig{}.levels_per_spine;
};

int run_orient_eval(const EvalOptions& o) {
  SuiteConfig cfg;
  cfg.seed = o.seed;
  cfg.spines = o.spines;
  cfg.levels_per_spine = o.levels;
  std::vector<Phantom> phantoms;
  for (const auto& spec : orientation_suite(cfg)) phantoms.push_back(generate_spine(spec));
  std::vector<OrientationEvaluation> rows;
  std::size_t failures = 0;
  for (OrientationMethod m : kAllOrientationMethods) {
    rows.push_back(evaluate_orientation(phantoms, m));
    failures += rows.back().stats.failures;
    for (const auto& c : rows.back().cases) {
      if (!c.failure.empty()) logger().warn("{} spine {} v_id {}: {}", to_string(m), c.spine, c.v_id, c.failure);
    }
  }
  const std::string csv = io::orientation_report_csv(rows);
  io::write_text(o.out, csv);
  if (!o.json_out.empty()) io::write_text(o.json_out, io::dump(io::orientation_report_json(rows)));
  logger().info("\n{}", csv);
  return failures == 0 ? kSuccess : kRecordedSkips;
}

struct ConvertOptions {
  std::string input;
  std::string out;
  std::string slicer_out;
  std::string convention = "ras";
  std::string voxel_of;
};

int run_convert(const ConvertOptions& o) {
  io::PoiDocument doc;
  if (io::detail::ends_with(o.input, ".mkr.json")) {
    doc.pois = io::poi_set_from_slicer(io::read_json_file(o.input), parse_convention(o.convention));
  } else {
    doc = io::read_poi_document(o.input);
  }
  const PoiSet world = retarget(doc.pois, parse_convention(o.convention));
  if (!o.out.empty()) {
    io::PoiDocument out = doc;
    if (o.voxel_of.empty()) {
      out.pois = world;
    } else {
      out.pois = retarget(doc.pois, io::read_label_volume(o.voxel_of).frame());
    }
    io::write_poi_document(out, o.out);
  }
  if (!o.slicer_out.empty()) io::export_slicer(world, o.slicer_out);
  return kSuccess;
}

struct BenchOptions {
  ExtractOptions extract;
  std::string out;
  int levels = 24;
};

int run_bench(const BenchOptions& o) {
  std::shared_ptr<const LabelVolume> vol;
  LabelDictionary dict = load_dictionary(o.extract.labels);
  const auto t0 = std::chrono::steady_clock::now();
  if (o.extract.input.empty()) {
    vol = generate_spine(default_spine_spec(static_cast<std::size_t>(o.levels))).volume;
  } else {
    vol = load_volume(o.extract);
  }
  const auto t1 = std::chrono::steady_clock::now();
  const SpineInstance spine = assemble_spine(vol, dict);
  PoiSet pois = extract_all(spine, extraction_config(o.extract));
  const auto t2 = std::chrono::steady_clock::now();
  const double load_s = std::chrono::duration<double>(t1 - t0).count();
  const double extract_s = std::chrono::duration<double>(t2 - t1).count();
  const auto& d = vol->dims();
  std::printf("threads=%d vertebrae=%zu landmarks=%zu skips=%zu dims=%dx%dx%d load_s=%.3f wall_time_s=%.3f\n",
              o.extract.threads, spine.vertebrae.size(), pois.size(), pois.skips().size(), d[0], d[1], d[2], load_s,
              extract_s);
  std::fflush(stdout);
  if (!o.out.empty()) io::write_poi_json(pois, o.out);
  return report_skips(pois);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Landmark extraction from vertebra subregion segmentations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "spinepoi 0.1.0");

  ExtractOptions ex;
  auto* extract = app.add_subcommand("extract", "Label volume to POI JSON");
  extract->add_option("--input", ex.input, "NIfTI label volume")->required()->check(CLI::ExistingFile);
  extract->add_option("--labels", ex.labels, "Label dictionary JSON (default: SPINEPS block coding)")
      ->check(CLI::ExistingFile);
  extract->add_option("--instances", ex.instances, "Instance volume holding v_id per voxel")->check(CLI::ExistingFile);
  extract->add_option("--out", ex.out, "POI JSON output")->required();
  extract->add_option("--slicer-out", ex.slicer_out, "3D Slicer .mkr.json output");
  extract->add_option("--convention", ex.convention, "Output world convention")
      ->check(CLI::IsMember({"ras", "lps", "RAS", "LPS"}))
      ->capture_default_str();
  add_extraction_flags(extract, ex);

  EvalOptions ev;
  auto* eval = app.add_subcommand("orient-eval", "Orientation accuracy on the seeded phantom suite");
  eval->add_option("--out", ev.out, "CSV report")->required();
  eval->add_option("--json-out", ev.json_out, "JSON report");
  eval->add_option("--seed", ev.seed, "Suite seed")->capture_default_str();
  eval->add_option("--spines", ev.spines, "Number of spines")->check(CLI::Range(1, 10000))->capture_default_str();
  eval->add_option("--levels", ev.levels, "Vertebrae per spine")->check(CLI::Range(2, 26))->capture_default_str();

  PhantomOptions ph;
  auto* phantom = app.add_subcommand("phantom", "Phantom spec to label volume and ground truth");
  phantom->add_option("--spec,--input", ph.spec, "Phantom spec JSON (default: 24-level scoliotic spine)")
      ->check(CLI::ExistingFile);
  phantom->add_option("--out", ph.out, "NIfTI output (.nii or .nii.gz)")->required();
  phantom->add_option("--truth-out", ph.truth_out, "Ground-truth POI JSON");
  phantom->add_option("--seed", ph.seed, "Overrides the spec seed");

  ConvertOptions cv;
  auto* convert = app.add_subcommand("convert", "Re-express a POI document");
  convert->add_option("--input", cv.input, "POI JSON or .mkr.json")->required()->check(CLI::ExistingFile);
  convert->add_option("--out", cv.out, "POI JSON output");
  convert->add_option("--slicer-out", cv.slicer_out, "3D Slicer .mkr.json output");
  convert->add_option("--convention", cv.convention, "World convention")
      ->check(CLI::IsMember({"ras", "lps", "RAS", "LPS"}))
      ->capture_default_str();
  convert->add_option("--voxel-of", cv.voxel_of, "Express points in voxel indices of this NIfTI grid")
      ->check(CLI::ExistingFile);

  BenchOptions bn;
  auto* bench = app.add_subcommand("bench", "Timed full extraction");
  bench->add_option("--input", bn.extract.input, "NIfTI label volume (default: generated phantom)")
      ->check(CLI::ExistingFile);
  bench->add_option("--labels", bn.extract.labels, "Label dictionary JSON")->check(CLI::ExistingFile);
  bench->add_option("--instances", bn.extract.instances, "Instance volume")->check(CLI::ExistingFile);
  bench->add_option("--levels", bn.levels, "Levels of the generated phantom")->check(CLI::Range(2, 24))->capture_default_str();
  bench->add_option("--out", bn.out, "POI JSON output");
  add_extraction_flags(bench, bn.extract);

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::fputs(app.help().c_str(), stderr);
    return kSuccess;
  } catch (const CLI::CallForVersion& e) {
    std::fputs((std::string(e.what()) + "\n").c_str(), stderr);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n\n%s", e.what(), app.help().c_str());
    return kFatal;
  }

  try {
    if (*extract) return run_extract(ex);
    if (*eval) return run_orient_eval(ev);
    if (*phantom) return run_phantom(ph);
    if (*convert) return run_convert(cv);
    if (*bench) return run_bench(bn);
  } catch (const Error& e) {
    logger().error("{}", e.what());
    return kFatal;
  } catch (const std::exception& e) {
    logger().error("{}", e.what());
    return kFatal;
  }
  return kFatal;
}

}  // namespace spinepoi::cli
