// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "spinepoi/evaluation.hpp"
#include "spinepoi/io/poi_json.hpp"
#include "spinepoi/label_dictionary.hpp"
#include "spinepoi/phantom.hpp"

namespace spinepoi::io {

// ---------------------------------------------------------------------------
// Label dictionary
// ---------------------------------------------------------------------------

namespace detail {

inline LabelSet json_codes(const Json& j, const std::string& where) {
  std::vector<Label> codes;
  auto add = [&](const Json& v) {
    if (!v.is_number_integer() || v.get<long long>() < 1) {
      fail(ErrorCode::LabelDictionaryError, where + ": label codes must be integers >= 1");
    }
    codes.push_back(static_cast<Label>(v.get<long long>()));
  };
  if (j.is_array()) {
    for (const auto& v : j) add(v);
  } else {
    add(j);
  }
  return LabelSet(std::move(codes));
}

}  // namespace detail

/// Either {"scheme": "spineps"} (block coding 100 * v_id + subregion code) or
/// an explicit {"levels": [{"level", "v_id", "codes": {Subregion: code(s)}}]}.
/// Both accept an "ignore" list of codes that belong to no vertebra.
inline LabelDictionary label_dictionary_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorCode::LabelDictionaryError, "label dictionary must be a JSON object");
  std::vector<Label> ignored;
  if (j.contains("ignore")) {
    const LabelSet set = detail::json_codes(j.at("ignore"), "ignore");
    ignored.assign(set.codes().begin(), set.codes().end());
  }
  const std::string scheme = j.value("scheme", "");
  if (scheme == "spineps") {
    LabelDictionary base = LabelDictionary::spineps_default();
    return LabelDictionary(base.entries(), ignored);
  }
  if (!scheme.empty()) fail(ErrorCode::LabelDictionaryError, "unknown scheme '" + scheme + "'");
  if (!j.contains("levels") || !j.at("levels").is_array()) {
    fail(ErrorCode::LabelDictionaryError, "label dictionary needs \"scheme\" or a \"levels\" array");
  }
  std::vector<LabelDictionary::Entry> entries;
  for (const Json& lv : j.at("levels")) {
    LabelDictionary::Entry e;
    e.level = lv.value("level", "");
    e.v_id = lv.value("v_id", 0);
    const std::string where = e.level.empty() ? "levels[" + std::to_string(entries.size()) + "]" : e.level;
    if (!lv.contains("codes") || !lv.at("codes").is_object()) {
      fail(ErrorCode::LabelDictionaryError, where + ": missing \"codes\" object");
    }
    for (const auto& [name, codes] : lv.at("codes").items()) {
      e.codes[index_of(parse_subregion(name))].merge(detail::json_codes(codes, where + "." + name));
    }
    entries.push_back(std::move(e));
  }
  return LabelDictionary(std::move(entries), std::move(ignored));
}

inline LabelDictionary read_label_dictionary(const std::string& path) {
  return label_dictionary_from_json(read_json_file(path));
}

/// Combines a semantic subregion map (SPINEPS codes 41..50) with an instance
/// map holding v_id per voxel into block codes 100 * v_id + subregion.
/// Voxels labeled in only one of the two stay 0.
inline LabelVolume merge_instances(const LabelVolume& semantic, const LabelVolume& instances) {
  if (semantic.dims() != instances.dims()) fail(ErrorCode::PreconditionViolation, "instance map dimensions differ");
  const auto s = semantic.labels();
  const auto v = instances.labels();
  std::vector<Label> out(s.size(), 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == 0 || v[i] == 0) continue;
    if (s[i] >= kBlockSize) fail(ErrorCode::LabelDictionaryError, "semantic code " + std::to_string(s[i]) + " >= 100");
    out[i] = kBlockSize * v[i] + s[i];
  }
  return LabelVolume(semantic.dims(), std::move(out), semantic.frame());
}

// ---------------------------------------------------------------------------
// Phantom spec
// ---------------------------------------------------------------------------

namespace detail {

inline void apply_vertebra_fields(VertebraSpec& v, const Json& j) {
  if (!j.is_object()) fail(ErrorCode::FormatError, "vertebra parameters must be an object");
  for (const auto& [key, val] : j.items()) {
    auto num = [&]() {
      if (!val.is_number()) fail(ErrorCode::FormatError, "\"" + key + "\" must be a number");
      return val.get<double>();
    };
    auto flag = [&]() {
      if (!val.is_boolean()) fail(ErrorCode::FormatError, "\"" + key + "\" must be a boolean");
      return val.get<bool>();
    };
    if (key == "level") v.level = val.get<std::string>();
    else if (key == "v_id") v.v_id = val.get<int>();
    else if (key == "corpus_half") v.corpus_half = json_vec(val, key);
    else if (key == "corpus_rounding") v.corpus_rounding = num();
    else if (key == "wedge_deg") v.wedge_deg = num();
    else if (key == "arcus") v.arcus = flag();
    else if (key == "canal_half_width") v.canal_half_width = num();
    else if (key == "canal_depth") v.canal_depth = num();
    else if (key == "arcus_wall") v.arcus_wall = num();
    else if (key == "arcus_half_height") v.arcus_half_height = num();
    else if (key == "arcus_skew_deg") v.arcus_skew_deg = num();
    else if (key == "spinosus") v.spinosus = flag();
    else if (key == "spinosus_length") v.spinosus_length = num();
    else if (key == "spinosus_radius") v.spinosus_radius = num();
    else if (key == "spinosus_deflection_deg") v.spinosus_deflection_deg = num();
    else if (key == "costal") v.costal = flag();
    else if (key == "costal_length") v.costal_length = num();
    else if (key == "costal_radius") v.costal_radius = num();
    else if (key == "articular") v.articular = flag();
    else if (key == "articular_length") v.articular_length = num();
    else if (key == "articular_radius") v.articular_radius = num();
    else if (key == "process_asymmetry") v.process_asymmetry = num();
    else if (key == "axial_rotation_deg") v.axial_rotation_deg = num();
    else fail(ErrorCode::FormatError, "unknown vertebra parameter '" + key + "'");
  }
}

}  // namespace detail

/// Declarative phantom document. Vertebrae come from "levels" (names or
/// objects with overrides) or "count" (the last levels ending at S1);
/// "geometry": "graded" sizes each level like default_vertebra, otherwise the
/// lumbar defaults apply. "defaults" overrides every level.
inline PhantomSpec phantom_spec_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorCode::FormatError, "phantom spec must be a JSON object");
  PhantomSpec spec;
  const bool graded = j.value("geometry", "uniform") == "graded";
  std::vector<Json> levels;
  if (j.contains("levels")) {
    for (const auto& l : j.at("levels")) levels.push_back(l);
  } else {
    for (const auto& name : default_levels(j.value("count", 1))) levels.push_back(name);
  }
  for (const Json& l : levels) {
    const std::string name = l.is_string() ? l.get<std::string>() : l.value("level", "");
    VertebraSpec v = graded ? default_vertebra(name) : VertebraSpec{};
    v.level = name;
    if (j.contains("defaults")) detail::apply_vertebra_fields(v, j.at("defaults"));
    if (l.is_object()) detail::apply_vertebra_fields(v, l);
    spec.vertebrae.push_back(std::move(v));
  }
  spec.curvature_deg = j.value("curvature_deg", 0.0);
  spec.disc_mm = j.value("disc_mm", spec.disc_mm);
  if (j.contains("spacing")) spec.spacing = detail::json_vec(j.at("spacing"), "spacing");
  spec.axes = j.value("axes", spec.axes);
  if (j.contains("convention")) spec.convention = parse_convention(j.at("convention").get<std::string>());
  spec.margin_mm = j.value("margin_mm", spec.margin_mm);
  spec.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("rotation")) {
    const Json& r = j.at("rotation");
    spec.rotation = axis_angle(detail::json_vec(r.at("axis"), "rotation.axis"), deg_to_rad(r.at("angle_deg").get<double>()));
  }
  if (j.contains("translation")) spec.translation = detail::json_vec(j.at("translation"), "translation");
  if (j.contains("randomize")) {
    const Json& r = j.at("randomize");
    spec.randomize.spinosus_deflection_deg = r.value("spinosus_deflection_deg", 0.0);
    spec.randomize.arcus_skew_deg = r.value("arcus_skew_deg", 0.0);
    spec.randomize.process_asymmetry = r.value("process_asymmetry", 0.0);
    spec.randomize.axial_rotation_deg = r.value("axial_rotation_deg", 0.0);
  }
  return spec;
}

inline PhantomSpec read_phantom_spec(const std::string& path) { return phantom_spec_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Orientation report
// ---------------------------------------------------------------------------

inline std::string orientation_report_csv(const std::vector<OrientationEvaluation>& rows) {
  std::string out = "method,mean_deg,std_deg,frac_le_3,frac_le_10,n\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f,%.4f,%zu\n", std::string(to_string(r.method)).c_str(),
                  r.stats.mean_deg, r.stats.std_deg, r.stats.frac_le_3, r.stats.frac_le_10, r.stats.n);
    out += buf;
  }
  return out;
}

inline Json orientation_report_json(const std::vector<OrientationEvaluation>& rows) {
  Json arr = Json::array();
  for (const auto& r : rows) {
    Json o = Json::object();
    o["method"] = std::string(to_string(r.method));
    o["mean_deg"] = r.stats.mean_deg;
    o["std_deg"] = r.stats.std_deg;
    o["frac_le_3"] = r.stats.frac_le_3;
    o["frac_le_10"] = r.stats.frac_le_10;
    o["n"] = r.stats.n;
    o["failures"] = r.stats.failures;
    arr.push_back(std::move(o));
  }
  Json doc = Json::object();
  doc["rows"] = std::move(arr);
  return doc;
}

}  // namespace spinepoi::io
