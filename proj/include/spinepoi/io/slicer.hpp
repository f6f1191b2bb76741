// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spinepoi/io/poi_json.hpp"
#include "spinepoi/poi.hpp"

namespace spinepoi::io {

constexpr std::string_view kMarkupsSchema =
    "https://raw.githubusercontent.com/slicer/slicer/master/Modules/Loadable/Markups/Resources/Schema/"
    "markups-schema-v1.0.3.json#";

/// 3D Slicer markups document: one fiducial list per vertebra, LPS millimeters,
/// control points labeled "<level>_<landmark>".
inline Json slicer_markups_json(const PoiSet& pois) {
  const PoiSet lps = retarget(pois, WorldConvention::LPS);
  std::map<int, std::vector<std::pair<LandmarkName, Vec3>>> by_vertebra;
  for (const auto& [key, pos] : lps.entries()) by_vertebra[key.v_id].emplace_back(key.name, pos);

  Json markups = Json::array();
  for (const auto& [v_id, points] : by_vertebra) {
    const std::string level = lps.level_of(v_id);
    Json cps = Json::array();
    int id = 0;
    for (const auto& [name, pos] : points) {
      Json cp = Json::object();
      cp["id"] = std::to_string(++id);
      cp["label"] = level + "_" + std::string(to_string(name));
      cp["description"] = "";
      cp["associatedNodeID"] = "";
      cp["position"] = detail::vec_json(pos);
      cp["orientation"] = Json::array({1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
      cp["selected"] = true;
      cp["locked"] = false;
      cp["visibility"] = true;
      cp["positionStatus"] = "defined";
      cps.push_back(std::move(cp));
    }
    Json m = Json::object();
    m["type"] = "Fiducial";
    m["coordinateSystem"] = "LPS";
    m["coordinateUnits"] = "mm";
    m["locked"] = false;
    m["fixedNumberOfControlPoints"] = false;
    m["labelFormat"] = level + "_%d";
    m["lastUsedControlPointNumber"] = id;
    m["controlPoints"] = std::move(cps);
    m["measurements"] = Json::array();
    markups.push_back(std::move(m));
  }
  Json doc = Json::object();
  doc["@schema"] = kMarkupsSchema;
  doc["markups"] = std::move(markups);
  return doc;
}

/// Structural checks of the fields this tool writes; returns the list of
/// problems (empty when valid).
inline std::vector<std::string> validate_slicer_markups(const Json& doc) {
  std::vector<std::string> errors;
  auto err = [&errors](std::string s) { errors.push_back(std::move(s)); };
  if (!doc.is_object()) return {"document is not an object"};
  if (!doc.contains("@schema") || !doc["@schema"].is_string()) err("missing @schema");
  if (!doc.contains("markups") || !doc["markups"].is_array()) {
    err("missing markups array");
    return errors;
  }
  for (std::size_t m = 0; m < doc["markups"].size(); ++m) {
    const Json& mk = doc["markups"][m];
    const std::string where = "markups[" + std::to_string(m) + "]";
    if (!mk.is_object()) {
      err(where + " is not an object");
      continue;
    }
    if (mk.value("type", "") != "Fiducial") err(where + ".type is not Fiducial");
    if (mk.value("coordinateSystem", "") != "LPS") err(where + ".coordinateSystem is not LPS");
    if (mk.value("coordinateUnits", "") != "mm") err(where + ".coordinateUnits is not mm");
    if (!mk.contains("controlPoints") || !mk["controlPoints"].is_array()) {
      err(where + ".controlPoints missing");
      continue;
    }
    std::set<std::string> labels;
    for (std::size_t c = 0; c < mk["controlPoints"].size(); ++c) {
      const Json& cp = mk["controlPoints"][c];
      const std::string cw = where + ".controlPoints[" + std::to_string(c) + "]";
      if (!cp.contains("label") || !cp["label"].is_string()) {
        err(cw + ".label missing");
      } else if (!labels.insert(cp["label"].get<std::string>()).second) {
        err(cw + ".label repeats");
      }
      if (!cp.contains("position") || !cp["position"].is_array() || cp["position"].size() != 3) {
        err(cw + ".position must have three numbers");
      } else {
        for (const auto& v : cp["position"]) {
          if (!v.is_number() || !std::isfinite(v.get<double>())) err(cw + ".position is not finite");
        }
      }
      if (!cp.contains("orientation") || !cp["orientation"].is_array() || cp["orientation"].size() != 9) {
        err(cw + ".orientation must have nine numbers");
      }
      for (const char* key : {"selected", "visibility"}) {
        if (!cp.contains(key) || !cp[key].is_boolean()) err(cw + "." + key + " must be boolean");
      }
    }
  }
  return errors;
}

/// Reads a markups document back into a PoiSet in `target` world coordinates.
/// Labels must follow "<level>_<landmark>".
inline PoiSet poi_set_from_slicer(const Json& doc, WorldConvention target = WorldConvention::RAS) {
  const auto problems = validate_slicer_markups(doc);
  if (!problems.empty()) fail(ErrorCode::FormatError, "invalid markups document: " + problems.front());
  PoiSet lps(CoordinateSpace::world(WorldConvention::LPS));
  for (const Json& mk : doc["markups"]) {
    for (const Json& cp : mk["controlPoints"]) {
      const auto label = cp["label"].get<std::string>();
      const auto sep = label.find('_');
      if (sep == std::string::npos) fail(ErrorCode::FormatError, "control point label '" + label + "' has no level");
      const std::string level = label.substr(0, sep);
      const auto name = parse_landmark(label.substr(sep + 1));
      auto v_id = level_to_vid(level);
      if (!v_id && level.size() > 1 && level[0] == 'V' &&
          level.find_first_not_of("0123456789", 1) == std::string::npos) {
        v_id = std::stoi(level.substr(1));
      }
      if (!name || !v_id) fail(ErrorCode::FormatError, "control point label '" + label + "' is not recognized");
      lps.set_level(*v_id, level);
      lps.insert(*v_id, *name, detail::json_vec(cp["position"], "position"));
    }
  }
  return retarget(lps, target);
}

inline void export_slicer(const PoiSet& pois, const std::string& path) {
  write_text(path, dump(slicer_markups_json(pois)));
}

}  // namespace spinepoi::io
