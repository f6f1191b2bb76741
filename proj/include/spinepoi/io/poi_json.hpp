// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "spinepoi/errors.hpp"
#include "spinepoi/grid.hpp"
#include "spinepoi/orientation.hpp"
#include "spinepoi/phantom.hpp"
#include "spinepoi/poi.hpp"

namespace spinepoi::io {

using Json = nlohmann::ordered_json;

constexpr std::string_view kPoiFormat = "spinepoi.poi";
constexpr int kPoiVersion = 1;

/// A POI document: extracted landmarks, or phantom ground truth with the
/// per-level centerline tangents.
struct PoiDocument {
  std::string role = "extracted";  // or "truth"
  PoiSet pois;
  std::map<int, Vec3> tangents;
};

namespace detail {

inline Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 json_vec(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) fail(ErrorCode::FormatError, what + " must be an array of three numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) fail(ErrorCode::FormatError, what + " must hold numbers");
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

template <typename T>
T field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorCode::FormatError, where + ": missing \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::FormatError, where + ": \"" + key + "\" has the wrong type");
  }
}

inline Json space_json(const CoordinateSpace& s) {
  Json j = Json::object();
  j["kind"] = s.kind == CoordinateSpace::Kind::World ? "world" : "voxel";
  j["convention"] = std::string(to_string(s.convention));
  if (s.kind == CoordinateSpace::Kind::Voxel) {
    Json rows = Json::array();
    for (int r = 0; r < 4; ++r) {
      rows.push_back(Json::array({s.affine(r, 0), s.affine(r, 1), s.affine(r, 2), s.affine(r, 3)}));
    }
    j["affine"] = rows;
  }
  return j;
}

inline CoordinateSpace json_space(const Json& j) {
  const auto kind = field<std::string>(j, "kind", "space");
  const WorldConvention conv = parse_convention(field<std::string>(j, "convention", "space"));
  if (kind == "world") return CoordinateSpace::world(conv);
  if (kind != "voxel") fail(ErrorCode::FormatError, "space.kind must be \"world\" or \"voxel\"");
  const Json& rows = j.contains("affine") ? j.at("affine") : Json();
  if (!rows.is_array() || rows.size() != 4) fail(ErrorCode::FormatError, "space.affine must be 4x4");
  Mat4 m;
  for (int r = 0; r < 4; ++r) {
    const Json& row = rows[static_cast<std::size_t>(r)];
    if (!row.is_array() || row.size() != 4) fail(ErrorCode::FormatError, "space.affine must be 4x4");
    for (int c = 0; c < 4; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return CoordinateSpace::voxel(AffineFrame(m, conv));
}

inline Json skip_json(const Skip& s) {
  Json j = Json::object();
  j["v_id"] = s.v_id;
  j["name"] = s.name;
  j["reason"] = s.reason;
  return j;
}

inline Skip json_skip(const Json& j) {
  return {field<int>(j, "v_id", "skip"), field<std::string>(j, "name", "skip"), field<std::string>(j, "reason", "skip")};
}

}  // namespace detail

inline Json poi_document_json(const PoiDocument& doc) {
  const PoiSet& p = doc.pois;
  Json j = Json::object();
  j["format"] = kPoiFormat;
  j["version"] = kPoiVersion;
  j["role"] = doc.role;
  j["space"] = detail::space_json(p.space());

  Json frames = Json::array();
  for (const auto& [v_id, fr] : p.frames()) {
    Json f = Json::object();
    f["v_id"] = v_id;
    f["level"] = fr.level;
    f["origin"] = detail::vec_json(fr.frame.origin);
    f["superior"] = detail::vec_json(fr.frame.superior.vec());
    f["posterior"] = detail::vec_json(fr.frame.posterior.vec());
    f["lateral"] = detail::vec_json(fr.frame.lateral.vec());
    frames.push_back(std::move(f));
  }
  j["frames"] = std::move(frames);

  Json entries = Json::array();
  for (const auto& [key, pos] : p.entries()) {
    Json e = Json::object();
    e["v_id"] = key.v_id;
    e["level"] = p.level_of(key.v_id);
    e["name"] = std::string(to_string(key.name));
    e["position"] = detail::vec_json(pos);
    entries.push_back(std::move(e));
  }
  j["entries"] = std::move(entries);

  Json skips = Json::array();
  for (const auto& s : p.skips()) skips.push_back(detail::skip_json(s));
  j["skips"] = std::move(skips);
  Json notes = Json::array();
  for (const auto& s : p.notes()) notes.push_back(detail::skip_json(s));
  j["notes"] = std::move(notes);

  if (doc.role == "truth") {
    Json tangents = Json::array();
    for (const auto& [v_id, t] : doc.tangents) {
      Json e = Json::object();
      e["v_id"] = v_id;
      e["superior"] = detail::vec_json(t);
      tangents.push_back(std::move(e));
    }
    j["tangents"] = std::move(tangents);
  }
  return j;
}

inline PoiDocument poi_document_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorCode::FormatError, "POI document must be a JSON object");
  if (detail::field<std::string>(j, "format", "document") != kPoiFormat) {
    fail(ErrorCode::FormatError, "not a spinepoi POI document");
  }
  const int version = detail::field<int>(j, "version", "document");
  if (version != kPoiVersion) fail(ErrorCode::VersionError, "unsupported POI document version " + std::to_string(version));

  PoiDocument doc;
  doc.role = j.contains("role") ? detail::field<std::string>(j, "role", "document") : "extracted";
  if (doc.role != "extracted" && doc.role != "truth") fail(ErrorCode::FormatError, "unknown role '" + doc.role + "'");
  const CoordinateSpace space = detail::json_space(j.contains("space") ? j.at("space") : Json());
  PoiSet pois(space);

  auto array_of = [&j](const char* key) -> const Json& {
    static const Json empty = Json::array();
    if (!j.contains(key)) return empty;
    if (!j.at(key).is_array()) fail(ErrorCode::FormatError, std::string("\"") + key + "\" must be an array");
    return j.at(key);
  };

  for (const Json& f : array_of("frames")) {
    const int v_id = detail::field<int>(f, "v_id", "frame");
    LocalFrame lf;
    lf.origin = detail::json_vec(f.at("origin"), "frame.origin");
    lf.superior = UnitVector::normalize(detail::json_vec(f.at("superior"), "frame.superior"));
    lf.posterior = UnitVector::normalize(detail::json_vec(f.at("posterior"), "frame.posterior"));
    lf.lateral = UnitVector::normalize(detail::json_vec(f.at("lateral"), "frame.lateral"));
    pois.set_frame(v_id, VertebraFrame{detail::field<std::string>(f, "level", "frame"), lf});
  }
  for (const Json& e : array_of("entries")) {
    const int v_id = detail::field<int>(e, "v_id", "entry");
    const auto name_str = detail::field<std::string>(e, "name", "entry");
    const auto name = parse_landmark(name_str);
    if (!name) fail(ErrorCode::FormatError, "unknown landmark '" + name_str + "'");
    if (e.contains("level")) pois.set_level(v_id, detail::field<std::string>(e, "level", "entry"));
    if (!e.contains("position")) fail(ErrorCode::FormatError, "entry: missing \"position\"");
    pois.insert(v_id, *name, detail::json_vec(e.at("position"), "entry.position"));
  }
  for (const Json& s : array_of("skips")) pois.add_skip(detail::json_skip(s));
  for (const Json& s : array_of("notes")) pois.add_note(detail::json_skip(s));
  for (const Json& t : array_of("tangents")) {
    doc.tangents[detail::field<int>(t, "v_id", "tangent")] = detail::json_vec(t.at("superior"), "tangent.superior");
  }
  doc.pois = std::move(pois);
  return doc;
}

inline PoiDocument truth_document(const PhantomTruth& truth) {
  PoiDocument doc;
  doc.role = "truth";
  doc.pois = truth.to_poi_set();
  for (const auto& v : truth.vertebrae) doc.tangents[v.v_id] = v.tangent.vec();
  return doc;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << text;
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what() + " (byte " + std::to_string(e.byte) + ")");
  }
}

inline void write_poi_json(const PoiSet& pois, const std::string& path) {
  write_text(path, dump(poi_document_json(PoiDocument{"extracted", pois, {}})));
}

inline void write_poi_document(const PoiDocument& doc, const std::string& path) {
  write_text(path, dump(poi_document_json(doc)));
}

inline PoiDocument read_poi_document(const std::string& path) { return poi_document_from_json(read_json_file(path)); }

inline PoiSet read_poi_json(const std::string& path) { return read_poi_document(path).pois; }

}  // namespace spinepoi::io
