// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spinepoi/errors.hpp"
#include "spinepoi/grid.hpp"

namespace spinepoi {

enum class Subregion {
  Corpus,
  Arcus,
  Spinosus,
  CostalLeft,
  CostalRight,
  SupArticularLeft,
  SupArticularRight,
  InfArticularLeft,
  InfArticularRight,
};

constexpr std::size_t kSubregionCount = 9;

constexpr std::array<Subregion, kSubregionCount> kAllSubregions = {
    Subregion::Corpus,           Subregion::Arcus,           Subregion::Spinosus,
    Subregion::CostalLeft,       Subregion::CostalRight,     Subregion::SupArticularLeft,
    Subregion::SupArticularRight, Subregion::InfArticularLeft, Subregion::InfArticularRight,
};

/// Every subregion except the vertebral body.
constexpr std::array<Subregion, 8> kPosteriorSubregions = {
    Subregion::Arcus,           Subregion::Spinosus,          Subregion::CostalLeft,
    Subregion::CostalRight,     Subregion::SupArticularLeft,  Subregion::SupArticularRight,
    Subregion::InfArticularLeft, Subregion::InfArticularRight,
};

constexpr std::size_t index_of(Subregion s) { return static_cast<std::size_t>(s); }

constexpr std::string_view to_string(Subregion s) {
  switch (s) {
    case Subregion::Corpus: return "Corpus";
    case Subregion::Arcus: return "Arcus";
    case Subregion::Spinosus: return "Spinosus";
    case Subregion::CostalLeft: return "CostalLeft";
    case Subregion::CostalRight: return "CostalRight";
    case Subregion::SupArticularLeft: return "SupArticularLeft";
    case Subregion::SupArticularRight: return "SupArticularRight";
    case Subregion::InfArticularLeft: return "InfArticularLeft";
    case Subregion::InfArticularRight: return "InfArticularRight";
  }
  return "?";
}

inline Subregion parse_subregion(std::string_view s) {
  for (Subregion r : kAllSubregions) {
    if (to_string(r) == s) return r;
  }
  fail(ErrorCode::LabelDictionaryError, "unknown subregion '" + std::string(s) + "'");
}

/// Subregion codes of the SPINEPS semantic mask.
constexpr Label spineps_subregion_code(Subregion s) {
  switch (s) {
    case Subregion::Arcus: return 41;
    case Subregion::Spinosus: return 42;
    case Subregion::CostalLeft: return 43;
    case Subregion::CostalRight: return 44;
    case Subregion::SupArticularLeft: return 45;
    case Subregion::SupArticularRight: return 46;
    case Subregion::InfArticularLeft: return 47;
    case Subregion::InfArticularRight: return 48;
    case Subregion::Corpus: return 50;
  }
  return 0;
}
constexpr Label kSpinepsCorpusBorder = 49;
constexpr Label kBlockSize = 100;

// ---------------------------------------------------------------------------
// Level names
// ---------------------------------------------------------------------------

/// Vertebra index counted from the top, C1 = 1. Returns nullopt for names
/// outside C1-C7, T1-T12, L1-L6, S1.
inline std::optional<int> level_to_vid(std::string_view name) {
  if (name.size() < 2) return std::nullopt;
  int n = 0;
  for (std::size_t i = 1; i < name.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(name[i]))) return std::nullopt;
    n = n * 10 + (name[i] - '0');
  }
  switch (name[0]) {
    case 'C': return (n >= 1 && n <= 7) ? std::optional<int>(n) : std::nullopt;
    case 'T': return (n >= 1 && n <= 12) ? std::optional<int>(7 + n) : std::nullopt;
    case 'L': return (n >= 1 && n <= 6) ? std::optional<int>(19 + n) : std::nullopt;
    case 'S': return n == 1 ? std::optional<int>(26) : std::nullopt;
    default: return std::nullopt;
  }
}

inline std::string vid_to_level(int v_id) {
  if (v_id >= 1 && v_id <= 7) return "C" + std::to_string(v_id);
  if (v_id >= 8 && v_id <= 19) return "T" + std::to_string(v_id - 7);
  if (v_id >= 20 && v_id <= 25) return "L" + std::to_string(v_id - 19);
  if (v_id == 26) return "S1";
  return "V" + std::to_string(v_id);
}

// ---------------------------------------------------------------------------
// LabelDictionary
// ---------------------------------------------------------------------------

/// Maps (level, subregion) to label codes. A subregion may own more than one
/// code (SPINEPS splits the corpus into body and border); codes never repeat
/// across entries.
class LabelDictionary {
 public:
  struct Entry {
    std::string level;
    int v_id = 0;
    std::array<LabelSet, kSubregionCount> codes;
  };

  LabelDictionary() = default;

  explicit LabelDictionary(std::vector<Entry> entries, std::vector<Label> ignored = {})
      : entries_(std::move(entries)), ignored_(std::move(ignored)) {
    validate();
  }

  /// Block coding: code = 100 * v_id + SPINEPS subregion code, for every
  /// level C1..S1. The corpus border code is folded into the corpus.
  static LabelDictionary spineps_default() {
    std::vector<Entry> entries;
    for (int v = 1; v <= 26; ++v) {
      Entry e;
      e.v_id = v;
      e.level = vid_to_level(v);
      for (Subregion s : kAllSubregions) {
        e.codes[index_of(s)] = LabelSet{kBlockSize * static_cast<Label>(v) + spineps_subregion_code(s)};
      }
      e.codes[index_of(Subregion::Corpus)].merge(LabelSet{kBlockSize * static_cast<Label>(v) + kSpinepsCorpusBorder});
      entries.push_back(std::move(e));
    }
    return LabelDictionary(std::move(entries));
  }

  [[nodiscard]] const std::vector<Entry>& entries() const noexcept { return entries_; }
  [[nodiscard]] const std::vector<Label>& ignored() const noexcept { return ignored_; }

  /// (entry index, subregion) owning `code`, if declared.
  [[nodiscard]] std::optional<std::pair<std::size_t, Subregion>> lookup(Label code) const {
    auto it = index_.find(code);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// True when entries carry no level identity; v_id is then assigned in
  /// cranio-caudal order during assembly.
  [[nodiscard]] bool sequential() const noexcept { return sequential_; }

  [[nodiscard]] bool is_ignored(Label code) const {
    for (Label l : ignored_) {
      if (l == code) return true;
    }
    return false;
  }

 private:
  void validate() {
    index_.clear();
    std::map<int, std::string> seen_vids;
    std::size_t anonymous = 0;
    for (std::size_t e = 0; e < entries_.size(); ++e) {
      Entry& entry = entries_[e];
      if (entry.v_id < 1 && entry.level.empty()) {
        ++anonymous;
      } else if (entry.v_id < 1) {
        if (auto v = level_to_vid(entry.level)) {
          entry.v_id = *v;
        } else {
          fail(ErrorCode::LabelDictionaryError,
               "level '" + entry.level + "' has no v_id and is not a standard level name");
        }
      }
      if (entry.v_id >= 1 && !seen_vids.emplace(entry.v_id, entry.level).second) {
        fail(ErrorCode::LabelDictionaryError, "v_id " + std::to_string(entry.v_id) + " declared twice");
      }
      for (Subregion s : kAllSubregions) {
        for (Label code : entry.codes[index_of(s)].codes()) {
          if (!index_.emplace(code, std::make_pair(e, s)).second) {
            fail(ErrorCode::LabelDictionaryError, "label code " + std::to_string(code) + " declared twice");
          }
        }
      }
      if (entry.codes[index_of(Subregion::Corpus)].empty()) {
        fail(ErrorCode::LabelDictionaryError, "level '" + entry.level + "' declares no corpus code");
      }
    }
    if (anonymous != 0 && anonymous != entries_.size()) {
      fail(ErrorCode::LabelDictionaryError, "either every entry or no entry may omit its level");
    }
    sequential_ = anonymous != 0;
  }

  std::vector<Entry> entries_;
  std::vector<Label> ignored_;
  std::map<Label, std::pair<std::size_t, Subregion>> index_;
  bool sequential_ = false;
};

}  // namespace spinepoi
