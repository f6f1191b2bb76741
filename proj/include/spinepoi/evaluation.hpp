// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spinepoi/anatomy.hpp"
#include "spinepoi/orientation.hpp"
#include "spinepoi/phantom.hpp"

namespace spinepoi {

struct OrientationCase {
  std::string spine;  // suite index
  int v_id = 0;
  std::optional<double> deviation_deg;
  std::string failure;
};

struct OrientationEvaluation {
  OrientationMethod method = OrientationMethod::Projection2d;
  OrientationStats stats;
  std::vector<OrientationCase> cases;
};

/// Estimated against true posterior direction for every vertebra of every
/// phantom. Per-vertebra errors become failures counted in n.
inline OrientationEvaluation evaluate_orientation(std::span<const Phantom> phantoms, OrientationMethod method,
                                                  const LabelDictionary& dict = LabelDictionary::spineps_default()) {
  OrientationEvaluation out;
  out.method = method;
  std::vector<std::optional<double>> deviations;
  for (std::size_t p = 0; p < phantoms.size(); ++p) {
    const Phantom& ph = phantoms[p];
    std::optional<SpineInstance> spine;
    std::string spine_error;
    try {
      spine = assemble_spine(ph.volume, dict);
    } catch (const Error& e) {
      spine_error = e.what();
    }
    for (const auto& truth : ph.truth.vertebrae) {
      OrientationCase c;
      c.spine = std::to_string(p);
      c.v_id = truth.v_id;
      if (!spine) {
        c.failure = spine_error;
      } else {
        for (std::size_t k = 0; k < spine->vertebrae.size(); ++k) {
          if (spine->vertebrae[k].v_id() != truth.v_id) continue;
          try {
            const LocalFrame f = estimate_frame(spine->vertebrae[k], spine->axis_at(k).up, method);
            c.deviation_deg = angular_deviation(f.posterior.vec(), truth.frame.posterior.vec());
          } catch (const Error& e) {
            c.failure = e.what();
          }
        }
        if (!c.deviation_deg && c.failure.empty()) c.failure = "vertebra not found in volume";
      }
      deviations.push_back(c.deviation_deg);
      out.cases.push_back(std::move(c));
    }
  }
  out.stats = summarize_deviations(deviations);
  return out;
}

}  // namespace spinepoi
