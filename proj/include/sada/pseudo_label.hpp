// SPDX-License-Identifier: Apache-2.0
//
// Pseudo ground truth from a fused probability map m̄ (C×H×W):
//   t_c   = ψ · max_{j,k} m̄[c, j, k]
//   c*    = argmax_c m̄[c, j, k]            (ties → lowest index)
//   label = c* if m̄[c*, j, k] ≥ t_{c*}, else ignore (255)

#pragma once

#include <cstdint>
#include <vector>

#include "sada/augment.hpp"

namespace sada {

struct PseudoLabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;  // H·W, kIgnoreLabel for ignored pixels
  std::vector<float> thresholds;     // t_c
  float psi = 0.0f;
  double coverage = 0.0;             // fraction of labeled pixels
};

std::vector<float> class_thresholds(const FusedProbMap& fused, float psi);

PseudoLabelMap make_pseudo_gt(const FusedProbMap& fused, float psi);

}  // namespace sada
