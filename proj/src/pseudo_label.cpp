// SPDX-License-Identifier: Apache-2.0

#include "sada/pseudo_label.hpp"

#include <algorithm>
#include <string>

namespace sada {

namespace {

void check_psi(float psi) {
  if (!(psi >= 0.0f && psi <= 1.0f)) throw ContractError("psi must lie in [0, 1], got " + std::to_string(psi));
}

}  // namespace

std::vector<float> class_thresholds(const FusedProbMap& fused, float psi) {
  check_psi(psi);
  const Tensor& m = fused.probs;
  const std::size_t ch = m.dim(1), plane = m.dim(2) * m.dim(3);
  std::vector<float> t(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    const auto row = m.data().subspan(c * plane, plane);
    t[c] = psi * *std::max_element(row.begin(), row.end());
  }
  return t;
}

PseudoLabelMap make_pseudo_gt(const FusedProbMap& fused, float psi) {
  const Tensor& m = fused.probs;
  const std::size_t ch = m.dim(1);
  PseudoLabelMap out;
  out.height = m.dim(2);
  out.width = m.dim(3);
  out.psi = psi;
  out.thresholds = class_thresholds(fused, psi);
  const std::size_t plane = out.height * out.width;
  out.labels.assign(plane, kIgnoreLabel);
  auto p = m.data();
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t best = 0;
    float best_p = p[i];
    for (std::size_t c = 1; c < ch; ++c) {
      if (p[c * plane + i] > best_p) {
        best_p = p[c * plane + i];
        best = c;
      }
    }
    if (best_p >= out.thresholds[best]) {
      out.labels[i] = static_cast<std::uint8_t>(best);
      ++labeled;
    }
  }
  out.coverage = static_cast<double>(labeled) / static_cast<double>(plane);
  return out;
}

}  // namespace sada
