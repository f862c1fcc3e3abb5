// SPDX-License-Identifier: Apache-2.0
//
// Per-sample self-adaptation and its baselines.
//
// adapt_one, for each of n_iters iterations:
//   1. forward every augmented view under SaN, map softmax outputs back to
//      the original grid and average them;
//   2. threshold the fused map into a pseudo ground truth;
//   3. take one SGD step on the cross-entropy of the original view's logits
//      against it, updating only the selected layer groups.
// The final mask is one SaN forward on the original image. The network is
// restored to its entry state before returning, so no sample can influence
// another.

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sada/augment.hpp"
#include "sada/model.hpp"
#include "sada/pseudo_label.hpp"

namespace sada {

struct AdaptConfig {
  float psi = 0.7f;
  float eta = 0.05f;
  int n_iters = 10;
  ViewOptions views;
  std::set<std::string> adapt_groups{"block4", "block5", "head"};
  float alpha = 0.1f;
  bool loss_on_all_views = false;
  // Test mode: reuse the first iteration's pseudo-labels for every step.
  bool freeze_pseudo_labels = false;

  void validate() const;  // throws ContractError
};

struct Prediction {
  std::vector<std::uint8_t> mask;  // H·W
  Tensor probs;                    // 1×C×H×W confidences backing the mask
};

struct AdaptReport {
  std::vector<double> losses;    // one per applied update
  std::vector<double> coverage;  // one per iteration
  std::size_t skipped_updates = 0;
  double wall_ms = 0.0;
  std::uint64_t guard_events = 0;
  std::vector<std::string> warnings;
};

struct AdaptResult {
  Prediction prediction;
  AdaptReport report;
};

// Restores a network to the state captured at construction.
class ScopedRestore {
 public:
  explicit ScopedRestore(TinySegNet& net) : net_(net), snapshot_(net.snapshot()) {}
  ~ScopedRestore() { net_.restore(snapshot_); }
  ScopedRestore(const ScopedRestore&) = delete;
  ScopedRestore& operator=(const ScopedRestore&) = delete;

 private:
  TinySegNet& net_;
  ParamSnapshot snapshot_;
};

// image is 3×H×W (or 1×3×H×W).
Prediction predict(TinySegNet& net, const Tensor& image, const SanConfig& norm);

// Fused softmax over all views, no parameter updates.
FusedProbMap fused_views(TinySegNet& net, const ViewSet& views, std::size_t height, std::size_t width,
                         const SanConfig& norm);
Prediction tta_predict(TinySegNet& net, const Tensor& image, const AdaptConfig& cfg);

AdaptResult adapt_one(TinySegNet& net, const Tensor& image, const AdaptConfig& cfg);

// Entropy-minimization baseline on the single original view.
AdaptResult entropy_adapt(TinySegNet& net, const Tensor& image, const AdaptConfig& cfg);

// Nearest-neighbour transfer of original-grid labels onto a view grid.
std::vector<std::uint8_t> labels_for_view(const ViewSpec& spec, std::span<const std::uint8_t> labels,
                                          std::size_t height, std::size_t width, std::size_t view_h,
                                          std::size_t view_w);

}  // namespace sada
