// SPDX-License-Identifier: Apache-2.0
//
// Mean intersection-over-union and expected calibration error. Both
// accumulators merge associatively, so per-image and pooled results come
// from the same code path.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "sada/tensor.hpp"

namespace sada {

// Rows are ground truth, columns prediction. Ground-truth pixels labelled
// kIgnoreLabel are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  void add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred);
  void merge(const ConfusionMatrix& other);

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t total() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct IoU {
  std::vector<std::optional<double>> per_class;  // nullopt where the union is empty
  std::optional<double> mean;                    // nullopt when every union is empty
};

IoU miou(const ConfusionMatrix& cm);

// Ten equal-width, right-closed confidence bins over (0, 1].
class CalibrationHistogram {
 public:
  static constexpr std::size_t kBins = 10;

  struct Bin {
    std::uint64_t count = 0;
    double confidence_sum = 0.0;
    std::uint64_t correct = 0;
  };

  static std::size_t bin_of(float confidence);

  void add(float confidence, bool correct);
  // Per pixel: confidence = max softmax probability, correct = argmax
  // equals truth. probs is 1×C×H×W, truth H·W with ignore labels skipped.
  void add_map(const Tensor& probs, std::span<const std::uint8_t> truth);
  void merge(const CalibrationHistogram& other);

  const std::array<Bin, kBins>& bins() const { return bins_; }
  std::uint64_t total() const;

 private:
  std::array<Bin, kBins> bins_{};
};

// Σ_b (n_b / n) · |acc_b − conf_b|; nullopt with no evaluated pixels.
std::optional<double> ece(const CalibrationHistogram& hist);

}  // namespace sada
