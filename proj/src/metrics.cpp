// SPDX-License-Identifier: Apache-2.0

#include "sada/metrics.hpp"

#include <cmath>
#include <numeric>

namespace sada {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

void ConfusionMatrix::add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred) {
  if (truth.size() != pred.size()) throw ShapeError("confusion matrix: truth and prediction sizes differ");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kIgnoreLabel) continue;
    if (truth[i] >= classes_ || pred[i] >= classes_) throw ContractError("label outside class range");
    ++counts_[truth[i] * classes_ + pred[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ContractError("merging confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

IoU miou(const ConfusionMatrix& cm) {
  const std::size_t n = cm.classes();
  IoU out;
  out.per_class.resize(n);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == c) continue;
      fp += cm.at(k, c);
      fn += cm.at(c, k);
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    out.per_class[c] = iou;
    sum += iou;
    ++present;
  }
  if (present) out.mean = sum / static_cast<double>(present);
  return out;
}

std::size_t CalibrationHistogram::bin_of(float confidence) {
  // Right-closed: bin b holds (b/10, (b+1)/10].
  const double c = confidence;
  for (std::size_t b = 0; b + 1 < kBins; ++b) {
    if (c <= static_cast<double>(b + 1) / static_cast<double>(kBins)) return b;
  }
  return kBins - 1;
}

void CalibrationHistogram::add(float confidence, bool correct) {
  auto& bin = bins_[bin_of(confidence)];
  ++bin.count;
  bin.confidence_sum += confidence;
  if (correct) ++bin.correct;
}

void CalibrationHistogram::add_map(const Tensor& probs, std::span<const std::uint8_t> truth) {
  if (probs.rank() != 4 || probs.dim(0) != 1) throw ShapeError("add_map expects 1×C×H×W probabilities");
  const std::size_t ch = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  if (truth.size() != plane) throw ShapeError("add_map: truth size mismatch");
  auto p = probs.data();
  for (std::size_t i = 0; i < plane; ++i) {
    if (truth[i] == kIgnoreLabel) continue;
    std::size_t best = 0;
    float conf = p[i];
    for (std::size_t c = 1; c < ch; ++c) {
      if (p[c * plane + i] > conf) {
        conf = p[c * plane + i];
        best = c;
      }
    }
    add(conf, best == truth[i]);
  }
}

void CalibrationHistogram::merge(const CalibrationHistogram& other) {
  for (std::size_t b = 0; b < kBins; ++b) {
    bins_[b].count += other.bins_[b].count;
    bins_[b].confidence_sum += other.bins_[b].confidence_sum;
    bins_[b].correct += other.bins_[b].correct;
  }
}

std::uint64_t CalibrationHistogram::total() const {
  std::uint64_t n = 0;
  for (const auto& b : bins_) n += b.count;
  return n;
}

std::optional<double> ece(const CalibrationHistogram& hist) {
  const std::uint64_t n = hist.total();
  if (n == 0) return std::nullopt;
  double e = 0.0;
  for (const auto& b : hist.bins()) {
    if (b.count == 0) continue;
    const double cnt = static_cast<double>(b.count);
    const double acc = static_cast<double>(b.correct) / cnt;
    const double conf = b.confidence_sum / cnt;
    e += cnt / static_cast<double>(n) * std::fabs(acc - conf);
  }
  return e;
}

}  // namespace sada
