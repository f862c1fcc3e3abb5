// SPDX-License-Identifier: Apache-2.0
//
// Batch normalization with running statistics, and self-adaptive
// normalization: at inference each view is normalized with a convex blend
// of the source running statistics and its own channel statistics,
//
//   mean = (1 − α)·running.mean + α·sample.mean
//   var  = (1 − α)·running.var  + α·sample.var
//
// α = 0 reproduces train-BN inference, α = 1 reproduces instance norm.

#pragma once

#include <cstdint>
#include <vector>

#include "sada/tensor.hpp"

namespace sada {

struct NormStats {
  std::vector<float> mean;
  std::vector<float> var;
  std::uint64_t count = 0;

  std::size_t channels() const { return mean.size(); }
};

enum class NormMode {
  TrainBN,  // running statistics only (α = 0)
  PredBN,   // per-view statistics only (α = 1)
  SaN,      // blend with the stored α
};

struct SanConfig {
  float alpha = 0.0f;
  NormMode mode = NormMode::TrainBN;

  static SanConfig train_bn() { return {0.0f, NormMode::TrainBN}; }
  static SanConfig pred_bn() { return {1.0f, NormMode::PredBN}; }
  static SanConfig san(float alpha) { return {alpha, NormMode::SaN}; }

  // α actually applied; throws ContractError if α is outside [0, 1].
  float effective_alpha() const;
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  NormStats running;
  float momentum = 0.1f;
  float eps = 1e-5f;

  explicit BatchNormLayer(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
};

// Biased per-channel statistics of a single datum (batch extent 1).
NormStats compute_sample_stats(const Tensor& z);

// Convex blend of two statistics sets.
NormStats interpolate_stats(const NormStats& source, const NormStats& sample, float alpha);

// Normalizes with current-batch statistics over N·H·W and updates the
// running statistics in place. Gradients reach x, gamma and beta.
Tensor bn_train_forward(BatchNormLayer& layer, const Tensor& x);

// Inference with the running statistics.
Tensor bn_infer_forward(const BatchNormLayer& layer, const Tensor& x);

// Inference under cfg; every batch element is its own view with its own
// statistics. Statistics are constants for backward; gamma and beta (and x
// through the fixed affine map) receive gradients.
Tensor san_forward(const BatchNormLayer& layer, const SanConfig& cfg, const Tensor& x);

}  // namespace sada
