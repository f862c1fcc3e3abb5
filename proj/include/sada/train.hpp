// SPDX-License-Identifier: Apache-2.0
//
// Source-domain training: SGD with momentum and weight decay, polynomial
// learning-rate decay, heavy photometric and geometric augmentation.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sada/model.hpp"
#include "sada/synth.hpp"

namespace sada {

struct TrainRecipe {
  int epochs = 50;
  int batch_size = 8;
  float base_lr = 0.05f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  float poly_power = 0.9f;
  std::uint64_t seed = 0;

  bool augment = true;
  float crop_min_area = 0.08f;  // random resized crop, area fraction
  float crop_max_area = 1.0f;
  int crop_size = 24;           // crops are resampled to crop_size², below the canvas size
  float flip_prob = 0.5f;
  float jitter_prob = 0.5f;     // brightness/contrast/saturation/hue
  float jitter_lo = 0.7f;
  float jitter_hi = 1.3f;
  float hue_lo = 0.9f;
  float hue_hi = 1.1f;
  float blur_prob = 0.5f;
  float blur_sigma_lo = 0.1f;
  float blur_sigma_hi = 2.0f;
  float gray_prob = 0.1f;

  std::string to_json() const;
};

// base · (1 − progress)^power
float poly_lr(float base, double progress, float power);

struct TrainStep {
  int epoch = 0;
  int step = 0;
  float lr = 0.0f;
  float loss = 0.0f;
};

struct TrainResult {
  std::vector<TrainStep> log;
  bool diverged = false;
};

// One augmented copy of (image, mask), driven by a keyed stream.
void augment_sample(const TrainRecipe& recipe, std::uint64_t key, Tensor& image, ByteTensor& mask);

// Separable Gaussian blur with edge clamp, 3×H×W input.
Tensor gaussian_blur(const Tensor& image, double sigma);

TrainResult train_source(TinySegNet& net, const std::vector<MemorySample>& data, const TrainRecipe& recipe,
                         const std::function<void(const TrainStep&)>& on_step = {});

}  // namespace sada
