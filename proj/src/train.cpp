// SPDX-License-Identifier: Apache-2.0

#include "sada/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "sada/augment.hpp"
#include "sada/rng.hpp"

namespace sada {

std::string TrainRecipe::to_json() const {
  nlohmann::ordered_json j{
      {"epochs", epochs},           {"batch_size", batch_size},     {"base_lr", base_lr},
      {"momentum", momentum},       {"weight_decay", weight_decay}, {"poly_power", poly_power},
      {"seed", seed},               {"augment", augment},           {"crop_min_area", crop_min_area},
      {"crop_max_area", crop_max_area}, {"crop_size", crop_size},     {"flip_prob", flip_prob},   {"jitter_prob", jitter_prob},
      {"jitter_lo", jitter_lo},     {"jitter_hi", jitter_hi},       {"hue_lo", hue_lo},
      {"hue_hi", hue_hi},           {"blur_prob", blur_prob},       {"blur_sigma_lo", blur_sigma_lo},
      {"blur_sigma_hi", blur_sigma_hi}, {"gray_prob", gray_prob},
  };
  return j.dump();
}

float poly_lr(float base, double progress, float power) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return static_cast<float>(base * std::pow(1.0 - p, static_cast<double>(power)));
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * static_cast<std::size_t>(radius) + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * k * k / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = static_cast<float>(v);
    total += v;
  }
  for (auto& v : kernel) v = static_cast<float>(v / total);
  auto at = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };
  Tensor tmp(image.shape()), out(image.shape());
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    const float* s = image.data().data() + c * h * w;
    float* t = tmp.data().data() + c * h * w;
    float* o = out.data().data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) acc += kernel[static_cast<std::size_t>(k + radius)] * s[y * w + at(static_cast<long>(x) + k, w)];
        t[y * w + x] = acc;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) acc += kernel[static_cast<std::size_t>(k + radius)] * t[at(static_cast<long>(y) + k, h) * w + x];
        o[y * w + x] = acc;
      }
    }
  }
  return out;
}

namespace {

void clamp01(Tensor& t) {
  for (auto& v : t.data()) v = std::clamp(v, 0.0f, 1.0f);
}

Tensor luminance(const Tensor& img) {
  Tensor g = grayscale(img);
  return g.reshape(img.shape()).detach();
}

// Random area/aspect crop resampled to out×out: bilinear for the image,
// nearest for the mask.
void random_resized_crop(const TrainRecipe& r, Rng& rng, Tensor& image, ByteTensor& mask) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  const auto out_n = static_cast<std::size_t>(r.crop_size);
  double cw = static_cast<double>(w), ch = static_cast<double>(h), x0 = 0.0, y0 = 0.0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area = rng.uniform(r.crop_min_area, r.crop_max_area) * static_cast<double>(h * w);
    const double ratio = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const double tw = std::sqrt(area * ratio), th = std::sqrt(area / ratio);
    if (tw <= static_cast<double>(w) && th <= static_cast<double>(h)) {
      cw = tw;
      ch = th;
      x0 = rng.uniform(0.0, static_cast<double>(w) - tw);
      y0 = rng.uniform(0.0, static_cast<double>(h) - th);
      break;
    }
  }
  Tensor out(Shape{image.dim(0), out_n, out_n});
  ByteTensor out_mask{Shape{out_n, out_n}, std::vector<std::uint8_t>(out_n * out_n)};
  const double sx = cw / static_cast<double>(out_n), sy = ch / static_cast<double>(out_n);
  for (std::size_t y = 0; y < out_n; ++y) {
    const double fy = y0 + (static_cast<double>(y) + 0.5) * sy;
    const double py = std::clamp(fy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto iy0 = static_cast<std::size_t>(py);
    const std::size_t iy1 = std::min(iy0 + 1, h - 1);
    const auto wy = static_cast<float>(py - static_cast<double>(iy0));
    const std::size_t ny = std::min(static_cast<std::size_t>(fy), h - 1);
    for (std::size_t x = 0; x < out_n; ++x) {
      const double fx = x0 + (static_cast<double>(x) + 0.5) * sx;
      const double px = std::clamp(fx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto ix0 = static_cast<std::size_t>(px);
      const std::size_t ix1 = std::min(ix0 + 1, w - 1);
      const auto wx = static_cast<float>(px - static_cast<double>(ix0));
      for (std::size_t c = 0; c < image.dim(0); ++c) {
        const float* s = image.data().data() + c * h * w;
        const float top = s[iy0 * w + ix0] + wx * (s[iy0 * w + ix1] - s[iy0 * w + ix0]);
        const float bot = s[iy1 * w + ix0] + wx * (s[iy1 * w + ix1] - s[iy1 * w + ix0]);
        out[(c * out_n + y) * out_n + x] = top + wy * (bot - top);
      }
      out_mask.data[y * out_n + x] = mask.data[ny * w + std::min(static_cast<std::size_t>(fx), w - 1)];
    }
  }
  image = out;
  mask = std::move(out_mask);
}

void flip_sample(Tensor& image, ByteTensor& mask) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      auto row = image.data().subspan((c * h + y) * w, w);
      std::reverse(row.begin(), row.end());
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    std::reverse(mask.data.begin() + static_cast<long>(y * w), mask.data.begin() + static_cast<long>((y + 1) * w));
  }
}

void color_jitter(const TrainRecipe& r, Rng& rng, Tensor& image) {
  const double bright = rng.uniform(r.jitter_lo, r.jitter_hi);
  const double contrast = rng.uniform(r.jitter_lo, r.jitter_hi);
  const double saturation = rng.uniform(r.jitter_lo, r.jitter_hi);
  const double hue = rng.uniform(r.hue_lo, r.hue_hi);
  for (auto& v : image.data()) v = static_cast<float>(v * bright);
  clamp01(image);
  const Tensor gray = luminance(image);
  float mean = 0.0f;
  for (std::size_t i = 0; i < gray.size() / 3; ++i) mean += gray[i];
  mean /= static_cast<float>(gray.size() / 3);
  for (auto& v : image.data()) v = static_cast<float>(mean + (v - mean) * contrast);
  clamp01(image);
  const Tensor gray2 = luminance(image);
  for (std::size_t i = 0; i < image.size(); ++i) {
    image[i] = static_cast<float>(gray2[i] + (image[i] - gray2[i]) * saturation);
  }
  clamp01(image);
  image = hue_rotate(image, (hue - 1.0) * 180.0);
  clamp01(image);
}

}  // namespace

void augment_sample(const TrainRecipe& r, std::uint64_t key, Tensor& image, ByteTensor& mask) {
  Rng rng(key);
  image = image.clone();
  random_resized_crop(r, rng, image, mask);
  if (rng.bernoulli(r.flip_prob)) flip_sample(image, mask);
  if (rng.bernoulli(r.jitter_prob)) color_jitter(r, rng, image);
  if (rng.bernoulli(r.blur_prob)) image = gaussian_blur(image, rng.uniform(r.blur_sigma_lo, r.blur_sigma_hi));
  if (rng.bernoulli(r.gray_prob)) image = luminance(image);
}

TrainResult train_source(TinySegNet& net, const std::vector<MemorySample>& data, const TrainRecipe& recipe,
                         const std::function<void(const TrainStep&)>& on_step) {
  if (data.empty()) throw ContractError("train_source needs at least one sample");
  if (recipe.epochs < 1 || recipe.batch_size < 1) throw ContractError("epochs and batch_size must be positive");
  TrainResult result;
  net.set_training(true);
  net.set_trainable(std::set<std::string>(TinySegNet::group_names().begin(), TinySegNet::group_names().end()));
  auto params = net.select_params(std::set<std::string>(TinySegNet::group_names().begin(), TinySegNet::group_names().end()));
  std::vector<std::vector<float>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.size(), 0.0f);

  const std::size_t n = data.size();
  const auto batch = static_cast<std::size_t>(recipe.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(recipe.epochs);
  if (recipe.augment && (recipe.crop_size < 4 || recipe.crop_size % 4 != 0)) {
    throw ContractError("crop_size must be a positive multiple of 4");
  }
  const std::size_t h = recipe.augment ? static_cast<std::size_t>(recipe.crop_size) : data.front().image.dim(1);
  const std::size_t w = recipe.augment ? static_cast<std::size_t>(recipe.crop_size) : data.front().image.dim(2);
  std::size_t step = 0;

  for (int epoch = 0; epoch < recipe.epochs && !result.diverged; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(mix_key({hash_string("shuffle"), recipe.seed, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<long>(i) - 1))]);

    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t first = s * batch;
      const std::size_t count = std::min(batch, n - first);
      Tensor x(Shape{count, 3, h, w});
      std::vector<std::uint8_t> labels(count * h * w);
      for (std::size_t b = 0; b < count; ++b) {
        const auto& sample = data[order[first + b]];
        Tensor img = sample.image;
        ByteTensor mask = sample.mask;
        if (recipe.augment) {
          augment_sample(recipe, mix_key({hash_string("augment"), recipe.seed, static_cast<std::uint64_t>(epoch), order[first + b]}), img, mask);
        }
        std::copy(img.data().begin(), img.data().end(), x.data().begin() + static_cast<long>(b * 3 * h * w));
        std::copy(mask.data.begin(), mask.data.end(), labels.begin() + static_cast<long>(b * h * w));
      }
      const float lr = poly_lr(recipe.base_lr, static_cast<double>(step) / static_cast<double>(total_steps), recipe.poly_power);
      Tensor loss = softmax_cross_entropy(net.forward(x), labels);
      const float value = loss.item();
      TrainStep entry{epoch, static_cast<int>(step), lr, value};
      result.log.push_back(entry);
      if (on_step) on_step(entry);
      if (!std::isfinite(value)) {
        result.diverged = true;
        break;
      }
      loss.backward();
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k].data();
        const auto g = params[k].grad_mut();
        auto& v = velocity[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
          const float d = g[i] + recipe.weight_decay * p[i];
          v[i] = recipe.momentum * v[i] + d;
          p[i] -= lr * v[i];
        }
        params[k].zero_grad();
      }
    }
  }
  net.set_training(false);
  net.set_trainable({});
  return result;
}

}  // namespace sada
