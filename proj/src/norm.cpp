// SPDX-License-Identifier: Apache-2.0

#include "sada/norm.hpp"

#include <cmath>
#include <string>

namespace sada {

namespace {

void require_nchw(const Tensor& x, const BatchNormLayer& layer, const char* what) {
  if (x.rank() != 4) throw ShapeError(std::string(what) + " expects NCHW input, got " + to_string(x.shape()));
  if (x.dim(1) != layer.channels()) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(x.dim(1)) + " channels, layer has " +
                     std::to_string(layer.channels()));
  }
}

// Biased mean/variance of `count` contiguous values, two passes in double.
void plane_stats(const float* p, std::size_t count, double& mean, double& var) {
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) s += p[i];
  mean = s / static_cast<double>(count);
  double ss = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = p[i] - mean;
    ss += d * d;
  }
  var = ss / static_cast<double>(count);
}

// y = (x − mean[n][c]) / sqrt(var[n][c] + eps) · γ[c] + β[c], statistics held
// constant in backward. mean/var are indexed n·C + c.
Tensor normalize_fixed(const BatchNormLayer& layer, const Tensor& x, std::vector<float> mean,
                       const std::vector<float>& var) {
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<float> inv(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) inv[i] = 1.0f / std::sqrt(var[i] + layer.eps);
  Tensor out(x.shape());
  auto px = x.data();
  auto po = out.data();
  auto g = layer.gamma.data();
  auto b = layer.beta.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const float m = mean[n * ch + c];
      const float s = inv[n * ch + c];
      const std::size_t base = (n * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) po[base + i] = (px[base + i] - m) * s * g[c] + b[c];
    }
  }
  detail::attach(out, {&x, &layer.gamma, &layer.beta},
                 [in = x.impl(), gm = layer.gamma.impl(), bt = layer.beta.impl(), mean = std::move(mean),
                  inv = std::move(inv), batch, ch, plane](detail::TensorImpl& o) {
                   const auto& dy = o.grad;
                   for (std::size_t n = 0; n < batch; ++n) {
                     for (std::size_t c = 0; c < ch; ++c) {
                       const float m = mean[n * ch + c];
                       const float s = inv[n * ch + c];
                       const std::size_t base = (n * ch + c) * plane;
                       if (gm->requires_grad || bt->requires_grad) {
                         float dg = 0.0f, db = 0.0f;
                         for (std::size_t i = 0; i < plane; ++i) {
                           dg += dy[base + i] * (in->data[base + i] - m) * s;
                           db += dy[base + i];
                         }
                         if (gm->requires_grad) detail::grad_buffer(*gm)[c] += dg;
                         if (bt->requires_grad) detail::grad_buffer(*bt)[c] += db;
                       }
                       if (in->requires_grad) {
                         auto dx = detail::grad_buffer(*in);
                         const float k = s * gm->data[c];
                         for (std::size_t i = 0; i < plane; ++i) dx[base + i] += dy[base + i] * k;
                       }
                     }
                   }
                 });
  return out;
}

}  // namespace

float SanConfig::effective_alpha() const {
  switch (mode) {
    case NormMode::TrainBN:
      return 0.0f;
    case NormMode::PredBN:
      return 1.0f;
    case NormMode::SaN:
      break;
  }
  if (!(alpha >= 0.0f && alpha <= 1.0f)) {
    throw ContractError("SaN alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  return alpha;
}

BatchNormLayer::BatchNormLayer(std::size_t channels)
    : gamma(Shape{channels}, 1.0f), beta(Shape{channels}, 0.0f) {
  running.mean.assign(channels, 0.0f);
  running.var.assign(channels, 1.0f);
}

NormStats compute_sample_stats(const Tensor& z) {
  if (z.rank() != 4) throw ShapeError("compute_sample_stats expects 1×C×H×W, got " + to_string(z.shape()));
  if (z.dim(0) != 1) {
    throw ContractError("compute_sample_stats needs batch extent 1, got " + std::to_string(z.dim(0)));
  }
  const std::size_t ch = z.dim(1), plane = z.dim(2) * z.dim(3);
  NormStats s;
  s.mean.resize(ch);
  s.var.resize(ch);
  s.count = plane;
  for (std::size_t c = 0; c < ch; ++c) {
    double m = 0.0, v = 0.0;
    plane_stats(z.data().data() + c * plane, plane, m, v);
    s.mean[c] = static_cast<float>(m);
    s.var[c] = static_cast<float>(v);
  }
  return s;
}

NormStats interpolate_stats(const NormStats& source, const NormStats& sample, float alpha) {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) {
    throw ContractError("interpolation weight must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (source.channels() != sample.channels()) throw ShapeError("interpolate_stats: channel count mismatch");
  NormStats out;
  out.mean.resize(source.channels());
  out.var.resize(source.channels());
  out.count = sample.count;
  const float keep = 1.0f - alpha;
  for (std::size_t c = 0; c < source.channels(); ++c) {
    out.mean[c] = keep * source.mean[c] + alpha * sample.mean[c];
    out.var[c] = keep * source.var[c] + alpha * sample.var[c];
  }
  return out;
}

Tensor bn_train_forward(BatchNormLayer& layer, const Tensor& x) {
  require_nchw(x, layer, "bn_train_forward");
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t count = batch * plane;
  if (count < 2) throw ContractError("bn_train_forward needs N·H·W >= 2 per channel");

  std::vector<float> mean(ch), inv(ch);
  auto px = x.data();
  for (std::size_t c = 0; c < ch; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const float* p = px.data() + (n * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
    }
    const double m = s / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const float* p = px.data() + (n * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - m) * (p[i] - m);
    }
    const double v = ss / static_cast<double>(count);
    mean[c] = static_cast<float>(m);
    inv[c] = 1.0f / std::sqrt(static_cast<float>(v) + layer.eps);
    layer.running.mean[c] = (1.0f - layer.momentum) * layer.running.mean[c] + layer.momentum * mean[c];
    layer.running.var[c] = (1.0f - layer.momentum) * layer.running.var[c] + layer.momentum * static_cast<float>(v);
  }
  layer.running.count += count;

  Tensor out(x.shape());
  std::vector<float> xhat(x.size());
  auto po = out.data();
  auto g = layer.gamma.data();
  auto b = layer.beta.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (n * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[base + i] = (px[base + i] - mean[c]) * inv[c];
        po[base + i] = xhat[base + i] * g[c] + b[c];
      }
    }
  }
  detail::attach(out, {&x, &layer.gamma, &layer.beta},
                 [in = x.impl(), gm = layer.gamma.impl(), bt = layer.beta.impl(), xhat = std::move(xhat),
                  inv = std::move(inv), batch, ch, plane, count](detail::TensorImpl& o) {
                   const auto& dy = o.grad;
                   for (std::size_t c = 0; c < ch; ++c) {
                     double sum_dy = 0.0, sum_dy_xhat = 0.0;
                     for (std::size_t n = 0; n < batch; ++n) {
                       const std::size_t base = (n * ch + c) * plane;
                       for (std::size_t i = 0; i < plane; ++i) {
                         sum_dy += dy[base + i];
                         sum_dy_xhat += dy[base + i] * xhat[base + i];
                       }
                     }
                     if (gm->requires_grad) detail::grad_buffer(*gm)[c] += static_cast<float>(sum_dy_xhat);
                     if (bt->requires_grad) detail::grad_buffer(*bt)[c] += static_cast<float>(sum_dy);
                     if (!in->requires_grad) continue;
                     auto dx = detail::grad_buffer(*in);
                     const float k = gm->data[c] * inv[c] / static_cast<float>(count);
                     const auto mdy = static_cast<float>(sum_dy);
                     const auto mdyx = static_cast<float>(sum_dy_xhat);
                     for (std::size_t n = 0; n < batch; ++n) {
                       const std::size_t base = (n * ch + c) * plane;
                       for (std::size_t i = 0; i < plane; ++i) {
                         dx[base + i] +=
                             k * (static_cast<float>(count) * dy[base + i] - mdy - xhat[base + i] * mdyx);
                       }
                     }
                   }
                 });
  return out;
}

Tensor bn_infer_forward(const BatchNormLayer& layer, const Tensor& x) {
  require_nchw(x, layer, "bn_infer_forward");
  const std::size_t batch = x.dim(0), ch = x.dim(1);
  std::vector<float> mean(batch * ch), var(batch * ch);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      mean[n * ch + c] = layer.running.mean[c];
      var[n * ch + c] = layer.running.var[c];
    }
  }
  return normalize_fixed(layer, x, std::move(mean), var);
}

Tensor san_forward(const BatchNormLayer& layer, const SanConfig& cfg, const Tensor& x) {
  require_nchw(x, layer, "san_forward");
  const float alpha = cfg.effective_alpha();
  if (cfg.mode == NormMode::TrainBN) return bn_infer_forward(layer, x);
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<float> mean(batch * ch), var(batch * ch);
  const float keep = 1.0f - alpha;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      double m = 0.0, v = 0.0;
      plane_stats(x.data().data() + (n * ch + c) * plane, plane, m, v);
      // Same expression as interpolate_stats.
      mean[n * ch + c] = keep * layer.running.mean[c] + alpha * static_cast<float>(m);
      var[n * ch + c] = keep * layer.running.var[c] + alpha * static_cast<float>(v);
    }
  }
  return normalize_fixed(layer, x, std::move(mean), var);
}

}  // namespace sada
