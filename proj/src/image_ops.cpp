// SPDX-License-Identifier: Apache-2.0
//
// NCHW image operations: convolution (im2col + GEMM), channel softmax,
// bilinear resampling and the segmentation losses.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "sada/tensor.hpp"

namespace sada {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kh, kw;
  std::size_t out_h, out_w;
  int stride, pad;
};

// col is (channels·kh·kw) × (out_h·out_w).
void im2col(const float* src, const ConvGeometry& g, float* col) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        float* row = col + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          float* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* line = src + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0f : line[ix];
          }
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeometry& g, float* dst) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const float* row = col + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          float* line = dst + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            if (ix >= 0 && ix < static_cast<long>(g.width)) line[ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

void require_nchw(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + " expects an NCHW tensor, got " + to_string(t.shape()));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  require_nchw(input, "conv2d");
  if (weight.rank() != 4) throw ShapeError("conv2d weight must be OIHW, got " + to_string(weight.shape()));
  if (stride < 1 || pad < 0) throw ShapeError("conv2d needs stride >= 1 and pad >= 0");
  const std::size_t batch = input.dim(0);
  const std::size_t out_ch = weight.dim(0);
  ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), weight.dim(2), weight.dim(3), 0, 0, stride, pad};
  if (weight.dim(1) != g.channels) {
    throw ShapeError("conv2d input has " + std::to_string(g.channels) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.size() != out_ch) throw ShapeError("conv2d bias length must equal output channels");
  const long padded_h = static_cast<long>(g.height) + 2L * pad;
  const long padded_w = static_cast<long>(g.width) + 2L * pad;
  if (static_cast<long>(g.kh) > padded_h || static_cast<long>(g.kw) > padded_w) {
    throw ShapeError("conv2d kernel " + to_string(weight.shape()) + " larger than padded input " +
                     to_string(input.shape()));
  }
  g.out_h = static_cast<std::size_t>((padded_h - static_cast<long>(g.kh)) / stride + 1);
  g.out_w = static_cast<std::size_t>((padded_w - static_cast<long>(g.kw)) / stride + 1);

  const std::size_t k = g.channels * g.kh * g.kw;
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t in_stride = g.channels * g.height * g.width;
  Tensor out(Shape{batch, out_ch, g.out_h, g.out_w});
  std::vector<float> col(k * plane);
  ConstMatMap w(weight.data().data(), static_cast<long>(out_ch), static_cast<long>(k));
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(input.data().data() + n * in_stride, g, col.data());
    MatMap y(out.data().data() + n * out_ch * plane, static_cast<long>(out_ch), static_cast<long>(plane));
    y.noalias() = w * ConstMatMap(col.data(), static_cast<long>(k), static_cast<long>(plane));
    for (std::size_t o = 0; o < out_ch; ++o) y.row(static_cast<long>(o)).array() += bias[o];
  }

  detail::attach(out, {&input, &weight, &bias},
                 [in = input.impl(), wt = weight.impl(), bs = bias.impl(), g, batch, out_ch, k, plane,
                  in_stride](detail::TensorImpl& o) {
                   std::vector<float> col(k * plane);
                   const long lo = static_cast<long>(out_ch);
                   const long lk = static_cast<long>(k);
                   const long lp = static_cast<long>(plane);
                   for (std::size_t n = 0; n < batch; ++n) {
                     ConstMatMap dy(o.grad.data() + n * out_ch * plane, lo, lp);
                     if (bs->requires_grad) {
                       auto db = detail::grad_buffer(*bs);
                       // plain loop: Eigen reductions reorder with pointer alignment
                       const float* row = o.grad.data() + n * out_ch * plane;
                       for (std::size_t c = 0; c < out_ch; ++c, row += plane) {
                         float acc = 0.0f;
                         for (std::size_t i = 0; i < plane; ++i) acc += row[i];
                         db[c] += acc;
                       }
                     }
                     if (wt->requires_grad) {
                       im2col(in->data.data() + n * in_stride, g, col.data());
                       MatMap dw(detail::grad_buffer(*wt).data(), lo, lk);
                       dw.noalias() += dy * ConstMatMap(col.data(), lk, lp).transpose();
                     }
                     if (in->requires_grad) {
                       MatMap dcol(col.data(), lk, lp);
                       dcol.noalias() = ConstMatMap(wt->data.data(), lo, lk).transpose() * dy;
                       col2im(col.data(), g, detail::grad_buffer(*in).data() + n * in_stride);
                     }
                   }
                 });
  return out;
}

Tensor softmax_channel(const Tensor& logits) {
  require_nchw(logits, "softmax_channel");
  const std::size_t batch = logits.dim(0), ch = logits.dim(1);
  const std::size_t plane = logits.dim(2) * logits.dim(3);
  Tensor out(logits.shape());
  auto x = logits.data();
  auto p = out.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const std::size_t base = n * ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      float mx = x[base + i];
      for (std::size_t c = 1; c < ch; ++c) mx = std::max(mx, x[base + c * plane + i]);
      float sum = 0.0f;
      for (std::size_t c = 0; c < ch; ++c) {
        const float e = std::exp(x[base + c * plane + i] - mx);
        p[base + c * plane + i] = e;
        sum += e;
      }
      const float inv = 1.0f / sum;
      for (std::size_t c = 0; c < ch; ++c) p[base + c * plane + i] *= inv;
    }
  }
  detail::attach(out, {&logits}, [in = logits.impl(), batch, ch, plane](detail::TensorImpl& o) {
    if (!in->requires_grad) return;
    auto dx = detail::grad_buffer(*in);
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = n * ch * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        float dot = 0.0f;
        for (std::size_t c = 0; c < ch; ++c) dot += o.grad[base + c * plane + i] * o.data[base + c * plane + i];
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t j = base + c * plane + i;
          dx[j] += o.data[j] * (o.grad[j] - dot);
        }
      }
    }
  });
  return out;
}

Tensor argmax_channel(const Tensor& x) {
  require_nchw(x, "argmax_channel");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = h * w;
  Tensor out(Shape{batch, h, w});
  auto px = x.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const std::size_t base = n * ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = 0;
      float best_v = px[base + i];
      for (std::size_t c = 1; c < ch; ++c) {
        const float v = px[base + c * plane + i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[n * plane + i] = static_cast<float>(best);
    }
  }
  return out;
}

namespace {

struct AxisSampler {
  std::vector<std::size_t> lo, hi;
  std::vector<float> frac;
};

// Half-pixel centers: src = (dst + 0.5)·in/out − 0.5, clamped to [0, in−1].
AxisSampler make_sampler(std::size_t in, std::size_t out) {
  AxisSampler s;
  s.lo.resize(out);
  s.hi.resize(out);
  s.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    s.lo[d] = i0;
    s.hi[d] = std::min(i0 + 1, in - 1);
    s.frac[d] = static_cast<float>(src - static_cast<double>(i0));
  }
  return s;
}

}  // namespace

Tensor bilinear_resize(const Tensor& t, std::size_t out_h, std::size_t out_w) {
  require_nchw(t, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize to a zero-sized extent");
  const std::size_t planes = t.dim(0) * t.dim(1);
  const std::size_t in_h = t.dim(2), in_w = t.dim(3);
  Tensor out(Shape{t.dim(0), t.dim(1), out_h, out_w});
  if (in_h == out_h && in_w == out_w) {
    std::copy(t.data().begin(), t.data().end(), out.data().begin());
    detail::attach(out, {&t}, [in = t.impl()](detail::TensorImpl& o) { detail::accumulate(*in, o.grad); });
    return out;
  }
  auto sy = make_sampler(in_h, out_h);
  auto sx = make_sampler(in_w, out_w);
  auto src = t.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const float* s = src.data() + p * in_h * in_w;
    float* d = dst.data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const float* r0 = s + sy.lo[y] * in_w;
      const float* r1 = s + sy.hi[y] * in_w;
      const float wy = sy.frac[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const float wx = sx.frac[x];
        // Lerp form keeps constant fields exact.
        const float top = r0[sx.lo[x]] + wx * (r0[sx.hi[x]] - r0[sx.lo[x]]);
        const float bot = r1[sx.lo[x]] + wx * (r1[sx.hi[x]] - r1[sx.lo[x]]);
        d[y * out_w + x] = top + wy * (bot - top);
      }
    }
  }
  detail::attach(out, {&t}, [in = t.impl(), sy = std::move(sy), sx = std::move(sx), planes, in_h, in_w, out_h,
                             out_w](detail::TensorImpl& o) {
    if (!in->requires_grad) return;
    auto g = detail::grad_buffer(*in);
    for (std::size_t p = 0; p < planes; ++p) {
      float* s = g.data() + p * in_h * in_w;
      const float* d = o.grad.data() + p * out_h * out_w;
      for (std::size_t y = 0; y < out_h; ++y) {
        const float wy = sy.frac[y];
        for (std::size_t x = 0; x < out_w; ++x) {
          const float wx = sx.frac[x];
          const float v = d[y * out_w + x];
          s[sy.lo[y] * in_w + sx.lo[x]] += v * (1.0f - wx) * (1.0f - wy);
          s[sy.lo[y] * in_w + sx.hi[x]] += v * wx * (1.0f - wy);
          s[sy.hi[y] * in_w + sx.lo[x]] += v * (1.0f - wx) * wy;
          s[sy.hi[y] * in_w + sx.hi[x]] += v * wx * wy;
        }
      }
    }
  });
  return out;
}

Tensor flip_horizontal(const Tensor& t) {
  require_nchw(t, "flip_horizontal");
  const std::size_t rows = t.dim(0) * t.dim(1) * t.dim(2);
  const std::size_t w = t.dim(3);
  Tensor out(t.shape());
  auto src = t.data();
  auto dst = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t x = 0; x < w; ++x) dst[r * w + x] = src[r * w + (w - 1 - x)];
  }
  detail::attach(out, {&t}, [in = t.impl(), rows, w](detail::TensorImpl& o) {
    if (!in->requires_grad) return;
    auto g = detail::grad_buffer(*in);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t x = 0; x < w; ++x) g[r * w + x] += o.grad[r * w + (w - 1 - x)];
    }
  });
  return out;
}

namespace {

// Per-pixel log-softmax over channels into logp (same layout as logits).
void log_softmax(std::span<const float> x, std::size_t batch, std::size_t ch, std::size_t plane,
                 std::vector<float>& logp) {
  logp.resize(x.size());
  for (std::size_t n = 0; n < batch; ++n) {
    const std::size_t base = n * ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      float mx = x[base + i];
      for (std::size_t c = 1; c < ch; ++c) mx = std::max(mx, x[base + c * plane + i]);
      float sum = 0.0f;
      for (std::size_t c = 0; c < ch; ++c) sum += std::exp(x[base + c * plane + i] - mx);
      const float lse = mx + std::log(sum);
      for (std::size_t c = 0; c < ch; ++c) logp[base + c * plane + i] = x[base + c * plane + i] - lse;
    }
  }
}

}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::uint8_t> labels) {
  require_nchw(logits, "softmax_cross_entropy");
  const std::size_t batch = logits.dim(0), ch = logits.dim(1);
  const std::size_t plane = logits.dim(2) * logits.dim(3);
  if (labels.size() != batch * plane) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(batch * plane) + " pixels");
  }
  std::vector<float> logp;
  log_softmax(logits.data(), batch, ch, plane, logp);
  std::size_t valid = 0;
  float total = 0.0f;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::uint8_t label = labels[n * plane + i];
      if (label == kIgnoreLabel) continue;
      if (label >= ch) throw ContractError("label " + std::to_string(label) + " out of range");
      total -= logp[n * ch * plane + label * plane + i];
      ++valid;
    }
  }
  const float inv = valid ? 1.0f / static_cast<float>(valid) : 0.0f;
  Tensor out = Tensor::scalar(total * inv);
  std::vector<std::uint8_t> saved(labels.begin(), labels.end());
  detail::attach(out, {&logits},
                 [in = logits.impl(), logp = std::move(logp), saved = std::move(saved), batch, ch, plane,
                  inv](detail::TensorImpl& o) {
                   if (!in->requires_grad || inv == 0.0f) return;
                   auto dx = detail::grad_buffer(*in);
                   const float up = o.grad[0] * inv;
                   for (std::size_t n = 0; n < batch; ++n) {
                     for (std::size_t i = 0; i < plane; ++i) {
                       const std::uint8_t label = saved[n * plane + i];
                       if (label == kIgnoreLabel) continue;
                       for (std::size_t c = 0; c < ch; ++c) {
                         const std::size_t j = n * ch * plane + c * plane + i;
                         dx[j] += up * (std::exp(logp[j]) - (c == label ? 1.0f : 0.0f));
                       }
                     }
                   }
                 });
  return out;
}

Tensor softmax_entropy(const Tensor& logits) {
  require_nchw(logits, "softmax_entropy");
  const std::size_t batch = logits.dim(0), ch = logits.dim(1);
  const std::size_t plane = logits.dim(2) * logits.dim(3);
  std::vector<float> logp;
  log_softmax(logits.data(), batch, ch, plane, logp);
  std::vector<float> pixel_h(batch * plane, 0.0f);
  float total = 0.0f;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      float h = 0.0f;
      for (std::size_t c = 0; c < ch; ++c) {
        const float lp = logp[n * ch * plane + c * plane + i];
        h -= std::exp(lp) * lp;
      }
      pixel_h[n * plane + i] = h;
      total += h;
    }
  }
  const float inv = 1.0f / static_cast<float>(batch * plane);
  Tensor out = Tensor::scalar(total * inv);
  detail::attach(out, {&logits},
                 [in = logits.impl(), logp = std::move(logp), pixel_h = std::move(pixel_h), batch, ch, plane,
                  inv](detail::TensorImpl& o) {
                   if (!in->requires_grad) return;
                   auto dx = detail::grad_buffer(*in);
                   const float up = o.grad[0] * inv;
                   // dH/dz_k = −p_k (log p_k + H)
                   for (std::size_t n = 0; n < batch; ++n) {
                     for (std::size_t i = 0; i < plane; ++i) {
                       const float h = pixel_h[n * plane + i];
                       for (std::size_t c = 0; c < ch; ++c) {
                         const std::size_t j = n * ch * plane + c * plane + i;
                         dx[j] -= up * std::exp(logp[j]) * (logp[j] + h);
                       }
                     }
                   }
                 });
  return out;
}

}  // namespace sada
