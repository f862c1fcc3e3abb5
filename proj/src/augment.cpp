// SPDX-License-Identifier: Apache-2.0

#include "sada/augment.hpp"

#include <algorithm>
#include <cmath>

namespace sada {

namespace {

Tensor as_batch(const Tensor& t) {
  if (t.rank() == 4) {
    if (t.dim(0) != 1) throw ShapeError("expected a single map, got " + to_string(t.shape()));
    return t;
  }
  if (t.rank() == 3) return Tensor(Shape{1, t.dim(0), t.dim(1), t.dim(2)}, std::vector<float>(t.data().begin(), t.data().end()));
  throw ShapeError("expected C×H×W or 1×C×H×W, got " + to_string(t.shape()));
}

}  // namespace

std::size_t scaled_extent(std::size_t extent, float scale) {
  if (!(scale > 0.0f)) throw ContractError("view scale must be positive");
  const double target = static_cast<double>(extent) * static_cast<double>(scale);
  const auto blocks = static_cast<std::size_t>(std::llround(target / 4.0));
  return blocks * 4;
}

Tensor grayscale(const Tensor& image) {
  Tensor x = as_batch(image);
  if (x.dim(1) != 3) throw ShapeError("grayscale expects 3 channels");
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < plane; ++i) {
    const float y = 0.299f * src[i] + 0.587f * src[plane + i] + 0.114f * src[2 * plane + i];
    dst[i] = dst[plane + i] = dst[2 * plane + i] = y;
  }
  return out;
}

Tensor apply_view(const ViewSpec& spec, const Tensor& map) {
  Tensor x = as_batch(map);
  const std::size_t h = scaled_extent(x.dim(2), spec.scale);
  const std::size_t w = scaled_extent(x.dim(3), spec.scale);
  if (h < 4 || w < 4) throw ShapeError("view scale too small for input " + to_string(x.shape()));
  Tensor out = bilinear_resize(x, h, w);
  if (spec.flipped) out = flip_horizontal(out);
  if (spec.grayscaled) out = grayscale(out);
  return out;
}

ViewSet build_views(const Tensor& image, const ViewOptions& opts) {
  Tensor x = as_batch(image);
  if (x.dim(1) != 3) throw ShapeError("build_views expects a 3-channel image");
  std::vector<float> scales = opts.scales;
  scales.push_back(1.0f);
  std::sort(scales.begin(), scales.end());
  scales.erase(std::unique(scales.begin(), scales.end()), scales.end());

  ViewSet set;
  for (float s : scales) {
    if (!(s > 0.0f)) throw ContractError("view scale must be positive");
    const std::size_t h = scaled_extent(x.dim(2), s);
    const std::size_t w = scaled_extent(x.dim(3), s);
    if (h < 4 || w < 4) {
      set.warnings.push_back("scale " + std::to_string(s) + " skipped: extent below 4 pixels");
      continue;
    }
    const Tensor resized = bilinear_resize(x, h, w);
    for (bool flip : {false, true}) {
      if (flip && !opts.use_flip) continue;
      const Tensor oriented = flip ? flip_horizontal(resized) : resized;
      for (bool gray : {false, true}) {
        if (gray && !opts.use_gray) continue;
        set.views.push_back({ViewSpec{s, flip, gray}, gray ? grayscale(oriented) : oriented});
      }
    }
  }
  return set;
}

Tensor invert_and_align(const ViewSpec& spec, const Tensor& probs, std::size_t orig_h, std::size_t orig_w) {
  Tensor p = as_batch(probs);
  if (spec.flipped) p = flip_horizontal(p);
  return bilinear_resize(p, orig_h, orig_w);
}

FusedProbMap fuse(const std::vector<Tensor>& aligned) {
  if (aligned.empty()) throw ContractError("fuse needs at least one map");
  const Shape shape = aligned.front().shape();
  std::vector<double> acc(aligned.front().size(), 0.0);
  for (const auto& m : aligned) {
    if (m.shape() != shape) throw ShapeError("fuse: maps differ in shape");
    auto d = m.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
  }
  Tensor out = as_batch(Tensor(shape));
  const auto n = static_cast<double>(aligned.size());
  auto o = out.data();
  for (std::size_t i = 0; i < acc.size(); ++i) o[i] = static_cast<float>(acc[i] / n);
  return {out, aligned.size()};
}

}  // namespace sada
