// SPDX-License-Identifier: Apache-2.0
//
// Test-time view construction (multi-scale × flip × grayscale), inverse
// alignment of per-view softmax maps onto the original grid, and fusion by
// averaging.

#pragma once

#include <string>
#include <vector>

#include "sada/tensor.hpp"

namespace sada {

struct ViewSpec {
  float scale = 1.0f;
  bool flipped = false;
  bool grayscaled = false;

  bool is_identity() const { return scale == 1.0f && !flipped && !grayscaled; }
  bool operator==(const ViewSpec&) const = default;
};

struct ViewOptions {
  std::vector<float> scales{0.25f, 0.5f, 0.75f, 1.0f};
  bool use_flip = true;
  bool use_gray = true;
};

struct View {
  ViewSpec spec;
  Tensor image;  // 1×3×h×w
};

struct ViewSet {
  std::vector<View> views;
  std::vector<std::string> warnings;
};

// Extent after scaling, rounded to the nearest multiple of 4 (0 if the
// rounded extent drops below 4).
std::size_t scaled_extent(std::size_t extent, float scale);

// Views in deterministic order: scale ascending, then flip, then gray. The
// original-resolution color view is always present. image is 3×H×W or
// 1×3×H×W with values in [0, 1].
ViewSet build_views(const Tensor& image, const ViewOptions& opts);

// Applies spec's spatial and photometric transform to a 1×K×H×W map.
Tensor apply_view(const ViewSpec& spec, const Tensor& map);

// Luminance (0.299, 0.587, 0.114) replicated to three channels.
Tensor grayscale(const Tensor& image);

// Undoes spec's spatial transform on a view prediction (C×h×w or 1×C×h×w):
// mirror back if flipped, bilinear resize to orig_h × orig_w. Returns
// 1×C×H×W.
Tensor invert_and_align(const ViewSpec& spec, const Tensor& probs, std::size_t orig_h, std::size_t orig_w);

struct FusedProbMap {
  Tensor probs;  // 1×C×H×W
  std::size_t view_count = 0;
};

// Elementwise mean over equally shaped maps.
FusedProbMap fuse(const std::vector<Tensor>& aligned);

}  // namespace sada
