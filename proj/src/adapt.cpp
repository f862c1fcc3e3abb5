// SPDX-License-Identifier: Apache-2.0

#include "sada/adapt.hpp"

#include <chrono>
#include <cmath>
#include <map>

namespace sada {

namespace {

Tensor as_image_batch(const Tensor& image) {
  if (image.rank() == 4) return image;
  if (image.rank() == 3) return image.reshape(Shape{1, image.dim(0), image.dim(1), image.dim(2)}).detach();
  throw ShapeError("expected 3×H×W image, got " + to_string(image.shape()));
}

std::vector<std::uint8_t> argmax_mask(const Tensor& probs) {
  const Tensor idx = argmax_channel(probs);
  std::vector<std::uint8_t> mask(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) mask[i] = static_cast<std::uint8_t>(idx[i]);
  return mask;
}

// Element b of an N×C×H×W tensor as 1×C×H×W.
Tensor slice_batch(const Tensor& t, std::size_t b) {
  const std::size_t per = t.size() / t.dim(0);
  auto first = t.data().begin() + static_cast<long>(b * per);
  return Tensor(Shape{1, t.dim(1), t.dim(2), t.dim(3)}, std::vector<float>(first, first + static_cast<long>(per)));
}

Tensor stack(const std::vector<const Tensor*>& items) {
  const Tensor& head = *items.front();
  Tensor out(Shape{items.size(), head.dim(1), head.dim(2), head.dim(3)});
  const std::size_t per = head.size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::copy(items[i]->data().begin(), items[i]->data().end(), out.data().begin() + static_cast<long>(i * per));
  }
  return out;
}

// View indices grouped by spatial extent, in first-appearance order.
std::vector<std::vector<std::size_t>> group_by_extent(const ViewSet& views, std::optional<std::size_t> skip) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> slot;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < views.views.size(); ++i) {
    if (skip && *skip == i) continue;
    const auto& img = views.views[i].image;
    auto key = std::make_pair(img.dim(2), img.dim(3));
    auto [it, fresh] = slot.emplace(key, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

std::size_t identity_view(const ViewSet& views) {
  for (std::size_t i = 0; i < views.views.size(); ++i) {
    if (views.views[i].spec.is_identity()) return i;
  }
  throw ContractError("view set lacks the original view");
}

void sgd_step(std::vector<Tensor>& params, float eta) {
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    auto d = p.data();
    auto g = p.grad_mut();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= eta * g[i];
    p.zero_grad();
  }
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

// Softmax maps of every view except `skip`, aligned to the original grid;
// slot `skip` is left empty for the caller.
std::vector<Tensor> aligned_view_probs(TinySegNet& net, const ViewSet& views, std::size_t height,
                                       std::size_t width, const SanConfig& norm, std::optional<std::size_t> skip) {
  NoGradGuard no_grad;
  std::vector<Tensor> aligned(views.views.size());
  for (const auto& group : group_by_extent(views, skip)) {
    std::vector<const Tensor*> images;
    for (auto i : group) images.push_back(&views.views[i].image);
    const Tensor probs = softmax_channel(net.forward(stack(images), norm));
    for (std::size_t k = 0; k < group.size(); ++k) {
      aligned[group[k]] = invert_and_align(views.views[group[k]].spec, slice_batch(probs, k), height, width);
    }
  }
  return aligned;
}

}  // namespace

void AdaptConfig::validate() const {
  if (!(eta > 0.0f)) throw ContractError("eta must be positive");
  if (n_iters < 0) throw ContractError("n_iters must be non-negative");
  if (!(psi >= 0.0f && psi <= 1.0f)) throw ContractError("psi must lie in [0, 1]");
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw ContractError("alpha must lie in [0, 1]");
  for (float s : views.scales) {
    if (!(s > 0.0f)) throw ContractError("view scales must be positive");
  }
}

Prediction predict(TinySegNet& net, const Tensor& image, const SanConfig& norm) {
  NoGradGuard no_grad;
  Prediction p;
  p.probs = softmax_channel(net.forward(as_image_batch(image), norm));
  p.mask = argmax_mask(p.probs);
  return p;
}

FusedProbMap fused_views(TinySegNet& net, const ViewSet& views, std::size_t height, std::size_t width,
                         const SanConfig& norm) {
  return fuse(aligned_view_probs(net, views, height, width, norm, std::nullopt));
}

Prediction tta_predict(TinySegNet& net, const Tensor& image, const AdaptConfig& cfg) {
  cfg.validate();
  const Tensor x = as_image_batch(image);
  const ViewSet views = build_views(x, cfg.views);
  Prediction p;
  p.probs = fused_views(net, views, x.dim(2), x.dim(3), SanConfig::san(cfg.alpha)).probs;
  p.mask = argmax_mask(p.probs);
  return p;
}

std::vector<std::uint8_t> labels_for_view(const ViewSpec& spec, std::span<const std::uint8_t> labels,
                                          std::size_t height, std::size_t width, std::size_t view_h,
                                          std::size_t view_w) {
  std::vector<std::uint8_t> out(view_h * view_w);
  for (std::size_t y = 0; y < view_h; ++y) {
    const auto sy = std::min(height - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) * static_cast<double>(height) / static_cast<double>(view_h)));
    for (std::size_t x = 0; x < view_w; ++x) {
      const std::size_t vx = spec.flipped ? view_w - 1 - x : x;
      const auto sx = std::min(width - 1, static_cast<std::size_t>((static_cast<double>(vx) + 0.5) * static_cast<double>(width) / static_cast<double>(view_w)));
      out[y * view_w + x] = labels[sy * width + sx];
    }
  }
  return out;
}

AdaptResult adapt_one(TinySegNet& net, const Tensor& image, const AdaptConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t guards_before = guard_events();
  ScopedRestore restore(net);
  net.set_training(false);
  net.set_trainable(cfg.adapt_groups);
  auto params = net.select_params(cfg.adapt_groups);
  const SanConfig norm = SanConfig::san(cfg.alpha);

  const Tensor x = as_image_batch(image);
  const std::size_t height = x.dim(2), width = x.dim(3);
  const ViewSet views = build_views(x, cfg.views);
  const std::size_t original = identity_view(views);

  AdaptResult result;
  result.report.warnings = views.warnings;
  std::optional<PseudoLabelMap> frozen;

  for (int it = 0; it < cfg.n_iters; ++it) {
    Tensor original_logits;
    std::vector<Tensor> aligned;
    if (cfg.loss_on_all_views) {
      aligned = aligned_view_probs(net, views, height, width, norm, std::nullopt);
    } else {
      aligned = aligned_view_probs(net, views, height, width, norm, original);
      original_logits = net.forward(views.views[original].image, norm);
      aligned[original] = softmax_channel(original_logits).detach();
    }
    if (!frozen || !cfg.freeze_pseudo_labels) {
      frozen = make_pseudo_gt(fuse(aligned), cfg.psi);
    }
    const PseudoLabelMap& pseudo = *frozen;
    result.report.coverage.push_back(pseudo.coverage);
    if (pseudo.coverage == 0.0) {
      ++result.report.skipped_updates;
      result.report.warnings.push_back("iteration " + std::to_string(it) + ": empty pseudo-label, update skipped");
      continue;
    }

    Tensor loss;
    if (cfg.loss_on_all_views) {
      const std::size_t total = views.views.size();
      for (const auto& group : group_by_extent(views, std::nullopt)) {
        std::vector<const Tensor*> images;
        std::vector<std::uint8_t> labels;
        for (auto i : group) {
          const auto& v = views.views[i];
          images.push_back(&v.image);
          auto l = labels_for_view(v.spec, pseudo.labels, height, width, v.image.dim(2), v.image.dim(3));
          labels.insert(labels.end(), l.begin(), l.end());
        }
        Tensor term = scale(softmax_cross_entropy(net.forward(stack(images), norm), labels),
                            static_cast<float>(group.size()) / static_cast<float>(total));
        loss = loss.requires_grad() ? add(loss, term) : term;
      }
    } else {
      loss = softmax_cross_entropy(original_logits, pseudo.labels);
    }
    result.report.losses.push_back(loss.item());
    loss.backward();
    sgd_step(params, cfg.eta);
  }

  result.prediction = predict(net, x, norm);
  net.set_trainable({});
  result.report.guard_events = guard_events() - guards_before;
  result.report.wall_ms = elapsed_ms(start);
  return result;
}

AdaptResult entropy_adapt(TinySegNet& net, const Tensor& image, const AdaptConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t guards_before = guard_events();
  ScopedRestore restore(net);
  net.set_training(false);
  net.set_trainable(cfg.adapt_groups);
  auto params = net.select_params(cfg.adapt_groups);
  const SanConfig norm = SanConfig::san(cfg.alpha);
  const Tensor x = as_image_batch(image);

  AdaptResult result;
  for (int it = 0; it < cfg.n_iters; ++it) {
    Tensor loss = softmax_entropy(net.forward(x, norm));
    result.report.losses.push_back(loss.item());
    loss.backward();
    sgd_step(params, cfg.eta);
  }
  result.prediction = predict(net, x, norm);
  net.set_trainable({});
  result.report.guard_events = guard_events() - guards_before;
  result.report.wall_ms = elapsed_ms(start);
  return result;
}

}  // namespace sada
