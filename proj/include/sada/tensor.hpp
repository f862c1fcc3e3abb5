// SPDX-License-Identifier: Apache-2.0
//
// Dense float tensor with reverse-mode automatic differentiation.
//
// Layout is row-major everywhere, NCHW for images and feature maps. Tensors
// are shared handles: copying a Tensor aliases the same storage, use clone()
// for a deep copy. Every op that sees an input with requires_grad() records
// a node, unless a NoGradGuard is alive on the current thread.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sada {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

// Backward closure for one op. `out` is the op's output; the closure reads
// out.grad and accumulates into the saved inputs.
struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(TensorImpl& out)> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float& operator[](std::size_t i) { return impl_->data[i]; }
  float operator[](std::size_t i) const { return impl_->data[i]; }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !impl_->grad.empty(); }
  // Gradient buffer; all zeros when nothing has been accumulated yet.
  std::vector<float> grad() const;
  std::span<float> grad_mut();
  void zero_grad() { impl_->grad.clear(); }

  // Runs reverse-mode accumulation from this scalar tensor.
  void backward() const;

  Tensor clone() const;    // deep copy of data, no graph
  Tensor detach() const;   // shares nothing, no graph
  Tensor reshape(Shape shape) const;  // copy with new shape, gradient flows

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Op authors only.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Guard events: counts of denominators/log arguments clamped away from zero
// on the current thread.
std::uint64_t guard_events();
void reset_guard_events();

namespace detail {

// Attaches a backward node to `out` if grad mode is on and any input
// requires grad. Returns true when a node was attached.
bool attach(Tensor& out, std::initializer_list<const Tensor*> inputs,
            std::function<void(TensorImpl&)> backward);

// Accumulates src into the gradient buffer of t (allocating it lazily).
void accumulate(TensorImpl& t, std::span<const float> src);
std::span<float> grad_buffer(TensorImpl& t);

}  // namespace detail

// ---- elementwise with trailing-axis broadcasting ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// |b| < 1e-12 is replaced by a signed 1e-12 and counted as a guard event.
Tensor div_guarded(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor ones_like(const Tensor& a);

// ---- unary ----
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
// Arguments below 1e-12 are clamped and counted as guard events.
Tensor log(const Tensor& x);

// ---- reductions (to a [1] tensor, sequential over the flat index) ----
Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);

// ---- image ops, NCHW ----
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad);
Tensor softmax_channel(const Tensor& logits);
// Per-pixel channel argmax, ties resolve to the lowest index. Output N×H×W
// holding class indices as floats; never records a graph.
Tensor argmax_channel(const Tensor& x);
// Half-pixel-center bilinear resampling with edge clamp.
Tensor bilinear_resize(const Tensor& t, std::size_t out_h, std::size_t out_w);
Tensor flip_horizontal(const Tensor& t);

// ---- losses ----
inline constexpr std::uint8_t kIgnoreLabel = 255;

// Mean cross-entropy of softmax(logits) over non-ignored pixels. labels is
// N·H·W long. Returns 0 (with no gradient contribution) when every pixel is
// ignored.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::uint8_t> labels);

// Mean per-pixel Shannon entropy of softmax(logits) over the channel axis.
Tensor softmax_entropy(const Tensor& logits);

// ---- gradient check ----
// Central differences with step 1e-3. Returns max over coordinates of
// |analytic - numeric| / max(1, |numeric|). f must return a one-element tensor.
float gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x);

}  // namespace sada
