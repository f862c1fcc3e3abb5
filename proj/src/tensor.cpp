// SPDX-License-Identifier: Apache-2.0

#include "sada/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace sada {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_guard_events = 0;

constexpr float kGuardEps = 1e-12f;

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : Tensor(Shape{1}, 0.0f) {}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero-sized extent in shape " + to_string(shape));
  }
  impl_->data.assign(numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero-sized extent in shape " + to_string(shape));
  }
  if (numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  }
  impl_->data = std::move(data);
  impl_->shape = std::move(shape);
}

float Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
  return *this;
}

std::vector<float> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<float>(impl_->data.size(), 0.0f);
  return impl_->grad;
}

std::span<float> Tensor::grad_mut() { return detail::grad_buffer(*impl_); }

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data); }

Tensor Tensor::detach() const { return clone(); }

Tensor Tensor::reshape(Shape shape) const {
  if (numel(shape) != size()) {
    throw ShapeError("cannot reshape " + to_string(this->shape()) + " to " + to_string(shape));
  }
  Tensor out(std::move(shape), impl_->data);
  detail::attach(out, {this}, [in = impl_](detail::TensorImpl& o) {
    detail::accumulate(*in, o.grad);
  });
  return out;
}

void Tensor::backward() const {
  if (size() != 1) {
    throw ContractError("backward() requires a scalar, got shape " + to_string(shape()));
  }
  // Post-order DFS gives a topological order; each node is visited once.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      auto* child = fn->inputs[next++].get();
      if (child->grad_fn && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  detail::grad_buffer(*impl_)[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->grad_fn && !node->grad.empty()) node->grad_fn->backward(*node);
  }
}

// ---------------------------------------------------------------- grad mode

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

std::uint64_t guard_events() { return t_guard_events; }
void reset_guard_events() { t_guard_events = 0; }

namespace detail {

bool attach(Tensor& out, std::initializer_list<const Tensor*> inputs,
            std::function<void(TensorImpl&)> backward) {
  if (!t_grad_enabled) return false;
  bool any = false;
  for (const auto* t : inputs) any = any || t->requires_grad();
  if (!any) return false;
  auto node = std::make_shared<Node>();
  for (const auto* t : inputs) node->inputs.push_back(t->impl());
  node->backward = std::move(backward);
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
  return true;
}

std::span<float> grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0f);
  return t.grad;
}

void accumulate(TensorImpl& t, std::span<const float> src) {
  if (!t.requires_grad) return;
  auto g = grad_buffer(t);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

namespace {

// Trailing-axis broadcasting: the smaller operand's shape must be a suffix of
// the larger one's, or the smaller must hold a single element.
Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  const Shape& big = a.size() >= b.size() && numel(a) >= numel(b) ? a : b;
  const Shape& small = &big == &a ? b : a;
  if (numel(small) == 1) return big;
  if (small.size() <= big.size() &&
      std::equal(small.rbegin(), small.rend(), big.rbegin())) {
    return big;
  }
  throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) +
                   " are not broadcast-compatible");
}

// Sums a full-size gradient down to an operand of n elements.
void reduce_into(detail::TensorImpl& dst, std::span<const float> g,
                 const std::function<float(std::size_t)>& factor) {
  if (!dst.requires_grad) return;
  auto out = detail::grad_buffer(dst);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < g.size(); ++i) out[i % n] += g[i] * factor(i);
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  Shape shape = broadcast_shape(a.shape(), b.shape());
  Tensor out(shape);
  const std::size_t n = out.size();
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  auto pa = a.data();
  auto pb = b.data();
  auto po = out.data();
  std::vector<float> denom;
  switch (op) {
    case BinOp::Add:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % na] + pb[i % nb];
      break;
    case BinOp::Sub:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % na] - pb[i % nb];
      break;
    case BinOp::Mul:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % na] * pb[i % nb];
      break;
    case BinOp::Div:
      denom.resize(nb);
      for (std::size_t j = 0; j < nb; ++j) {
        float d = pb[j];
        if (std::fabs(d) < kGuardEps) {
          d = std::signbit(d) ? -kGuardEps : kGuardEps;
          ++t_guard_events;
        }
        denom[j] = d;
      }
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % na] / denom[i % nb];
      break;
  }
  auto ia = a.impl();
  auto ib = b.impl();
  detail::attach(out, {&a, &b}, [ia, ib, op, denom = std::move(denom)](detail::TensorImpl& o) {
    const auto& g = o.grad;
    const std::size_t na = ia->data.size();
    const std::size_t nb = ib->data.size();
    switch (op) {
      case BinOp::Add:
        reduce_into(*ia, g, [](std::size_t) { return 1.0f; });
        reduce_into(*ib, g, [](std::size_t) { return 1.0f; });
        break;
      case BinOp::Sub:
        reduce_into(*ia, g, [](std::size_t) { return 1.0f; });
        reduce_into(*ib, g, [](std::size_t) { return -1.0f; });
        break;
      case BinOp::Mul:
        reduce_into(*ia, g, [&](std::size_t i) { return ib->data[i % nb]; });
        reduce_into(*ib, g, [&](std::size_t i) { return ia->data[i % na]; });
        break;
      case BinOp::Div:
        reduce_into(*ia, g, [&](std::size_t i) { return 1.0f / denom[i % nb]; });
        reduce_into(*ib, g, [&](std::size_t i) {
          const float d = denom[i % nb];
          return -ia->data[i % na] / (d * d);
        });
        break;
    }
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }
Tensor div_guarded(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div); }
Tensor scale(const Tensor& a, float s) { return mul(a, Tensor::scalar(s)); }
Tensor ones_like(const Tensor& a) { return Tensor::ones(a.shape()); }

// ---------------------------------------------------------------- unary

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto px = x.data();
  auto po = out.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = px[i] > 0.0f ? px[i] : 0.0f;
  detail::attach(out, {&x}, [in = x.impl()](detail::TensorImpl& o) {
    if (!in->requires_grad) return;
    auto g = detail::grad_buffer(*in);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in->data[i] > 0.0f) g[i] += o.grad[i];
    }
  });
  return out;
}

Tensor exp(const Tensor& x) {
  Tensor out(x.shape());
  auto px = x.data();
  auto po = out.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = std::exp(px[i]);
  detail::attach(out, {&x}, [in = x.impl()](detail::TensorImpl& o) {
    if (!in->requires_grad) return;
    auto g = detail::grad_buffer(*in);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.data[i];
  });
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out(x.shape());
  auto px = x.data();
  auto po = out.data();
  std::vector<float> arg(px.begin(), px.end());
  for (std::size_t i = 0; i < po.size(); ++i) {
    if (arg[i] < kGuardEps) {
      arg[i] = kGuardEps;
      ++t_guard_events;
    }
    po[i] = std::log(arg[i]);
  }
  detail::attach(out, {&x}, [in = x.impl(), arg = std::move(arg)](detail::TensorImpl& o) {
    if (!in->requires_grad) return;
    auto g = detail::grad_buffer(*in);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / arg[i];
  });
  return out;
}

// ---------------------------------------------------------------- reductions

Tensor reduce_sum(const Tensor& x) {
  float s = 0.0f;
  for (float v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  detail::attach(out, {&x}, [in = x.impl()](detail::TensorImpl& o) {
    if (!in->requires_grad) return;
    auto g = detail::grad_buffer(*in);
    for (auto& v : g) v += o.grad[0];
  });
  return out;
}

Tensor reduce_mean(const Tensor& x) {
  float s = 0.0f;
  for (float v : x.data()) s += v;
  const float inv = 1.0f / static_cast<float>(x.size());
  Tensor out = Tensor::scalar(s * inv);
  detail::attach(out, {&x}, [in = x.impl(), inv](detail::TensorImpl& o) {
    if (!in->requires_grad) return;
    auto g = detail::grad_buffer(*in);
    for (auto& v : g) v += o.grad[0] * inv;
  });
  return out;
}

// ---------------------------------------------------------------- gradcheck

float gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  constexpr float kStep = 1e-3f;
  Tensor leaf = x.clone();
  leaf.set_requires_grad(true);
  Tensor y = f(leaf);
  if (y.size() != 1) {
    throw ContractError("gradcheck needs a scalar-valued function, got shape " +
                        to_string(y.shape()));
  }
  y.backward();
  const std::vector<float> analytic = leaf.grad();

  NoGradGuard no_grad;
  float worst = 0.0f;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor plus = x.clone();
    Tensor minus = x.clone();
    plus[i] += kStep;
    minus[i] -= kStep;
    const float numeric = (f(plus).item() - f(minus).item()) / (2.0f * kStep);
    const float err = std::fabs(analytic[i] - numeric) / std::max(1.0f, std::fabs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace sada
