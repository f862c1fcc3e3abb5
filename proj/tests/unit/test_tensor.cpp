// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "sada/tensor.hpp"

using namespace sada;

namespace {

std::vector<float> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("elementwise arithmetic") {
  const Tensor a(Shape{2}, {1, 2}), b(Shape{2}, {3, 4});
  CHECK(vec(add(a, b)) == std::vector<float>{4, 6});
  CHECK(vec(sub(a, b)) == std::vector<float>{-2, -2});
  CHECK(vec(mul(a, ones_like(a))) == vec(a));
}

TEST_CASE("product rule gradient") {
  Tensor a(Shape{1}, {2}), b(Shape{1}, {3});
  a.set_requires_grad(true);
  mul(a, b).backward();
  CHECK(a.grad() == std::vector<float>{3});
}

TEST_CASE("trailing broadcast reduces gradient") {
  Tensor a = oracle::random_tensor({2, 3}, 1);
  Tensor b(Shape{3}, {1, 2, 3});
  b.set_requires_grad(true);
  reduce_sum(mul(a, b)).backward();
  for (std::size_t j = 0; j < 3; ++j) CHECK(b.grad()[j] == doctest::Approx(a[j] + a[3 + j]).epsilon(1e-6));
  CHECK_THROWS_AS(add(Tensor(Shape{2, 3}), Tensor(Shape{2})), ShapeError);
}

TEST_CASE("div_guarded replaces tiny denominators") {
  reset_guard_events();
  const Tensor a(Shape{3}, {1, 1, 1}), b(Shape{3}, {2, 0, -1e-20f});
  const Tensor q = div_guarded(a, b);
  CHECK(q[0] == 0.5f);
  CHECK(q[1] == doctest::Approx(1e12));
  CHECK(q[2] == doctest::Approx(-1e12));
  CHECK(guard_events() == 2);
  for (float v : q.data()) CHECK(std::isfinite(v));
}

TEST_CASE("fan-out accumulates both contributions") {
  Tensor x = oracle::random_tensor({5}, 2);
  x.set_requires_grad(true);
  reduce_sum(add(mul(x, x), x)).backward();
  for (std::size_t i = 0; i < 5; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x[i] + 1.0).epsilon(1e-6));
}

TEST_CASE("conv2d small cases") {
  const Tensor ones = Tensor::ones({1, 1, 3, 3});
  const Tensor out = conv2d(ones, Tensor::ones({1, 1, 3, 3}), Tensor::zeros({1}), 1, 0);
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out[0] == 9.0f);

  const Tensor x = oracle::random_tensor({1, 1, 4, 5}, 3);
  CHECK(vec(conv2d(x, Tensor::ones({1, 1, 1, 1}), Tensor::zeros({1}), 1, 0)) == vec(x));

  CHECK_THROWS_AS(conv2d(Tensor::ones({1, 1, 2, 2}), Tensor::ones({1, 1, 5, 5}), Tensor::zeros({1}), 1, 1),
                  ShapeError);
}

TEST_CASE("conv2d matches six-loop reference") {
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      const Tensor x = oracle::random_tensor({2, 3, 5, 5}, 10 + stride * 3 + pad, -10.0, 10.0);
      const Tensor w = oracle::random_tensor({4, 3, 3, 3}, 20 + stride * 3 + pad);
      const Tensor b = oracle::random_tensor({4}, 30 + stride * 3 + pad);
      std::size_t oh = 0, ow = 0;
      const auto ref = oracle::conv2d(x, w, b, stride, pad, oh, ow);
      const Tensor got = conv2d(x, w, b, stride, pad);
      REQUIRE(got.shape() == Shape{2, 4, oh, ow});
      double worst = 0.0;
      for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::fabs(ref[i] - got[i]));
      CHECK(worst <= 1e-5);
    }
  }
}

TEST_CASE("softmax and argmax") {
  const Tensor p = softmax_channel(Tensor::zeros({1, 3, 2, 2}));
  for (float v : p.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

  const Tensor q = softmax_channel(oracle::random_tensor({2, 5, 3, 3}, 4, -8, 8));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 9; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < 5; ++c) {
        const float v = q[(n * 5 + c) * 9 + i];
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        s += v;
      }
      CHECK(std::fabs(s - 1.0) <= 1e-5);
    }

  const Tensor ties(Shape{1, 3, 1, 2}, {0.5f, 0.2f, 0.5f, 0.7f, 0.0f, 0.1f});
  const Tensor idx = argmax_channel(ties);
  CHECK(idx[0] == 0.0f);
  CHECK(idx[1] == 1.0f);
}

TEST_CASE("bilinear resize") {
  const Tensor t = oracle::random_tensor({1, 2, 5, 7}, 5);
  CHECK(vec(bilinear_resize(t, 5, 7)) == vec(t));

  const Tensor small(Shape{1, 1, 2, 2}, {0, 1, 2, 3});
  const Tensor big = bilinear_resize(small, 4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      CHECK(big[y * 4 + x] == doctest::Approx(oracle::bilinear_at(small.data().data(), 2, 2, 4, 4, y, x)).epsilon(1e-6));
  // Hand values: corners clamp, interior blends at 1/4 and 3/4.
  CHECK(big[0] == 0.0f);
  CHECK(big[1] == doctest::Approx(0.25));
  CHECK(big[5] == doctest::Approx(0.75));
  CHECK(big[15] == 3.0f);

  const Tensor odd = oracle::random_tensor({1, 1, 6, 9}, 6);
  const Tensor resized = bilinear_resize(odd, 13, 4);
  for (std::size_t y = 0; y < 13; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      CHECK(resized[y * 4 + x] == doctest::Approx(oracle::bilinear_at(odd.data().data(), 6, 9, 13, 4, y, x)).epsilon(1e-6));

  const Tensor c(Shape{1, 1, 4, 4}, 0.3f);
  const Tensor back = bilinear_resize(bilinear_resize(c, 12, 12), 4, 4);
  for (float v : back.data()) CHECK(v == 0.3f);

  CHECK_THROWS_AS(bilinear_resize(c, 0, 4), ShapeError);
}

TEST_CASE("flip is an involution") {
  const Tensor t = oracle::random_tensor({1, 2, 3, 5}, 7);
  CHECK(vec(flip_horizontal(flip_horizontal(t))) == vec(t));
  CHECK(flip_horizontal(t)[0] == t[4]);
}

TEST_CASE("gradcheck on simple functions") {
  const Tensor x(Shape{3}, {1, 2, 3});
  CHECK(gradcheck([](const Tensor& v) { return reduce_sum(mul(v, v)); }, x) <= 1e-3f);
  CHECK_THROWS_AS(gradcheck([](const Tensor& v) { return mul(v, v); }, x), ContractError);
}

TEST_CASE("gradcheck over differentiable ops, ten seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = oracle::random_tensor({2, 3}, 100 + seed);
    const Tensor other = oracle::random_tensor({2, 3}, 200 + seed, 0.5, 1.5);
    CHECK(gradcheck([&](const Tensor& v) { return reduce_mean(mul(add(v, other), sub(v, other))); }, x) <= 1e-2f);
    CHECK(gradcheck([&](const Tensor& v) { return reduce_sum(div_guarded(v, other)); }, x) <= 1e-2f);
    CHECK(gradcheck([&](const Tensor& v) { return reduce_sum(div_guarded(other, add(v, scale(ones_like(v), 3.0f)))); }, x) <= 1e-2f);
    CHECK(gradcheck([](const Tensor& v) { return reduce_sum(exp(v)); }, x) <= 1e-2f);
    CHECK(gradcheck([&](const Tensor& v) { return reduce_sum(log(add(v, scale(ones_like(v), 2.0f)))); }, x) <= 1e-2f);
    // Keep inputs away from the kink.
    Tensor shifted = x.clone();
    for (auto& v : shifted.data()) v += v >= 0 ? 0.1f : -0.1f;
    CHECK(gradcheck([](const Tensor& v) { return reduce_sum(relu(v)); }, shifted) <= 1e-2f);
  }
}

TEST_CASE("gradcheck through conv, resize and softmax losses") {
  const Tensor input = oracle::random_tensor({1, 2, 6, 6}, 8);
  const Tensor w = oracle::random_tensor({3, 2, 3, 3}, 9);
  const Tensor b = oracle::random_tensor({3}, 10);
  CHECK(gradcheck([&](const Tensor& v) { return reduce_mean(conv2d(input, v, b, 1, 1)); }, w) <= 1e-2f);
  CHECK(gradcheck([&](const Tensor& v) { return reduce_mean(mul(conv2d(v, w, b, 2, 1), conv2d(v, w, b, 2, 1))); }, input) <= 1e-2f);
  CHECK(gradcheck([&](const Tensor& v) { return reduce_sum(mul(conv2d(input, w, v, 1, 0), conv2d(input, w, v, 1, 0))); }, b) <= 1e-2f);

  const Tensor small = oracle::random_tensor({1, 2, 3, 3}, 11);
  const Tensor weights = oracle::random_tensor({1, 2, 7, 5}, 12);
  CHECK(gradcheck([&](const Tensor& v) { return reduce_sum(mul(bilinear_resize(v, 7, 5), weights)); }, small) <= 1e-2f);

  const std::vector<std::uint8_t> labels{0, 2, 1, 255, 2, 0};
  const Tensor logits = oracle::random_tensor({1, 3, 2, 3}, 13, -2, 2);
  CHECK(gradcheck([&](const Tensor& v) { return softmax_cross_entropy(v, labels); }, logits) <= 1e-2f);
  CHECK(gradcheck([](const Tensor& v) { return softmax_entropy(v); }, logits) <= 1e-2f);
}

TEST_CASE("cross-entropy and entropy values") {
  const Tensor logits(Shape{1, 2, 1, 2}, {0.0f, 1.0f, 0.0f, -1.0f});
  const std::vector<std::uint8_t> labels{1, 0};
  // pixel 0: logits (0, 0) → −log 0.5; pixel 1: logits (1, −1) → −log σ(2)
  const double expected = 0.5 * (std::log(2.0) + std::log1p(std::exp(-2.0)));
  CHECK(softmax_cross_entropy(logits, labels).item() == doctest::Approx(expected).epsilon(1e-6));
  const std::vector<std::uint8_t> none{255, 255};
  CHECK(softmax_cross_entropy(logits, none).item() == 0.0f);

  CHECK(softmax_entropy(Tensor::zeros({1, 5, 2, 2})).item() == doctest::Approx(std::log(5.0)).epsilon(1e-6));
  Tensor peaked(Shape{1, 3, 1, 1}, {80.0f, -80.0f, -80.0f});
  peaked.set_requires_grad(true);
  softmax_entropy(peaked).backward();
  for (float g : peaked.grad()) CHECK(std::fabs(g) < 1e-6f);
}

TEST_CASE("log stays finite at zero") {
  reset_guard_events();
  const Tensor y = log(Tensor::zeros({2}));
  for (float v : y.data()) CHECK(std::isfinite(v));
}

TEST_CASE("reshape and detach") {
  Tensor x = oracle::random_tensor({2, 3}, 14);
  x.set_requires_grad(true);
  reduce_sum(x.reshape({3, 2})).backward();
  for (float g : x.grad()) CHECK(g == 1.0f);
  CHECK(!x.detach().requires_grad());
  CHECK_THROWS_AS(x.reshape({4, 2}), ShapeError);
}
