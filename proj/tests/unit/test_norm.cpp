// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "sada/norm.hpp"

using namespace sada;

namespace {

BatchNormLayer layer_with_running(std::size_t ch, std::uint64_t key) {
  BatchNormLayer layer(ch);
  Rng rng(key);
  for (std::size_t c = 0; c < ch; ++c) {
    layer.running.mean[c] = static_cast<float>(rng.uniform(-1, 1));
    layer.running.var[c] = static_cast<float>(rng.uniform(0.2, 2));
    layer.gamma[c] = static_cast<float>(rng.uniform(0.5, 1.5));
    layer.beta[c] = static_cast<float>(rng.uniform(-0.5, 0.5));
  }
  return layer;
}

}  // namespace

TEST_CASE("train BN on a symmetric channel") {
  BatchNormLayer layer(1);
  const Tensor x(Shape{2, 1, 1, 2}, {-1, 1, -1, 1});
  const Tensor y = bn_train_forward(layer, x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-4));
}

TEST_CASE("train BN on a constant channel yields beta") {
  BatchNormLayer layer(2);
  layer.beta[0] = 0.25f;
  layer.beta[1] = -0.5f;
  const Tensor x(Shape{2, 2, 2, 2}, 3.0f);
  const Tensor y = bn_train_forward(layer, x);
  for (std::size_t i = 0; i < 16; ++i) CHECK(y[i] == (i / 4 % 2 == 0 ? 0.25f : -0.5f));
}

TEST_CASE("train BN matches two-pass statistics") {
  BatchNormLayer layer = layer_with_running(3, 1);
  const BatchNormLayer before = layer;
  const Tensor x = oracle::random_tensor({4, 3, 5, 5}, 2, -3, 3);
  const Tensor y = bn_train_forward(layer, x);
  double worst = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto m = oracle::channel_moments(x, c);
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) {
        const std::size_t k = (n * 3 + c) * 25 + i;
        const double ref = (x[k] - m.mean) / std::sqrt(m.var + 1e-5) * before.gamma[c] + before.beta[c];
        worst = std::max(worst, std::fabs(ref - y[k]));
      }
    CHECK(layer.running.mean[c] == doctest::Approx(0.9 * before.running.mean[c] + 0.1 * m.mean).epsilon(1e-6));
    CHECK(layer.running.var[c] == doctest::Approx(0.9 * before.running.var[c] + 0.1 * m.var).epsilon(1e-6));
  }
  CHECK(worst <= 1e-5);
  CHECK_THROWS_AS(bn_train_forward(layer, Tensor(Shape{1, 3, 1, 1})), ContractError);
}

TEST_CASE("single-sample statistics") {
  const NormStats s = compute_sample_stats(Tensor(Shape{1, 1, 2, 2}, {1, 3, 5, 7}));
  CHECK(s.mean[0] == 4.0f);
  CHECK(s.var[0] == 5.0f);
  const NormStats k = compute_sample_stats(Tensor(Shape{1, 1, 3, 3}, 2.5f));
  CHECK(k.mean[0] == 2.5f);
  CHECK(k.var[0] == 0.0f);

  const Tensor z = oracle::random_tensor({1, 8, 16, 16}, 3, -4, 4);
  const NormStats r = compute_sample_stats(z);
  for (std::size_t c = 0; c < 8; ++c) {
    const auto m = oracle::channel_moments(z, c);
    CHECK(std::fabs(r.mean[c] - m.mean) <= 1e-6);
    CHECK(std::fabs(r.var[c] - m.var) <= 1e-6);
  }
  CHECK_THROWS_AS(compute_sample_stats(Tensor(Shape{2, 1, 2, 2})), ContractError);
}

TEST_CASE("interpolation arithmetic") {
  const NormStats src{{0.0f}, {1.0f}, 0}, smp{{2.0f}, {3.0f}, 4};
  const NormStats out = interpolate_stats(src, smp, 0.5f);
  CHECK(out.mean[0] == 1.0f);
  CHECK(out.var[0] == 2.0f);
  CHECK_THROWS_AS(interpolate_stats(src, smp, 1.5f), ContractError);
  CHECK_THROWS_AS(interpolate_stats(src, smp, -0.1f), ContractError);
}

TEST_CASE("interpolation over random tuples") {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto mu_s = static_cast<float>(rng.uniform(-1, 1)), var_s = static_cast<float>(rng.uniform(0, 1));
    const auto mu_t = static_cast<float>(rng.uniform(-1, 1)), var_t = static_cast<float>(rng.uniform(0, 1));
    const auto alpha = static_cast<float>(rng.uniform());
    const NormStats out = interpolate_stats({{mu_s}, {var_s}, 0}, {{mu_t}, {var_t}, 1}, alpha);
    CHECK(std::fabs(out.mean[0] - ((1.0 - alpha) * mu_s + alpha * static_cast<double>(mu_t))) <= 1e-7);
    CHECK(std::fabs(out.var[0] - ((1.0 - alpha) * var_s + alpha * static_cast<double>(var_t))) <= 1e-7);
    CHECK(out.var[0] >= 0.0f);
  }
}

TEST_CASE("mean is affine in alpha") {
  const NormStats src{{0.3f}, {1.2f}, 0}, smp{{-0.7f}, {0.4f}, 1};
  const float m0 = interpolate_stats(src, smp, 0.0f).mean[0], m1 = interpolate_stats(src, smp, 1.0f).mean[0];
  for (float a : {0.25f, 0.5f, 0.75f}) {
    CHECK(interpolate_stats(src, smp, a).mean[0] == doctest::Approx(m0 + a * (m1 - m0)).epsilon(1e-6));
  }
}

TEST_CASE("SaN limit cases") {
  const BatchNormLayer layer = layer_with_running(4, 5);
  const Tensor x = oracle::random_tensor({3, 4, 6, 6}, 6, -2, 3);
  const Tensor infer = bn_infer_forward(layer, x);
  const Tensor san0 = san_forward(layer, SanConfig::san(0.0f), x);
  const Tensor tbn = san_forward(layer, SanConfig::train_bn(), x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(san0[i] == infer[i]);
    CHECK(tbn[i] == infer[i]);
  }

  const Tensor san1 = san_forward(layer, SanConfig::san(1.0f), x);
  const Tensor pbn = san_forward(layer, SanConfig::pred_bn(), x);
  double worst = 0.0;
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 4; ++c) {
      const auto m = oracle::channel_moments(x, c, n);
      for (std::size_t i = 0; i < 36; ++i) {
        const std::size_t k = (n * 4 + c) * 36 + i;
        const double ref = (x[k] - m.mean) / std::sqrt(m.var + 1e-5) * layer.gamma[c] + layer.beta[c];
        worst = std::max(worst, std::fabs(ref - san1[k]));
        CHECK(pbn[k] == san1[k]);
      }
    }
  CHECK(worst <= 1e-5);

  CHECK_THROWS_AS(san_forward(layer, SanConfig::san(1.2f), x), ContractError);
}

TEST_CASE("SaN uses per-view statistics") {
  const BatchNormLayer layer = layer_with_running(2, 7);
  const Tensor a = oracle::random_tensor({1, 2, 4, 4}, 8);
  const Tensor b = oracle::random_tensor({1, 2, 4, 4}, 9, 2, 5);
  Tensor both(Shape{2, 2, 4, 4});
  std::copy(a.data().begin(), a.data().end(), both.data().begin());
  std::copy(b.data().begin(), b.data().end(), both.data().begin() + 32);
  const Tensor joint = san_forward(layer, SanConfig::san(0.3f), both);
  const Tensor ya = san_forward(layer, SanConfig::san(0.3f), a);
  const Tensor yb = san_forward(layer, SanConfig::san(0.3f), b);
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(joint[i] == ya[i]);
    CHECK(joint[32 + i] == yb[i]);
  }
  const Tensor t = san_forward(layer, SanConfig::train_bn(), b);
  bool differs = false;
  for (std::size_t i = 0; i < 32; ++i) differs |= t[i] != yb[i];
  CHECK(differs);
}

TEST_CASE("BN gradients, ten seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = oracle::random_tensor({2, 2, 3, 3}, 50 + seed, -2, 2);
    const Tensor w = oracle::random_tensor({2, 2, 3, 3}, 60 + seed);
    BatchNormLayer layer = layer_with_running(2, 70 + seed);
    CHECK(gradcheck([&](const Tensor& v) { return reduce_sum(mul(bn_train_forward(layer, v), w)); }, x) <= 1e-2f);
    CHECK(gradcheck([&](const Tensor& v) {
            BatchNormLayer l = layer;
            l.gamma = v;
            return reduce_sum(mul(bn_train_forward(l, x), w));
          }, layer.gamma) <= 1e-2f);
    for (float alpha : {0.1f, 1.0f}) {
      CHECK(gradcheck([&](const Tensor& v) {
              BatchNormLayer l = layer;
              l.gamma = v;
              return reduce_sum(mul(san_forward(l, SanConfig::san(alpha), x), w));
            }, layer.gamma) <= 1e-2f);
      CHECK(gradcheck([&](const Tensor& v) {
              BatchNormLayer l = layer;
              l.beta = v;
              return reduce_sum(mul(san_forward(l, SanConfig::san(alpha), x), w));
            }, layer.beta) <= 1e-2f);
    }
  }
}
