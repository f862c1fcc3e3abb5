// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "sada/train.hpp"

using namespace sada;

namespace {

double param_norm(const TinySegNet& net) {
  double s = 0.0;
  for (const auto& p : const_cast<TinySegNet&>(net).named_parameters())
    for (float v : p.tensor.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

double mean_loss(const TrainResult& r, int epoch) {
  double s = 0.0;
  int n = 0;
  for (const auto& step : r.log) {
    if (step.epoch == epoch) {
      s += step.loss;
      ++n;
    }
  }
  return s / n;
}

}  // namespace

TEST_CASE("polynomial schedule") {
  CHECK(poly_lr(0.05f, 0.0, 0.9f) == doctest::Approx(0.05));
  CHECK(poly_lr(0.05f, 0.5, 0.9f) == doctest::Approx(0.05 * std::pow(0.5, 0.9)));
  CHECK(poly_lr(0.05f, 1.0, 0.9f) == 0.0f);
  CHECK(poly_lr(0.05f, 2.0, 0.9f) == 0.0f);
}

TEST_CASE("gaussian blur") {
  const Tensor flat(Shape{3, 6, 6}, 0.3f);
  const Tensor smooth = gaussian_blur(flat, 1.5);
  for (float v : smooth.data()) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));
  const Tensor img = oracle::random_tensor({3, 8, 8}, 1, 0, 1);
  const Tensor blurred = gaussian_blur(img, 2.0);
  double before = 0.0, after = 0.0, mean = 0.0;
  for (float v : img.data()) mean += v;
  mean /= static_cast<double>(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    before += (img[i] - mean) * (img[i] - mean);
    after += (blurred[i] - mean) * (blurred[i] - mean);
  }
  CHECK(after < before);
}

TEST_CASE("augmented samples") {
  TrainRecipe r;
  const Scene s = make_sample(Split::Source, 0, 0);
  Tensor a = s.image, b = s.image;
  ByteTensor ma = s.mask, mb = s.mask;
  augment_sample(r, 11, a, ma);
  augment_sample(r, 11, b, mb);
  CHECK(a.shape() == Shape{3, 24, 24});
  CHECK(ma.shape == std::vector<std::size_t>{24, 24});
  CHECK(std::vector<float>(a.data().begin(), a.data().end()) == std::vector<float>(b.data().begin(), b.data().end()));
  CHECK(ma.data == mb.data);
  for (auto l : ma.data) CHECK(l < kSceneClasses);
  for (float v : a.data()) CHECK((v >= 0.0f && v <= 1.0f));
  Tensor c = s.image;
  ByteTensor mc = s.mask;
  augment_sample(r, 12, c, mc);
  CHECK(std::vector<float>(c.data().begin(), c.data().end()) != std::vector<float>(a.data().begin(), a.data().end()));
}

TEST_CASE("recipe contracts") {
  TinySegNet net(5, 0);
  const auto data = make_samples(Split::Source, 2, 0);
  TrainRecipe r;
  r.epochs = 1;
  r.crop_size = 22;
  CHECK_THROWS_AS(train_source(net, data, r), ContractError);
  r.crop_size = 24;
  r.batch_size = 0;
  CHECK_THROWS_AS(train_source(net, data, r), ContractError);
  CHECK_THROWS_AS(train_source(net, {}, TrainRecipe{}), ContractError);
}

TEST_CASE("short runs learn and are reproducible") {
  const auto data = make_samples(Split::Source, 16, 0);
  TrainRecipe r;
  r.epochs = 4;
  r.batch_size = 4;
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    r.seed = seed;
    TinySegNet net(5, seed);
    std::vector<TrainStep> seen;
    const TrainResult res = train_source(net, data, r, [&](const TrainStep& s) { seen.push_back(s); });
    CHECK(!res.diverged);
    CHECK(res.log.size() == 16);
    CHECK(seen.size() == res.log.size());
    CHECK(res.log.front().lr == doctest::Approx(r.base_lr));
    for (std::size_t i = 1; i < res.log.size(); ++i) CHECK(res.log[i].lr < res.log[i - 1].lr);
    if (mean_loss(res, 3) < mean_loss(res, 0)) ++improved;
  }
  CHECK(improved >= 2);

  r.seed = 0;
  TinySegNet a(5, 0), b(5, 0);
  train_source(a, data, r);
  train_source(b, data, r);
  CHECK(encode_checkpoint(a, "{}") == encode_checkpoint(b, "{}"));
}

TEST_CASE("weight decay shrinks parameters") {
  const auto data = make_samples(Split::Source, 8, 0);
  TrainRecipe r;
  r.epochs = 2;
  r.batch_size = 4;
  r.weight_decay = 0.0f;
  TinySegNet plain(5, 0);
  train_source(plain, data, r);
  r.weight_decay = 0.05f;
  TinySegNet decayed(5, 0);
  train_source(decayed, data, r);
  CHECK(param_norm(decayed) < param_norm(plain));
}

TEST_CASE("divergence is flagged") {
  const auto data = make_samples(Split::Source, 8, 0);
  TrainRecipe r;
  r.epochs = 3;
  r.batch_size = 4;
  r.base_lr = 1e6f;
  r.augment = false;
  TinySegNet net(5, 0);
  CHECK(train_source(net, data, r).diverged);
}
