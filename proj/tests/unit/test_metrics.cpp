// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "doctest.h"
#include "oracles.hpp"
#include "sada/metrics.hpp"

using namespace sada;

TEST_CASE("perfect and disjoint predictions") {
  ConfusionMatrix cm(3);
  const std::vector<std::uint8_t> truth{0, 1, 1, 2, 0, 255};
  cm.add(truth, std::vector<std::uint8_t>{0, 1, 1, 2, 0, 1});
  const IoU iou = miou(cm);
  CHECK(cm.total() == 5);
  CHECK(*iou.mean == 1.0);

  ConfusionMatrix bin(2);
  bin.add(std::vector<std::uint8_t>{0, 0, 1, 1}, std::vector<std::uint8_t>{1, 1, 0, 0});
  const IoU z = miou(bin);
  CHECK(*z.per_class[0] == 0.0);
  CHECK(*z.per_class[1] == 0.0);
}

TEST_CASE("four-pixel hand case") {
  ConfusionMatrix cm(2);
  cm.add(std::vector<std::uint8_t>{0, 0, 1, 1}, std::vector<std::uint8_t>{0, 1, 1, 1});
  const IoU iou = miou(cm);
  CHECK(*iou.per_class[0] == doctest::Approx(0.5));
  CHECK(*iou.per_class[1] == doctest::Approx(2.0 / 3.0));
  CHECK(*iou.mean == doctest::Approx(0.58333333));
}

TEST_CASE("zero-union classes are excluded") {
  ConfusionMatrix cm(4);
  cm.add(std::vector<std::uint8_t>{0, 1}, std::vector<std::uint8_t>{0, 1});
  const IoU iou = miou(cm);
  CHECK(!iou.per_class[2]);
  CHECK(*iou.mean == 1.0);
  CHECK(!miou(ConfusionMatrix(3)).mean);
}

TEST_CASE("streaming equals batch") {
  Rng rng(1);
  std::vector<std::uint8_t> truth(400), pred(400);
  for (auto& v : truth) v = static_cast<std::uint8_t>(rng.uniform() < 0.1 ? 255 : rng.uniform_int(0, 4));
  for (auto& v : pred) v = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
  ConfusionMatrix whole(5), a(5), b(5);
  whole.add(truth, pred);
  a.add(std::span(truth).first(150), std::span(pred).first(150));
  b.add(std::span(truth).subspan(150), std::span(pred).subspan(150));
  ConfusionMatrix ba = b;
  ba.merge(a);
  a.merge(b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(a.at(i, j) == whole.at(i, j));
      CHECK(ba.at(i, j) == whole.at(i, j));
    }
}

TEST_CASE("calibration bins are right-closed") {
  CHECK(CalibrationHistogram::bin_of(0.05f) == 0);
  CHECK(CalibrationHistogram::bin_of(0.1001f) == 1);
  CHECK(CalibrationHistogram::bin_of(0.5f) == 4);
  CHECK(CalibrationHistogram::bin_of(1.0f) == 9);
}

TEST_CASE("ECE arithmetic") {
  CalibrationHistogram perfect;
  for (int i = 0; i < 10; ++i) perfect.add(1.0f, true);
  CHECK(*ece(perfect) == 0.0);

  CalibrationHistogram half;
  for (int i = 0; i < 10; ++i) half.add(1.0f, i % 2 == 0);
  CHECK(*ece(half) == doctest::Approx(0.5));

  // 20 pixels over three bins:
  //   5 at 0.25 with 2 correct, 10 at 0.65 with 7 correct, 5 at 0.95 all correct
  //   ECE = 5/20·0.15 + 10/20·0.05 + 5/20·0.05 = 0.075
  std::vector<std::pair<float, bool>> px;
  for (int i = 0; i < 5; ++i) px.push_back({0.25f, i < 2});
  for (int i = 0; i < 10; ++i) px.push_back({0.65f, i < 7});
  for (int i = 0; i < 5; ++i) px.push_back({0.95f, true});
  CalibrationHistogram h;
  for (auto [c, ok] : px) h.add(c, ok);
  CHECK(h.total() == 20);
  CHECK(*ece(h) == doctest::Approx(0.075).epsilon(1e-6));

  std::reverse(px.begin(), px.end());
  CalibrationHistogram r;
  for (auto [c, ok] : px) r.add(c, ok);
  CHECK(*ece(r) == doctest::Approx(*ece(h)).epsilon(1e-12));

  CHECK(!ece(CalibrationHistogram{}));
}

TEST_CASE("calibration from a probability map") {
  const Tensor probs(Shape{1, 2, 1, 3}, {0.8f, 0.3f, 0.5f, 0.2f, 0.7f, 0.5f});
  CalibrationHistogram h;
  h.add_map(probs, std::vector<std::uint8_t>{0, 0, 255});
  CHECK(h.total() == 2);
  CHECK(h.bins()[8].count == 1);  // 0.8f lies just above 0.8
  CHECK(h.bins()[8].correct == 1);
  CHECK(h.bins()[6].count == 1);  // 0.7 wrong
  CHECK(h.bins()[6].correct == 0);
}
