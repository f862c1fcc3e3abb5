// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <stdexcept>

#include "doctest.h"
#include "sada/config.hpp"
#include "sada/evaluate.hpp"

using namespace sada;

namespace {

AdaptConfig quick() {
  AdaptConfig cfg;
  cfg.views.scales = {0.5f, 1.0f};
  cfg.n_iters = 2;
  return cfg;
}

// Metric fields only; timing differs between runs.
void same_metrics(const ImageRecord& a, const ImageRecord& b) {
  CHECK(a.id == b.id);
  CHECK(a.miou == b.miou);
  CHECK(a.per_class_iou == b.per_class_iou);
  CHECK(a.ece == b.ece);
  CHECK(a.coverage == b.coverage);
  CHECK(a.losses == b.losses);
}

}  // namespace

TEST_CASE("checksum") {
  CHECK(crc32_hex("123456789") == "cbf43926");
  CHECK(crc32_hex("") == "00000000");
}

TEST_CASE("config values are normalized") {
  RunConfig c;
  CHECK(c.get("alpha") == "0.1");
  CHECK(c.get("groups") == "block4,block5,head");
  const auto& keys = RunConfig::keys();
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  const std::string h = c.hash();
  CHECK(h.size() == 8);

  c.set("alpha", "0.10");
  c.set("scales", "1,0.75,0.5,0.25,0.5");
  c.set("groups", "head,block5,block4");
  c.set("flip", "yes");
  CHECK(c.hash() == h);
  CHECK(c.canonical() == RunConfig().canonical());
  CHECK(crc32_hex(c.canonical()) == h);

  c.set("alpha", "0.3");
  CHECK(c.hash() != h);
  CHECK(c.canonical().find("alpha = 0.3\n") != std::string::npos);
}

TEST_CASE("config rejects bad input") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("alhpa", "0.1"), ConfigError);
  CHECK_THROWS_AS(c.set("alpha", "abc"), ConfigError);
  CHECK_THROWS_AS(c.set("iters", "2.5"), ConfigError);
  CHECK_THROWS_AS(c.set("seed", "-1"), ConfigError);
  CHECK_THROWS_AS(c.set("flip", "maybe"), ConfigError);
  CHECK_THROWS_AS(c.set("groups", "block9"), ConfigError);
  CHECK_THROWS_AS(c.set("scales", ""), ConfigError);
  CHECK_THROWS_AS(c.load_text("alpha 0.2\n"), ConfigError);
  c.set("eta", "0");
  CHECK_THROWS_AS(c.adapt(), ConfigError);
}

TEST_CASE("config text and typed views") {
  RunConfig c;
  c.load_text("# tuned on val\n\nalpha = 0.25\n  psi=0.6   # inline\niters = 4\nscales = 0.5, 1\n"
              "groups = head\nloss_on_all_views = on\nepochs = 3\ncrop_size = 16\nseed = 9\n");
  const AdaptConfig a = c.adapt();
  CHECK(a.alpha == 0.25f);
  CHECK(a.psi == 0.6f);
  CHECK(a.n_iters == 4);
  CHECK(a.views.scales == std::vector<float>{0.5f, 1.0f});
  CHECK(a.adapt_groups == std::set<std::string>{"head"});
  CHECK(a.loss_on_all_views);
  const TrainRecipe r = c.recipe();
  CHECK(r.epochs == 3);
  CHECK(r.crop_size == 16);
  CHECK(r.seed == 9);
  CHECK(c.seed() == 9);
}

TEST_CASE("methods") {
  for (auto m : {Method::TBN, Method::PBN, Method::SaN, Method::TTA, Method::Adapt, Method::Entropy})
    CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("bn"), ContractError);
}

TEST_CASE("set evaluation") {
  const TinySegNet net(5, 1);
  const auto samples = make_samples(Split::TargetB, 5, 0);
  const AdaptConfig cfg = quick();

  const EvalResult ordered = evaluate_set(net, from_memory(samples), Method::Adapt, cfg, "abc", 1);
  REQUIRE(ordered.records.size() == 5);
  CHECK(ordered.aggregate.n_images == 5);
  CHECK(ordered.aggregate.n_pixels == 5 * kCanvas * kCanvas);
  CHECK(ordered.aggregate.config_hash == "abc");
  CHECK(ordered.aggregate.coverage.has_value());
  CHECK(ordered.aggregate.to_json().find("wall") == std::string::npos);
  for (std::size_t i = 1; i < 5; ++i) CHECK(ordered.records[i - 1].id < ordered.records[i].id);

  SUBCASE("a sample scores the same alone and inside a set") {
    TinySegNet local = net.clone();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const ImageRecord alone = evaluate_image(local, samples[i], Method::Adapt, cfg);
      const auto it = std::find_if(ordered.records.begin(), ordered.records.end(),
                                   [&](const ImageRecord& r) { return r.id == samples[i].id; });
      REQUIRE(it != ordered.records.end());
      same_metrics(alone, *it);
    }
  }
  SUBCASE("order and worker count do not matter") {
    std::vector<MemorySample> shuffled{samples[3], samples[0], samples[4], samples[2], samples[1]};
    const EvalResult s = evaluate_set(net, from_memory(shuffled), Method::Adapt, cfg, "abc", 2);
    CHECK(s.aggregate.to_json() == ordered.aggregate.to_json());
    for (std::size_t i = 0; i < 5; ++i) same_metrics(s.records[i], ordered.records[i]);
  }
  SUBCASE("unreadable samples become error records") {
    SampleSource src = from_memory(samples);
    auto inner = src.load;
    src.load = [inner](std::size_t i) -> MemorySample {
      if (i == 2) throw IoError("cannot read sample");
      return inner(i);
    };
    const EvalResult e = evaluate_set(net, src, Method::SaN, cfg, "abc", 1);
    CHECK(e.aggregate.n_errors == 1);
    CHECK(e.aggregate.n_images == 4);
    CHECK(e.records.size() == 5);
    CHECK(e.records[2].error.has_value());
    CHECK(e.records[2].to_json().find("miou") == std::string::npos);

    std::vector<MemorySample> rest{samples[0], samples[1], samples[3], samples[4]};
    const EvalResult r = evaluate_set(net, from_memory(rest), Method::SaN, cfg, "abc", 1);
    CHECK(r.aggregate.miou == e.aggregate.miou);
    CHECK(r.aggregate.ece == e.aggregate.ece);
  }
  SUBCASE("mismatched mask shape is an error record") {
    std::vector<MemorySample> bad{samples[0]};
    bad[0].mask.shape = {32, 128};
    const EvalResult e = evaluate_set(net, from_memory(bad), Method::TBN, cfg, "abc", 1);
    CHECK(e.aggregate.n_errors == 1);
    CHECK(!e.aggregate.miou);
  }
}

TEST_CASE("test-time BN equals SaN at alpha zero") {
  const TinySegNet net(5, 2);
  const auto samples = make_samples(Split::TargetA, 3, 0);
  AdaptConfig cfg;
  cfg.alpha = 0.0f;
  const EvalResult tbn = evaluate_set(net, from_memory(samples), Method::TBN, cfg, "x", 1);
  const EvalResult san = evaluate_set(net, from_memory(samples), Method::SaN, cfg, "x", 1);
  CHECK(tbn.aggregate.miou == san.aggregate.miou);
  CHECK(tbn.aggregate.per_class == san.aggregate.per_class);
  CHECK(tbn.aggregate.ece == san.aggregate.ece);
}

TEST_CASE("empty sets have undefined metrics") {
  const TinySegNet net(5, 3);
  const std::vector<MemorySample> none;
  const EvalResult r = evaluate_set(net, from_memory(none), Method::SaN, AdaptConfig{}, "x", 4);
  CHECK(r.records.empty());
  CHECK(!r.aggregate.miou);
  CHECK(!r.aggregate.ece);
  CHECK(r.aggregate.n_images == 0);
  CHECK(r.aggregate.to_json().rfind("{\"miou\":null,", 0) == 0);
}
