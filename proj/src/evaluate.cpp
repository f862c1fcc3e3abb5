// SPDX-License-Identifier: Apache-2.0

#include "sada/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <numeric>
#include <thread>

#include "json.hpp"

namespace sada {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json opt(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

ordered_json opt_list(const std::vector<std::optional<double>>& v) {
  ordered_json out = ordered_json::array();
  for (const auto& x : v) out.push_back(opt(x));
  return out;
}

struct Outcome {
  ImageRecord record;
  std::optional<ConfusionMatrix> cm;
  CalibrationHistogram hist;
};

Outcome run_one(TinySegNet& net, const SampleSource& source, std::size_t i, Method method, const AdaptConfig& cfg) {
  Outcome out;
  MemorySample sample;
  try {
    sample = source.load(i);
  } catch (const std::exception& e) {
    out.record.id = source.id(i);
    out.record.method = std::string(method_name(method));
    out.record.error = e.what();
    return out;
  }
  Prediction pred;
  try {
    out.record = evaluate_image(net, sample, method, cfg, &pred);
  } catch (const std::exception& e) {
    out.record.id = sample.id;
    out.record.method = std::string(method_name(method));
    out.record.error = e.what();
    return out;
  }
  out.cm.emplace(net.classes());
  out.cm->add(sample.mask.data, pred.mask);
  out.hist.add_map(pred.probs, sample.mask.data);
  return out;
}

}  // namespace

Method parse_method(std::string_view name) {
  if (name == "tbn") return Method::TBN;
  if (name == "pbn") return Method::PBN;
  if (name == "san") return Method::SaN;
  if (name == "tta") return Method::TTA;
  if (name == "adapt") return Method::Adapt;
  if (name == "entropy") return Method::Entropy;
  throw ContractError("unknown method '" + std::string(name) + "'");
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::TBN: return "tbn";
    case Method::PBN: return "pbn";
    case Method::SaN: return "san";
    case Method::TTA: return "tta";
    case Method::Adapt: return "adapt";
    case Method::Entropy: return "entropy";
  }
  return "?";
}

std::string ImageRecord::to_json() const {
  ordered_json j{{"id", id}, {"method", method}};
  if (error) {
    j["error"] = *error;
    return j.dump();
  }
  j["miou"] = opt(miou);
  j["per_class_iou"] = opt_list(per_class_iou);
  j["ece"] = opt(ece);
  j["coverage"] = coverage;
  j["losses"] = losses;
  j["wall_ms"] = wall_ms;
  j["guards"] = guards;
  return j.dump();
}

std::string Aggregate::to_json() const {
  ordered_json j{
      {"miou", opt(miou)},       {"per_class", opt_list(per_class)}, {"ece", opt(ece)},
      {"coverage", opt(coverage)}, {"n_images", n_images},           {"n_errors", n_errors},
      {"n_pixels", n_pixels},    {"method", method},                 {"config_hash", config_hash},
  };
  return j.dump();
}

SampleSource from_dataset(const Dataset& ds) {
  SampleSource s;
  s.count = ds.entries.size();
  s.id = [&ds](std::size_t i) { return ds.id(i); };
  s.load = [&ds](std::size_t i) { return MemorySample{ds.id(i), ds.image(i), ds.mask(i)}; };
  return s;
}

SampleSource from_memory(const std::vector<MemorySample>& samples) {
  SampleSource s;
  s.count = samples.size();
  s.id = [&samples](std::size_t i) { return samples[i].id; };
  s.load = [&samples](std::size_t i) { return samples[i]; };
  return s;
}

ImageRecord evaluate_image(TinySegNet& net, const MemorySample& sample, Method method, const AdaptConfig& cfg,
                           Prediction* prediction) {
  if (sample.image.rank() != 3 || sample.mask.shape.size() != 2 || sample.mask.shape[0] != sample.image.dim(1) ||
      sample.mask.shape[1] != sample.image.dim(2)) {
    throw ContractError(sample.id + ": image and mask shapes disagree");
  }
  ImageRecord rec;
  rec.id = sample.id;
  rec.method = std::string(method_name(method));
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t guards_before = guard_events();
  Prediction pred;
  switch (method) {
    case Method::TBN: pred = predict(net, sample.image, SanConfig::train_bn()); break;
    case Method::PBN: pred = predict(net, sample.image, SanConfig::pred_bn()); break;
    case Method::SaN: pred = predict(net, sample.image, SanConfig::san(cfg.alpha)); break;
    case Method::TTA: pred = tta_predict(net, sample.image, cfg); break;
    case Method::Adapt:
    case Method::Entropy: {
      AdaptResult r = method == Method::Adapt ? adapt_one(net, sample.image, cfg) : entropy_adapt(net, sample.image, cfg);
      pred = std::move(r.prediction);
      rec.coverage = std::move(r.report.coverage);
      rec.losses = std::move(r.report.losses);
      break;
    }
  }
  rec.guards = guard_events() - guards_before;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  ConfusionMatrix cm(net.classes());
  cm.add(sample.mask.data, pred.mask);
  const IoU iou = miou(cm);
  rec.miou = iou.mean;
  rec.per_class_iou = iou.per_class;
  CalibrationHistogram hist;
  hist.add_map(pred.probs, sample.mask.data);
  rec.ece = ece(hist);
  if (prediction) *prediction = std::move(pred);
  return rec;
}

EvalResult evaluate_set(const TinySegNet& net, const SampleSource& source, Method method, const AdaptConfig& cfg,
                        const std::string& config_hash, unsigned jobs) {
  cfg.validate();
  const std::size_t n = source.count;
  std::vector<Outcome> outcomes(n);
  const unsigned workers = static_cast<unsigned>(std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    TinySegNet local = net.clone();
    for (std::size_t i = next++; i < n; i = next++) outcomes[i] = run_one(local, source, i, method, cfg);
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return outcomes[a].record.id < outcomes[b].record.id; });

  EvalResult result;
  Aggregate& agg = result.aggregate;
  agg.method = std::string(method_name(method));
  agg.config_hash = config_hash;
  ConfusionMatrix cm(net.classes());
  CalibrationHistogram hist;
  double coverage_sum = 0.0;
  std::size_t coverage_n = 0;
  for (std::size_t i : order) {
    Outcome& o = outcomes[i];
    if (o.record.error) {
      ++agg.n_errors;
    } else {
      ++agg.n_images;
      cm.merge(*o.cm);
      hist.merge(o.hist);
      result.wall_ms += o.record.wall_ms;
      if (!o.record.coverage.empty()) {
        coverage_sum += o.record.coverage.front();
        ++coverage_n;
      }
    }
    result.records.push_back(std::move(o.record));
  }
  agg.n_pixels = cm.total();
  if (agg.n_images > 0) {
    const IoU iou = miou(cm);
    agg.miou = iou.mean;
    agg.per_class = iou.per_class;
    agg.ece = ece(hist);
  }
  if (coverage_n > 0) agg.coverage = coverage_sum / static_cast<double>(coverage_n);
  return result;
}

}  // namespace sada
