// SPDX-License-Identifier: Apache-2.0
//
// Dataset-level evaluation of one inference method. Each image is handled
// by an independent session (adaptation resets the network), so records do
// not depend on order or on which worker ran them. Pooled statistics are
// merged in sorted-id order.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sada/adapt.hpp"
#include "sada/metrics.hpp"
#include "sada/synth.hpp"

namespace sada {

enum class Method { TBN, PBN, SaN, TTA, Adapt, Entropy };

Method parse_method(std::string_view name);  // throws ContractError
std::string_view method_name(Method m);

struct ImageRecord {
  std::string id;
  std::string method;
  std::optional<double> miou;
  std::vector<std::optional<double>> per_class_iou;
  std::optional<double> ece;
  std::vector<double> coverage;
  std::vector<double> losses;
  double wall_ms = 0.0;
  std::uint64_t guards = 0;
  std::optional<std::string> error;

  std::string to_json() const;  // one line, no trailing newline
};

struct Aggregate {
  std::string method;
  std::string config_hash;
  std::optional<double> miou;
  std::vector<std::optional<double>> per_class;
  std::optional<double> ece;
  std::optional<double> coverage;  // mean first-iteration coverage (adapt only)
  std::size_t n_images = 0;        // successfully evaluated
  std::size_t n_errors = 0;
  std::uint64_t n_pixels = 0;

  std::string to_json() const;  // deterministic: no timing fields
};

struct EvalResult {
  std::vector<ImageRecord> records;  // sorted by id
  Aggregate aggregate;
  double wall_ms = 0.0;  // sum over images
};

// Lazily loaded samples; load may throw on an unreadable file.
struct SampleSource {
  std::size_t count = 0;
  std::function<std::string(std::size_t)> id;
  std::function<MemorySample(std::size_t)> load;
};

SampleSource from_dataset(const Dataset& ds);
SampleSource from_memory(const std::vector<MemorySample>& samples);

// One image through one method; used by evaluate_set and by tests that
// need isolated records.
ImageRecord evaluate_image(TinySegNet& net, const MemorySample& sample, Method method, const AdaptConfig& cfg,
                           Prediction* prediction = nullptr);

EvalResult evaluate_set(const TinySegNet& net, const SampleSource& source, Method method, const AdaptConfig& cfg,
                        const std::string& config_hash, unsigned jobs = 1);

}  // namespace sada
