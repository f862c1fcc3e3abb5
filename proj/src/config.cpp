// SPDX-License-Identifier: Apache-2.0

#include "sada/config.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

#include "sada/sadt.hpp"

namespace sada {

namespace {

enum class Kind { Float, Int, Uint, Bool, FloatList, GroupSet };

struct KeySpec {
  const char* name;
  Kind kind;
  const char* fallback;
};

// Defaults mirror AdaptConfig and TrainRecipe.
constexpr KeySpec kKeys[] = {
    {"alpha", Kind::Float, "0.1"},
    {"augment", Kind::Bool, "true"},
    {"base_lr", Kind::Float, "0.05"},
    {"batch_size", Kind::Int, "8"},
    {"blur_prob", Kind::Float, "0.5"},
    {"blur_sigma_hi", Kind::Float, "2"},
    {"blur_sigma_lo", Kind::Float, "0.1"},
    {"crop_max_area", Kind::Float, "1"},
    {"crop_min_area", Kind::Float, "0.08"},
    {"crop_size", Kind::Int, "24"},
    {"epochs", Kind::Int, "50"},
    {"eta", Kind::Float, "0.05"},
    {"flip", Kind::Bool, "true"},
    {"flip_prob", Kind::Float, "0.5"},
    {"freeze_pseudo_labels", Kind::Bool, "false"},
    {"gray", Kind::Bool, "true"},
    {"gray_prob", Kind::Float, "0.1"},
    {"groups", Kind::GroupSet, "block4,block5,head"},
    {"hue_hi", Kind::Float, "1.1"},
    {"hue_lo", Kind::Float, "0.9"},
    {"iters", Kind::Int, "10"},
    {"jitter_hi", Kind::Float, "1.3"},
    {"jitter_lo", Kind::Float, "0.7"},
    {"jitter_prob", Kind::Float, "0.5"},
    {"loss_on_all_views", Kind::Bool, "false"},
    {"momentum", Kind::Float, "0.9"},
    {"poly_power", Kind::Float, "0.9"},
    {"psi", Kind::Float, "0.7"},
    {"scales", Kind::FloatList, "0.25,0.5,0.75,1"},
    {"seed", Kind::Uint, "0"},
    {"weight_decay", Kind::Float, "0.0001"},
};

const KeySpec& spec_of(const std::string& key) {
  for (const auto& k : kKeys) {
    if (key == k.name) return k;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

float parse_float(const std::string& key, const std::string& text) {
  float v = 0.0f;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

std::string format_float(float v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string normalize(const KeySpec& k, const std::string& raw) {
  const std::string text = trim(raw);
  const std::string key = k.name;
  switch (k.kind) {
    case Kind::Float:
      return format_float(parse_float(key, text));
    case Kind::Int:
    case Kind::Uint: {
      long long v = 0;
      const auto* end = text.data() + text.size();
      auto [ptr, ec] = std::from_chars(text.data(), end, v);
      if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + text + "'");
      if (k.kind == Kind::Uint && v < 0) throw ConfigError(key + ": must be non-negative");
      return std::to_string(v);
    }
    case Kind::Bool:
      if (text == "true" || text == "1" || text == "yes" || text == "on") return "true";
      if (text == "false" || text == "0" || text == "no" || text == "off") return "false";
      throw ConfigError(key + ": expected a boolean, got '" + text + "'");
    case Kind::FloatList: {
      std::vector<float> vals;
      for (const auto& item : split_list(text)) vals.push_back(parse_float(key, item));
      if (vals.empty()) throw ConfigError(key + ": empty list");
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      std::string out;
      for (float v : vals) out += (out.empty() ? "" : ",") + format_float(v);
      return out;
    }
    case Kind::GroupSet: {
      const auto& known = TinySegNet::group_names();
      std::set<std::string> names;
      for (const auto& item : split_list(text)) {
        if (std::find(known.begin(), known.end(), item) == known.end()) {
          throw ConfigError(key + ": unknown layer group '" + item + "'");
        }
        names.insert(item);
      }
      std::string out;
      for (const auto& n : names) out += (out.empty() ? "" : ",") + n;
      return out;
    }
  }
  return text;
}

bool as_bool(const std::string& v) { return v == "true"; }

}  // namespace

std::string crc32_hex(const std::string& text) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

RunConfig::RunConfig() {
  for (const auto& k : kKeys) values_[k.name] = normalize(k, k.fallback);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string name = trim(key);
  values_[name] = normalize(spec_of(name), value);
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  for (std::size_t line_no = 1; std::getline(ss, line); ++line_no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  load_text(std::string(bytes.begin(), bytes.end()), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  spec_of(key);
  return values_.at(key);
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : kKeys) out.emplace_back(k.name);
    return out;
  }();
  return names;
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const { return crc32_hex(canonical()); }

AdaptConfig RunConfig::adapt() const {
  AdaptConfig cfg;
  cfg.alpha = std::stof(get("alpha"));
  cfg.psi = std::stof(get("psi"));
  cfg.eta = std::stof(get("eta"));
  cfg.n_iters = std::stoi(get("iters"));
  cfg.views.scales.clear();
  for (const auto& s : split_list(get("scales"))) cfg.views.scales.push_back(parse_float("scales", s));
  cfg.views.use_flip = as_bool(get("flip"));
  cfg.views.use_gray = as_bool(get("gray"));
  cfg.adapt_groups.clear();
  for (const auto& g : split_list(get("groups"))) cfg.adapt_groups.insert(g);
  cfg.loss_on_all_views = as_bool(get("loss_on_all_views"));
  cfg.freeze_pseudo_labels = as_bool(get("freeze_pseudo_labels"));
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

TrainRecipe RunConfig::recipe() const {
  TrainRecipe r;
  r.epochs = std::stoi(get("epochs"));
  r.batch_size = std::stoi(get("batch_size"));
  r.base_lr = std::stof(get("base_lr"));
  r.momentum = std::stof(get("momentum"));
  r.weight_decay = std::stof(get("weight_decay"));
  r.poly_power = std::stof(get("poly_power"));
  r.seed = seed();
  r.augment = as_bool(get("augment"));
  r.crop_min_area = std::stof(get("crop_min_area"));
  r.crop_max_area = std::stof(get("crop_max_area"));
  r.crop_size = std::stoi(get("crop_size"));
  r.flip_prob = std::stof(get("flip_prob"));
  r.jitter_prob = std::stof(get("jitter_prob"));
  r.jitter_lo = std::stof(get("jitter_lo"));
  r.jitter_hi = std::stof(get("jitter_hi"));
  r.hue_lo = std::stof(get("hue_lo"));
  r.hue_hi = std::stof(get("hue_hi"));
  r.blur_prob = std::stof(get("blur_prob"));
  r.blur_sigma_lo = std::stof(get("blur_sigma_lo"));
  r.blur_sigma_hi = std::stof(get("blur_sigma_hi"));
  r.gray_prob = std::stof(get("gray_prob"));
  return r;
}

std::uint64_t RunConfig::seed() const { return std::stoull(get("seed")); }

}  // namespace sada
