// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: every adaptation and training knob under one flat key
// space. Files hold `key = value` lines with `#` comments; later sets
// override earlier ones. Values are normalized on entry, so the canonical
// serialization (sorted `key = value` lines) and its CRC32 are stable.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sada/adapt.hpp"
#include "sada/train.hpp"

namespace sada {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RunConfig {
 public:
  RunConfig();

  // Throws ConfigError on an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "<text>");

  const std::string& get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  std::string canonical() const;
  std::string hash() const;  // 8 lowercase hex digits

  AdaptConfig adapt() const;
  TrainRecipe recipe() const;
  std::uint64_t seed() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string crc32_hex(const std::string& text);

}  // namespace sada
