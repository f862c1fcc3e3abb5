// SPDX-License-Identifier: Apache-2.0
//
// TinySegNet: a small fully-convolutional segmentation network.
//
//   stem    conv3×3  3→16        + BN + ReLU
//   block2  conv3×3 16→32  /2    + BN + ReLU
//   block3  conv3×3 32→32        + BN + ReLU
//   block4  conv3×3 32→64  /2    + BN + ReLU
//   block5  conv3×3 64→64        + BN + ReLU
//   head    conv1×1 64→C, bilinear upsample ×4
//
// Checkpoints use the SACK container:
//   "SACK" | version u8 = 1 | u32 entry count |
//   entries (u16 name length, UTF-8 name, SADT tensor) | u32 CRC32

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sada/norm.hpp"
#include "sada/tensor.hpp"

namespace sada {

class ArchitectureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Conv2dLayer {
  Tensor weight;  // O×I×kH×kW
  Tensor bias;    // O
  int stride = 1;
  int pad = 0;
};

struct LayerGroup {
  std::string name;
  Conv2dLayer conv;
  std::optional<BatchNormLayer> bn;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Bitwise copy of every parameter and running statistic.
struct ParamSnapshot {
  std::string arch_tag;
  std::vector<std::vector<float>> tensors;
  std::vector<std::uint64_t> counts;
};

class TinySegNet {
 public:
  static constexpr std::size_t kDefaultClasses = 5;
  static constexpr std::size_t kStride = 4;

  explicit TinySegNet(std::size_t classes = kDefaultClasses, std::uint64_t seed = 0);

  TinySegNet(const TinySegNet&) = delete;
  TinySegNet& operator=(const TinySegNet&) = delete;
  TinySegNet(TinySegNet&&) = default;
  TinySegNet& operator=(TinySegNet&&) = default;

  // Deep copy with fresh storage.
  TinySegNet clone() const;

  std::size_t classes() const { return classes_; }
  std::string arch_tag() const;

  // Inference-time routing of every normalization layer.
  void set_norm_mode(const SanConfig& cfg);
  const SanConfig& norm_mode() const { return norm_; }

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  // N×3×H×W → N×C×H×W logits. Training mode uses batch statistics and
  // updates running statistics; otherwise the configured norm mode applies.
  Tensor forward(const Tensor& x);
  Tensor forward(const Tensor& x, const SanConfig& norm);

  std::vector<LayerGroup>& groups() { return groups_; }
  const std::vector<LayerGroup>& groups() const { return groups_; }
  static const std::vector<std::string>& group_names();

  std::vector<NamedTensor> named_parameters() const;
  // Parameters (conv weight/bias, BN gamma/beta) of the named groups, in
  // network order. Throws ContractError on an unknown group name.
  std::vector<Tensor> select_params(const std::set<std::string>& groups) const;
  // Marks exactly the selected groups' parameters as requiring grad.
  void set_trainable(const std::set<std::string>& groups);
  void zero_grad();

  ParamSnapshot snapshot() const;
  void restore(const ParamSnapshot& snap);

 private:
  Tensor forward_impl(const Tensor& x, const SanConfig* norm);

  std::size_t classes_;
  std::vector<LayerGroup> groups_;
  SanConfig norm_;
  bool training_ = false;
};

void set_norm_mode(TinySegNet& net, const SanConfig& cfg);

// Writes net plus free-form metadata (recipe JSON text).
void save_checkpoint(const std::filesystem::path& path, const TinySegNet& net, const std::string& meta_json);
std::vector<std::uint8_t> encode_checkpoint(const TinySegNet& net, const std::string& meta_json);

struct CheckpointInfo {
  std::string arch_tag;
  std::string meta_json;
};

// Loads into an existing net. Throws FormatError on corruption and
// ArchitectureError when the stored architecture differs from net's; net is
// untouched on any failure.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, TinySegNet& net);
CheckpointInfo decode_checkpoint(std::span<const std::uint8_t> bytes, TinySegNet& net);

// Builds a net with the class count recorded in the checkpoint.
TinySegNet load_model(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace sada
