// SPDX-License-Identifier: Apache-2.0
//
// Procedural segmentation scenes with a controllable covariate shift.
//
// Scenes are 64×64 with five classes (background, disk, rectangle,
// triangle, stripe). Every draw comes from a stream keyed by
// (split, index, seed), so any sample can be regenerated on its own.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sada/sadt.hpp"
#include "sada/tensor.hpp"

namespace sada {

inline constexpr std::size_t kCanvas = 64;
inline constexpr std::size_t kSceneClasses = 5;

enum class Split { Source, Val, TargetA, TargetB, TargetC };

Split parse_split(std::string_view name);  // throws ContractError
std::string_view split_name(Split split);
bool is_target(std::string_view domain);

struct ShiftSpec {
  double strength = 0.0;  // s ∈ [0, 1]
  int hue_sign = 1;

  double brightness() const { return 0.25 * strength; }
  double contrast() const { return 1.0 + 0.6 * strength; }
  double hue_degrees() const { return 30.0 * strength * hue_sign; }
  double noise_sigma() const { return strength > 0.0 ? 0.02 + 0.06 * strength : 0.0; }
  int blur_radius() const;
};

ShiftSpec shift_for(Split split);

enum class ObjectKind { Disk = 1, Rectangle = 2, Triangle = 3, Stripe = 4 };

// Analytic object; coverage is tested at pixel centers (x + 0.5, y + 0.5).
struct SceneObject {
  ObjectKind kind = ObjectKind::Disk;
  double p[6] = {};  // disk: cx cy r | rect: x0 y0 x1 y1 | tri: 3 vertices | stripe: px py angle halfwidth
  float color[3] = {};

  std::uint8_t label() const { return static_cast<std::uint8_t>(kind); }
  bool covers(double x, double y) const;
};

struct Scene {
  Tensor image;      // 3×64×64 in [0, 1]
  ByteTensor mask;   // 64×64 labels
  std::vector<SceneObject> objects;  // painter's order
};

Scene render_scene(std::uint64_t key);

// Luminance-preserving hue rotation of a 3×H×W image (no clamping).
Tensor hue_rotate(const Tensor& image, double degrees);

// Applies the shift to a 3×H×W image: hue rotation, contrast about 0.5,
// brightness offset, box blur, Gaussian noise, clamp to [0, 1].
Tensor apply_shift(const Tensor& image, const ShiftSpec& shift, std::uint64_t noise_key);

Scene make_sample(std::string_view domain, const ShiftSpec& shift, std::size_t index, std::uint64_t seed);
Scene make_sample(Split split, std::size_t index, std::uint64_t seed);

struct ManifestEntry {
  std::string image;  // relative to the manifest directory
  std::string mask;
  std::string domain;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::filesystem::path root;  // manifest directory
  std::vector<ManifestEntry> entries;

  std::string id(std::size_t i) const;
  Tensor image(std::size_t i) const;  // 3×H×W
  ByteTensor mask(std::size_t i) const;
};

// Writes img_*.sadt, mask_*.sadt and manifest.jsonl under out; returns the
// manifest path.
std::filesystem::path generate(const std::filesystem::path& out, Split split, std::size_t n, std::uint64_t seed);
std::filesystem::path generate(const std::filesystem::path& out, std::string_view domain, const ShiftSpec& shift,
                               std::size_t n, std::uint64_t seed);

// Accepts a manifest file or a directory containing manifest.jsonl.
Dataset read_manifest(const std::filesystem::path& path);

// In-memory dataset (no files), used by tests and the acceptance harness.
struct MemorySample {
  std::string id;
  Tensor image;
  ByteTensor mask;
};
std::vector<MemorySample> make_samples(std::string_view domain, const ShiftSpec& shift, std::size_t n,
                                       std::uint64_t seed);
std::vector<MemorySample> make_samples(Split split, std::size_t n, std::uint64_t seed);

}  // namespace sada
