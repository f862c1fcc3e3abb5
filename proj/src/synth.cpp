// SPDX-License-Identifier: Apache-2.0

#include "sada/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "sada/rng.hpp"

namespace sada {

namespace {

constexpr float kBaseColor[kSceneClasses][3] = {
    {0.50f, 0.50f, 0.50f},  // background
    {0.75f, 0.15f, 0.15f},  // disk
    {0.45f, 0.90f, 0.45f},  // rectangle
    {0.15f, 0.20f, 0.70f},  // triangle
    {0.95f, 0.85f, 0.25f},  // stripe
};

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

SceneObject random_object(Rng& rng) {
  SceneObject o;
  o.kind = static_cast<ObjectKind>(rng.uniform_int(1, 4));
  const double n = static_cast<double>(kCanvas);
  switch (o.kind) {
    case ObjectKind::Disk:
      o.p[0] = rng.uniform(6.0, n - 6.0);
      o.p[1] = rng.uniform(6.0, n - 6.0);
      o.p[2] = rng.uniform(5.0, 12.0);
      break;
    case ObjectKind::Rectangle: {
      const double w = rng.uniform(8.0, 22.0), h = rng.uniform(8.0, 22.0);
      o.p[0] = rng.uniform(0.0, n - w);
      o.p[1] = rng.uniform(0.0, n - h);
      o.p[2] = o.p[0] + w;
      o.p[3] = o.p[1] + h;
      break;
    }
    case ObjectKind::Triangle: {
      const double cx = rng.uniform(10.0, n - 10.0), cy = rng.uniform(10.0, n - 10.0);
      const double r = rng.uniform(8.0, 14.0), rot = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (int k = 0; k < 3; ++k) {
        const double a = rot + k * 2.0 * std::numbers::pi / 3.0 + rng.uniform(-0.3, 0.3);
        o.p[2 * k] = cx + r * std::cos(a);
        o.p[2 * k + 1] = cy + r * std::sin(a);
      }
      break;
    }
    case ObjectKind::Stripe:
      o.p[0] = rng.uniform(8.0, n - 8.0);
      o.p[1] = rng.uniform(8.0, n - 8.0);
      o.p[2] = rng.uniform(0.0, std::numbers::pi);
      o.p[3] = rng.uniform(2.0, 3.5);
      break;
  }
  const auto* base = kBaseColor[static_cast<int>(o.kind)];
  for (int c = 0; c < 3; ++c) o.color[c] = std::clamp(base[c] + static_cast<float>(rng.uniform(-0.1, 0.1)), 0.0f, 1.0f);
  return o;
}

Tensor box_blur(const Tensor& img, int radius) {
  if (radius <= 0) return img.clone();
  const std::size_t h = img.dim(1), w = img.dim(2);
  Tensor tmp(img.shape()), out(img.shape());
  const auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };
  const float inv = 1.0f / static_cast<float>(2 * radius + 1);
  for (std::size_t c = 0; c < 3; ++c) {
    const float* s = img.data().data() + c * h * w;
    float* t = tmp.data().data() + c * h * w;
    float* o = out.data().data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (long k = -radius; k <= radius; ++k) acc += s[y * w + clampi(static_cast<long>(x) + k, w)];
        t[y * w + x] = acc * inv;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (long k = -radius; k <= radius; ++k) acc += t[clampi(static_cast<long>(y) + k, h) * w + x];
        o[y * w + x] = acc * inv;
      }
    }
  }
  return out;
}

std::string index_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu.sadt", prefix, i);
  return buf;
}

}  // namespace

Split parse_split(std::string_view name) {
  if (name == "source") return Split::Source;
  if (name == "val") return Split::Val;
  if (name == "targetA") return Split::TargetA;
  if (name == "targetB") return Split::TargetB;
  if (name == "targetC") return Split::TargetC;
  throw ContractError("unknown split '" + std::string(name) + "'");
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Source: return "source";
    case Split::Val: return "val";
    case Split::TargetA: return "targetA";
    case Split::TargetB: return "targetB";
    case Split::TargetC: return "targetC";
  }
  return "?";
}

bool is_target(std::string_view domain) { return domain.rfind("target", 0) == 0; }

int ShiftSpec::blur_radius() const { return static_cast<int>(std::lround(2.0 * strength)); }

ShiftSpec shift_for(Split split) {
  switch (split) {
    case Split::Source: return {0.0, 1};
    case Split::Val: return {0.35, 1};
    case Split::TargetA: return {0.5, 1};
    case Split::TargetB: return {0.7, -1};
    case Split::TargetC: return {0.9, 1};
  }
  return {};
}

bool SceneObject::covers(double x, double y) const {
  switch (kind) {
    case ObjectKind::Disk: {
      const double dx = x - p[0], dy = y - p[1];
      return dx * dx + dy * dy <= p[2] * p[2];
    }
    case ObjectKind::Rectangle:
      return x >= p[0] && x <= p[2] && y >= p[1] && y <= p[3];
    case ObjectKind::Triangle: {
      const double e0 = edge(p[0], p[1], p[2], p[3], x, y);
      const double e1 = edge(p[2], p[3], p[4], p[5], x, y);
      const double e2 = edge(p[4], p[5], p[0], p[1], x, y);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
    case ObjectKind::Stripe: {
      // Distance from the line through (p0, p1) with direction angle p2.
      const double d = -(x - p[0]) * std::sin(p[2]) + (y - p[1]) * std::cos(p[2]);
      return std::fabs(d) <= p[3];
    }
  }
  return false;
}

Scene render_scene(std::uint64_t key) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(mix_key({key, attempt}));
    Scene scene;
    const std::size_t n = kCanvas;
    scene.image = Tensor(Shape{3, n, n});
    scene.mask = ByteTensor{Shape{n, n}, std::vector<std::uint8_t>(n * n, 0)};

    float bg[3];
    for (int c = 0; c < 3; ++c) bg[c] = kBaseColor[0][c] + static_cast<float>(rng.uniform(-0.06, 0.06));
    const double gx = rng.uniform(-0.05, 0.05), gy = rng.uniform(-0.05, 0.05);
    const long count = rng.uniform_int(2, 5);
    for (long i = 0; i < count; ++i) scene.objects.push_back(random_object(rng));

    auto px = scene.image.data();
    bool any = false;
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double cx = static_cast<double>(x) + 0.5, cy = static_cast<double>(y) + 0.5;
        const SceneObject* top = nullptr;
        for (const auto& o : scene.objects) {
          if (o.covers(cx, cy)) top = &o;
        }
        float col[3];
        if (top) {
          std::copy(top->color, top->color + 3, col);
          scene.mask.data[y * n + x] = top->label();
          any = true;
        } else {
          const auto shade = static_cast<float>(gx * (cx / n - 0.5) * 2.0 + gy * (cy / n - 0.5) * 2.0);
          for (int c = 0; c < 3; ++c) col[c] = bg[c] + shade;
        }
        for (int c = 0; c < 3; ++c) {
          const float v = col[c] + static_cast<float>(rng.normal() * 0.015);
          px[(static_cast<std::size_t>(c) * n + y) * n + x] = std::clamp(v, 0.0f, 1.0f);
        }
      }
    }
    if (any) return scene;
  }
}

Tensor hue_rotate(const Tensor& image, double degrees) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("hue_rotate expects 3×H×W");
  const std::size_t plane = image.dim(1) * image.dim(2);
  // SVG feColorMatrix hueRotate coefficients.
  const double a = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(a), sn = std::sin(a);
  const double m[3][3] = {
      {0.213 + cs * 0.787 - sn * 0.213, 0.715 - cs * 0.715 - sn * 0.715, 0.072 - cs * 0.072 + sn * 0.928},
      {0.213 - cs * 0.213 + sn * 0.143, 0.715 + cs * 0.285 + sn * 0.140, 0.072 - cs * 0.072 - sn * 0.283},
      {0.213 - cs * 0.213 - sn * 0.787, 0.715 - cs * 0.715 + sn * 0.715, 0.072 + cs * 0.928 + sn * 0.072},
  };
  Tensor out(image.shape());
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < plane; ++i) {
    const double rgb[3] = {src[i], src[plane + i], src[2 * plane + i]};
    for (std::size_t c = 0; c < 3; ++c) {
      dst[c * plane + i] = static_cast<float>(m[c][0] * rgb[0] + m[c][1] * rgb[1] + m[c][2] * rgb[2]);
    }
  }
  return out;
}

Tensor apply_shift(const Tensor& image, const ShiftSpec& shift, std::uint64_t noise_key) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("apply_shift expects 3×H×W");
  if (!(shift.strength >= 0.0 && shift.strength <= 1.0)) throw ContractError("shift strength must lie in [0, 1]");
  if (shift.strength == 0.0) return image.clone();
  const double gain = shift.contrast(), offset = shift.brightness();
  Tensor out = hue_rotate(image, shift.hue_degrees());
  for (auto& v : out.data()) v = static_cast<float>((v - 0.5) * gain + 0.5 + offset);
  out = box_blur(out, shift.blur_radius());
  Rng rng(noise_key);
  const double sigma = shift.noise_sigma();
  for (auto& v : out.data()) v = std::clamp(static_cast<float>(v + rng.normal() * sigma), 0.0f, 1.0f);
  return out;
}

Scene make_sample(std::string_view domain, const ShiftSpec& shift, std::size_t index, std::uint64_t seed) {
  const std::uint64_t dom = hash_string(domain);
  Scene scene = render_scene(mix_key({hash_string("scene"), dom, index, seed}));
  scene.image = apply_shift(scene.image, shift, mix_key({hash_string("noise"), dom, index, seed}));
  return scene;
}

Scene make_sample(Split split, std::size_t index, std::uint64_t seed) {
  return make_sample(split_name(split), shift_for(split), index, seed);
}

std::vector<MemorySample> make_samples(std::string_view domain, const ShiftSpec& shift, std::size_t n,
                                       std::uint64_t seed) {
  std::vector<MemorySample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Scene s = make_sample(domain, shift, i, seed);
    out.push_back({std::string(domain) + "_" + std::to_string(i), s.image, std::move(s.mask)});
  }
  return out;
}

std::vector<MemorySample> make_samples(Split split, std::size_t n, std::uint64_t seed) {
  return make_samples(split_name(split), shift_for(split), n, seed);
}

std::filesystem::path generate(const std::filesystem::path& out, std::string_view domain, const ShiftSpec& shift,
                               std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ContractError("generate needs n >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  std::string manifest;
  for (std::size_t i = 0; i < n; ++i) {
    Scene s = make_sample(domain, shift, i, seed);
    const std::string img = index_name("img", i), mask = index_name("mask", i);
    write_sadt(out / img, s.image);
    write_sadt(out / mask, s.mask);
    nlohmann::ordered_json line{{"image", img}, {"mask", mask}, {"domain", domain}, {"seed", seed}};
    manifest += line.dump() + "\n";
  }
  const auto path = out / "manifest.jsonl";
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()));
  return path;
}

std::filesystem::path generate(const std::filesystem::path& out, Split split, std::size_t n, std::uint64_t seed) {
  return generate(out, split_name(split), shift_for(split), n, seed);
}

Dataset read_manifest(const std::filesystem::path& path) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(file)) file /= "manifest.jsonl";
  const auto bytes = read_file_bytes(file);
  Dataset ds;
  ds.root = file.parent_path();
  std::string text(bytes.begin(), bytes.end());
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ds.entries.push_back({j.at("image").get<std::string>(), j.at("mask").get<std::string>(),
                            j.at("domain").get<std::string>(), j.at("seed").get<std::uint64_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

std::string Dataset::id(std::size_t i) const {
  return std::filesystem::path(entries.at(i).image).stem().string();
}

Tensor Dataset::image(std::size_t i) const { return read_sadt_f32(root / entries.at(i).image); }

ByteTensor Dataset::mask(std::size_t i) const { return read_sadt_u8(root / entries.at(i).mask); }

}  // namespace sada
