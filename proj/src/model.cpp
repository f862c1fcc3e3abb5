// SPDX-License-Identifier: Apache-2.0

#include "sada/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "sada/rng.hpp"
#include "sada/sadt.hpp"

namespace sada {

namespace {

constexpr char kArchName[] = "tinysegnet/v1/c";
constexpr std::uint8_t kSackVersion = 0x01;

struct GroupSpec {
  const char* name;
  std::size_t in, out, kernel;
  int stride;
  bool bn;
};

std::vector<GroupSpec> architecture(std::size_t classes) {
  return {
      {"stem", 3, 16, 3, 1, true},    {"block2", 16, 32, 3, 2, true}, {"block3", 32, 32, 3, 1, true},
      {"block4", 32, 64, 3, 2, true}, {"block5", 64, 64, 3, 1, true}, {"head", 64, classes, 1, 1, false},
  };
}

// He fan-in initialization.
Tensor he_init(Rng& rng, std::size_t out, std::size_t in, std::size_t k) {
  Tensor w(Shape{out, in, k, k});
  const double sd = std::sqrt(2.0 / static_cast<double>(in * k * k));
  for (auto& v : w.data()) v = static_cast<float>(rng.normal() * sd);
  return w;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes[offset + b]) << (8 * b);
  return v;
}

ByteTensor text_tensor(const std::string& s) {
  return ByteTensor{Shape{std::max<std::size_t>(s.size(), 1)},
                    s.empty() ? std::vector<std::uint8_t>{0} : std::vector<std::uint8_t>(s.begin(), s.end())};
}

std::string tensor_text(const ByteTensor& t) {
  if (t.data.size() == 1 && t.data[0] == 0) return {};
  return std::string(t.data.begin(), t.data.end());
}

// Every tensor that makes up the network state, in a fixed order.
std::vector<NamedTensor> state_tensors(const TinySegNet& net) {
  std::vector<NamedTensor> out = net.named_parameters();
  for (const auto& g : net.groups()) {
    if (!g.bn) continue;
    const auto& r = g.bn->running;
    out.push_back({g.name + ".bn.running_mean", Tensor(Shape{r.mean.size()}, r.mean)});
    out.push_back({g.name + ".bn.running_var", Tensor(Shape{r.var.size()}, r.var)});
  }
  return out;
}

}  // namespace

TinySegNet::TinySegNet(std::size_t classes, std::uint64_t seed) : classes_(classes) {
  if (classes == 0 || classes >= kIgnoreLabel) throw ContractError("class count must lie in [1, 254]");
  Rng rng(mix_key({hash_string("tinysegnet-init"), seed}));
  for (const auto& spec : architecture(classes)) {
    LayerGroup g;
    g.name = spec.name;
    g.conv.weight = he_init(rng, spec.out, spec.in, spec.kernel);
    g.conv.bias = Tensor::zeros(Shape{spec.out});
    g.conv.stride = spec.stride;
    g.conv.pad = static_cast<int>(spec.kernel / 2);
    if (spec.bn) g.bn.emplace(spec.out);
    groups_.push_back(std::move(g));
  }
}

TinySegNet TinySegNet::clone() const {
  TinySegNet copy(classes_);
  copy.restore(snapshot());
  copy.norm_ = norm_;
  copy.training_ = training_;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    const auto& src = groups_[i];
    auto& dst = copy.groups_[i];
    dst.conv.weight.set_requires_grad(src.conv.weight.requires_grad());
    dst.conv.bias.set_requires_grad(src.conv.bias.requires_grad());
    if (src.bn) {
      dst.bn->gamma.set_requires_grad(src.bn->gamma.requires_grad());
      dst.bn->beta.set_requires_grad(src.bn->beta.requires_grad());
      dst.bn->momentum = src.bn->momentum;
      dst.bn->eps = src.bn->eps;
    }
  }
  return copy;
}

std::string TinySegNet::arch_tag() const { return kArchName + std::to_string(classes_); }

const std::vector<std::string>& TinySegNet::group_names() {
  static const std::vector<std::string> names{"stem", "block2", "block3", "block4", "block5", "head"};
  return names;
}

void TinySegNet::set_norm_mode(const SanConfig& cfg) {
  (void)cfg.effective_alpha();  // validates α
  norm_ = cfg;
}

void set_norm_mode(TinySegNet& net, const SanConfig& cfg) { net.set_norm_mode(cfg); }

Tensor TinySegNet::forward(const Tensor& x) { return forward_impl(x, &norm_); }

Tensor TinySegNet::forward(const Tensor& x, const SanConfig& norm) {
  (void)norm.effective_alpha();
  return forward_impl(x, &norm);
}

Tensor TinySegNet::forward_impl(const Tensor& x, const SanConfig* norm) {
  if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("TinySegNet expects N×3×H×W, got " + to_string(x.shape()));
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h % kStride != 0 || w % kStride != 0) {
    throw ShapeError("TinySegNet input extents must be multiples of 4, got " + to_string(x.shape()));
  }
  Tensor t = x;
  for (auto& g : groups_) {
    t = conv2d(t, g.conv.weight, g.conv.bias, g.conv.stride, g.conv.pad);
    if (!g.bn) continue;
    t = training_ ? bn_train_forward(*g.bn, t) : san_forward(*g.bn, *norm, t);
    t = relu(t);
  }
  return bilinear_resize(t, h, w);
}

std::vector<NamedTensor> TinySegNet::named_parameters() const {
  std::vector<NamedTensor> out;
  for (const auto& g : groups_) {
    out.push_back({g.name + ".conv.weight", g.conv.weight});
    out.push_back({g.name + ".conv.bias", g.conv.bias});
    if (g.bn) {
      out.push_back({g.name + ".bn.gamma", g.bn->gamma});
      out.push_back({g.name + ".bn.beta", g.bn->beta});
    }
  }
  return out;
}

std::vector<Tensor> TinySegNet::select_params(const std::set<std::string>& names) const {
  for (const auto& n : names) {
    if (std::find(group_names().begin(), group_names().end(), n) == group_names().end()) {
      throw ContractError("unknown layer group '" + n + "'");
    }
  }
  std::vector<Tensor> out;
  for (const auto& g : groups_) {
    if (!names.contains(g.name)) continue;
    out.push_back(g.conv.weight);
    out.push_back(g.conv.bias);
    if (g.bn) {
      out.push_back(g.bn->gamma);
      out.push_back(g.bn->beta);
    }
  }
  return out;
}

void TinySegNet::set_trainable(const std::set<std::string>& names) {
  auto selected = select_params(names);
  for (auto& p : named_parameters()) {
    const bool on = std::any_of(selected.begin(), selected.end(),
                                [&](const Tensor& s) { return s.same_storage(p.tensor); });
    p.tensor.set_requires_grad(on);
  }
}

void TinySegNet::zero_grad() {
  for (auto& p : named_parameters()) p.tensor.zero_grad();
}

ParamSnapshot TinySegNet::snapshot() const {
  ParamSnapshot s;
  s.arch_tag = arch_tag();
  for (const auto& p : named_parameters()) {
    s.tensors.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  }
  for (const auto& g : groups_) {
    if (!g.bn) continue;
    s.tensors.push_back(g.bn->running.mean);
    s.tensors.push_back(g.bn->running.var);
    s.counts.push_back(g.bn->running.count);
  }
  return s;
}

void TinySegNet::restore(const ParamSnapshot& s) {
  if (s.arch_tag != arch_tag()) {
    throw ContractError("snapshot of " + s.arch_tag + " cannot restore " + arch_tag());
  }
  auto params = named_parameters();
  std::size_t i = 0;
  for (auto& p : params) {
    std::copy(s.tensors[i].begin(), s.tensors[i].end(), p.tensor.data().begin());
    p.tensor.zero_grad();
    ++i;
  }
  std::size_t k = 0;
  for (auto& g : groups_) {
    if (!g.bn) continue;
    g.bn->running.mean = s.tensors[i++];
    g.bn->running.var = s.tensors[i++];
    g.bn->running.count = s.counts[k++];
  }
}

// ---------------------------------------------------------------- checkpoints

std::vector<std::uint8_t> encode_checkpoint(const TinySegNet& net, const std::string& meta_json) {
  const auto tensors = state_tensors(net);
  std::vector<std::uint8_t> out{'S', 'A', 'C', 'K', kSackVersion};
  put_u32(out, static_cast<std::uint32_t>(tensors.size() + 2));
  auto put_entry = [&out](const std::string& name, const auto& tensor) {
    if (name.size() > 0xffff) throw FormatError("checkpoint entry name too long");
    out.push_back(static_cast<std::uint8_t>(name.size() & 0xff));
    out.push_back(static_cast<std::uint8_t>(name.size() >> 8));
    out.insert(out.end(), name.begin(), name.end());
    append_sadt(out, tensor);
  };
  put_entry("meta.arch", text_tensor(net.arch_tag()));
  put_entry("meta.recipe", text_tensor(meta_json));
  for (const auto& t : tensors) put_entry(t.name, t.tensor);
  put_u32(out, crc32_of(out));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TinySegNet& net, const std::string& meta_json) {
  write_file_bytes(path, encode_checkpoint(net, meta_json));
}

namespace {

struct ParsedCheckpoint {
  CheckpointInfo info;
  std::map<std::string, AnyTensor> entries;
};

ParsedCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 13) throw FormatError("checkpoint truncated");
  if (std::memcmp(bytes.data(), "SACK", 4) != 0) throw FormatError("bad checkpoint magic");
  if (bytes[4] != kSackVersion) throw FormatError("unsupported checkpoint version " + std::to_string(bytes[4]));
  const std::size_t body = bytes.size() - 4;
  if (crc32_of(bytes.first(body)) != get_u32(bytes, body)) throw FormatError("checkpoint CRC mismatch");
  const auto content = bytes.first(body);
  const std::uint32_t count = get_u32(content, 5);
  std::size_t offset = 9;
  ParsedCheckpoint parsed;
  for (std::uint32_t e = 0; e < count; ++e) {
    if (offset + 2 > content.size()) throw FormatError("checkpoint truncated in entry header");
    const std::size_t len = content[offset] | (static_cast<std::size_t>(content[offset + 1]) << 8);
    offset += 2;
    if (offset + len > content.size()) throw FormatError("checkpoint truncated in entry name");
    std::string name(content.begin() + static_cast<long>(offset), content.begin() + static_cast<long>(offset + len));
    offset += len;
    parsed.entries.insert_or_assign(std::move(name), parse_sadt(content, offset));
  }
  if (offset != content.size()) throw FormatError("trailing bytes in checkpoint");
  auto text = [&](const char* key) {
    auto it = parsed.entries.find(key);
    if (it == parsed.entries.end()) throw FormatError(std::string("checkpoint lacks ") + key);
    const auto* b = std::get_if<ByteTensor>(&it->second);
    if (!b) throw FormatError(std::string(key) + " must be a u8 tensor");
    return tensor_text(*b);
  };
  parsed.info.arch_tag = text("meta.arch");
  parsed.info.meta_json = text("meta.recipe");
  return parsed;
}

}  // namespace

CheckpointInfo decode_checkpoint(std::span<const std::uint8_t> bytes, TinySegNet& net) {
  auto parsed = parse_checkpoint(bytes);
  if (parsed.info.arch_tag != net.arch_tag()) {
    throw ArchitectureError("checkpoint architecture " + parsed.info.arch_tag + " does not match " + net.arch_tag());
  }
  // Stage into a snapshot so a failure leaves net untouched.
  ParamSnapshot snap = net.snapshot();
  const auto expected = state_tensors(net);
  std::size_t i = 0;
  for (const auto& t : expected) {
    auto it = parsed.entries.find(t.name);
    if (it == parsed.entries.end()) throw FormatError("checkpoint lacks " + t.name);
    const auto* f = std::get_if<Tensor>(&it->second);
    if (!f || f->shape() != t.tensor.shape()) {
      throw ArchitectureError("checkpoint tensor " + t.name + " has unexpected type or shape");
    }
    snap.tensors[i++].assign(f->data().begin(), f->data().end());
  }
  if (parsed.entries.size() != expected.size() + 2) throw ArchitectureError("checkpoint has unexpected entries");
  std::fill(snap.counts.begin(), snap.counts.end(), 0);
  net.restore(snap);
  return parsed.info;
}

CheckpointInfo load_checkpoint(const std::filesystem::path& path, TinySegNet& net) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes, net);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

TinySegNet load_model(const std::filesystem::path& path, CheckpointInfo* info) {
  const auto bytes = read_file_bytes(path);
  const auto parsed = parse_checkpoint(bytes);
  const std::string prefix = kArchName;
  if (parsed.info.arch_tag.rfind(prefix, 0) != 0) {
    throw ArchitectureError("unsupported architecture " + parsed.info.arch_tag);
  }
  std::size_t classes = 0;
  try {
    classes = std::stoul(parsed.info.arch_tag.substr(prefix.size()));
  } catch (const std::exception&) {
    throw ArchitectureError("malformed architecture tag " + parsed.info.arch_tag);
  }
  TinySegNet net(classes);
  auto loaded = decode_checkpoint(bytes, net);
  if (info) *info = loaded;
  return net;
}

}  // namespace sada
