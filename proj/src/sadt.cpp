// SPDX-License-Identifier: Apache-2.0

#include "sada/sadt.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace sada {

namespace {

constexpr std::uint8_t kVersion = 0x01;
constexpr std::uint8_t kDtypeF32 = 0x00;
constexpr std::uint8_t kDtypeU8 = 0x01;

std::atomic<ReadObserver> g_observer{nullptr};

static_assert(std::endian::native == std::endian::little, "SADT I/O assumes a little-endian host");

void append_header(std::vector<std::uint8_t>& out, std::uint8_t dtype, const Shape& shape) {
  if (shape.size() > 255) throw FormatError("SADT supports at most 255 dimensions");
  out.insert(out.end(), {'S', 'A', 'D', 'T', kVersion, dtype, static_cast<std::uint8_t>(shape.size())});
  for (auto extent : shape) {
    if (extent > 0xffffffffu) throw FormatError("SADT extent exceeds u32");
    const auto v = static_cast<std::uint32_t>(extent);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
}

void need(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t n) {
  if (offset + n > bytes.size()) throw FormatError("truncated SADT record");
}

}  // namespace

void append_sadt(std::vector<std::uint8_t>& out, const Tensor& t) {
  append_header(out, kDtypeF32, t.shape());
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.data().data());
  out.insert(out.end(), p, p + t.size() * sizeof(float));
}

void append_sadt(std::vector<std::uint8_t>& out, const ByteTensor& t) {
  if (numel(t.shape) != t.data.size()) throw FormatError("ByteTensor shape/data mismatch");
  append_header(out, kDtypeU8, t.shape);
  out.insert(out.end(), t.data.begin(), t.data.end());
}

AnyTensor parse_sadt(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  need(bytes, offset, 7);
  if (std::memcmp(bytes.data() + offset, "SADT", 4) != 0) throw FormatError("bad SADT magic");
  if (bytes[offset + 4] != kVersion) {
    throw FormatError("unsupported SADT version " + std::to_string(bytes[offset + 4]));
  }
  const std::uint8_t dtype = bytes[offset + 5];
  const std::size_t ndim = bytes[offset + 6];
  offset += 7;
  need(bytes, offset, 4 * ndim);
  Shape shape(ndim);
  for (std::size_t d = 0; d < ndim; ++d) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes[offset + b]) << (8 * b);
    if (v == 0) throw FormatError("SADT extent of zero");
    shape[d] = v;
    offset += 4;
  }
  const std::size_t count = numel(shape);
  if (dtype == kDtypeF32) {
    need(bytes, offset, count * sizeof(float));
    std::vector<float> data(count);
    std::memcpy(data.data(), bytes.data() + offset, count * sizeof(float));
    offset += count * sizeof(float);
    return Tensor(std::move(shape), std::move(data));
  }
  if (dtype == kDtypeU8) {
    need(bytes, offset, count);
    ByteTensor t{std::move(shape), std::vector<std::uint8_t>(bytes.begin() + static_cast<long>(offset),
                                                             bytes.begin() + static_cast<long>(offset + count))};
    offset += count;
    return t;
  }
  throw FormatError("unknown SADT dtype " + std::to_string(dtype));
}

void set_read_observer(ReadObserver observer) { g_observer.store(observer); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  if (auto obs = g_observer.load()) obs(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_sadt(const std::filesystem::path& path, const Tensor& t) {
  std::vector<std::uint8_t> bytes;
  append_sadt(bytes, t);
  write_file_bytes(path, bytes);
}

void write_sadt(const std::filesystem::path& path, const ByteTensor& t) {
  std::vector<std::uint8_t> bytes;
  append_sadt(bytes, t);
  write_file_bytes(path, bytes);
}

AnyTensor read_sadt(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t offset = 0;
  try {
    auto t = parse_sadt(bytes, offset);
    if (offset != bytes.size()) throw FormatError("trailing bytes after SADT record");
    return t;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Tensor read_sadt_f32(const std::filesystem::path& path) {
  auto t = read_sadt(path);
  if (auto* f = std::get_if<Tensor>(&t)) return *f;
  throw FormatError(path.string() + ": expected f32 tensor");
}

ByteTensor read_sadt_u8(const std::filesystem::path& path) {
  auto t = read_sadt(path);
  if (auto* b = std::get_if<ByteTensor>(&t)) return std::move(*b);
  throw FormatError(path.string() + ": expected u8 tensor");
}

}  // namespace sada
