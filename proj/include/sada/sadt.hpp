// SPDX-License-Identifier: Apache-2.0
//
// SADT tensor files:
//   "SADT" | version u8 = 1 | dtype u8 (0 f32, 1 u8) | ndim u8 |
//   ndim × u32 LE extents | row-major payload (f32 LE or u8)

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sada/tensor.hpp"

namespace sada {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ByteTensor {
  Shape shape;
  std::vector<std::uint8_t> data;

  bool operator==(const ByteTensor&) const = default;
};

using AnyTensor = std::variant<Tensor, ByteTensor>;

void append_sadt(std::vector<std::uint8_t>& out, const Tensor& t);
void append_sadt(std::vector<std::uint8_t>& out, const ByteTensor& t);

// Parses one SADT record starting at `offset`; advances offset past it.
AnyTensor parse_sadt(std::span<const std::uint8_t> bytes, std::size_t& offset);

void write_sadt(const std::filesystem::path& path, const Tensor& t);
void write_sadt(const std::filesystem::path& path, const ByteTensor& t);
AnyTensor read_sadt(const std::filesystem::path& path);
Tensor read_sadt_f32(const std::filesystem::path& path);
ByteTensor read_sadt_u8(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Every path opened through read_file_bytes is reported here, if set. Used by
// the CLI to audit which dataset files a command touched.
using ReadObserver = void (*)(const std::filesystem::path&);
void set_read_observer(ReadObserver observer);

}  // namespace sada
