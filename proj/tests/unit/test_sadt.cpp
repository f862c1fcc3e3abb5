// SPDX-License-Identifier: Apache-2.0

#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "sada/sadt.hpp"

using namespace sada;

TEST_CASE("header layout") {
  std::vector<std::uint8_t> bytes;
  append_sadt(bytes, ByteTensor{{2, 3}, {1, 2, 3, 4, 5, 6}});
  const std::vector<std::uint8_t> expected{'S', 'A', 'D', 'T', 1, 1, 2, 2, 0, 0, 0, 3, 0, 0, 0, 1, 2, 3, 4, 5, 6};
  CHECK(bytes == expected);
}

TEST_CASE("round trips") {
  const auto dir = std::filesystem::temp_directory_path() / "sada_test_sadt";
  std::filesystem::create_directories(dir);
  const Tensor t = oracle::random_tensor({2, 3, 4}, 1);
  write_sadt(dir / "t.sadt", t);
  const Tensor back = read_sadt_f32(dir / "t.sadt");
  CHECK(back.shape() == t.shape());
  CHECK(std::equal(t.data().begin(), t.data().end(), back.data().begin()));

  const ByteTensor m{{2, 2}, {0, 4, 255, 1}};
  write_sadt(dir / "m.sadt", m);
  const ByteTensor mb = read_sadt_u8(dir / "m.sadt");
  CHECK(mb.shape == m.shape);
  CHECK(mb.data == m.data);
  CHECK_THROWS_AS(read_sadt_f32(dir / "m.sadt"), FormatError);
  CHECK_THROWS_AS(read_sadt(dir / "missing.sadt"), IoError);
}

TEST_CASE("corruption is rejected") {
  std::vector<std::uint8_t> bytes;
  append_sadt(bytes, oracle::random_tensor({3}, 2));
  std::size_t off = 0;
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_sadt(bad, off), FormatError);
  off = 0;
  bad = bytes;
  bad[4] = 2;
  CHECK_THROWS_AS(parse_sadt(bad, off), FormatError);
  off = 0;
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(parse_sadt(bad, off), FormatError);
}
