/*
 * Copyright 2026 The pcbm Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "test_util.h"

namespace pcbm {
namespace {

using testing::RandomMatrix;
using testing::TempDir;

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(Fnv1a64({}), 0xcbf29ce484222325ULL);
  const std::string a = "a";
  EXPECT_EQ(Fnv1a64({reinterpret_cast<const std::uint8_t*>(a.data()), a.size()}),
            0xaf63dc4c8601ec8cULL);
  const std::string foobar = "foobar";
  EXPECT_EQ(Fnv1a64({reinterpret_cast<const std::uint8_t*>(foobar.data()), foobar.size()}),
            0x85944171f73967e8ULL);
}

TEST(Checksum, HexRoundTrip) {
  for (std::uint64_t v : {0ULL, 1ULL, 0xdeadbeefcafef00dULL, ~0ULL}) {
    EXPECT_EQ(ParseChecksumHex(ChecksumHex(v)), v);
  }
  EXPECT_EQ(ChecksumHex(255).size(), 16u);
  EXPECT_THROW(ParseChecksumHex("xyz"), FormatError);
}

TEST(Emb1, HeaderLayout) {
  const Matrix m = Matrix::FromRows({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
  const auto bytes = EncodeEmb1(m, Dtype::kFloat32);
  ASSERT_EQ(bytes.size(), kEmb1HeaderSize + 6 * 4);
  EXPECT_EQ(std::memcmp(bytes.data(), "EMB1", 4), 0);
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(bytes[8], 3);
  EXPECT_EQ(bytes[12], 0);
  float first;
  std::memcpy(&first, bytes.data() + kEmb1HeaderSize, 4);
  EXPECT_EQ(first, 1.0f);
}

TEST(Emb1, RoundTripFloat64IsBitExact) {
  Rng rng(3);
  const Matrix m = RandomMatrix(rng, 7, 5);
  ASSERT_EQ(LosslessDtype(m), Dtype::kFloat64);
  Emb1Info info;
  const Matrix back = DecodeEmb1(EncodeEmb1(m, Dtype::kFloat64), &info);
  EXPECT_EQ(back, m);
  EXPECT_EQ(info.rows, 7u);
  EXPECT_EQ(info.cols, 5u);
  EXPECT_EQ(info.dtype, Dtype::kFloat64);
}

TEST(Emb1, Float32WhenLossless) {
  const Matrix m = Matrix::FromRows({{0.5, -1.25}, {3.0, 0.0}});
  EXPECT_EQ(LosslessDtype(m), Dtype::kFloat32);
  EXPECT_EQ(DecodeEmb1(EncodeEmb1(m, Dtype::kFloat32)), m);
}

TEST(Emb1, ChecksumCoversPayloadOnly) {
  Rng rng(4);
  const Matrix m = RandomMatrix(rng, 3, 4);
  const auto bytes = EncodeEmb1(m, Dtype::kFloat64);
  Emb1Info info;
  DecodeEmb1(bytes, &info);
  EXPECT_EQ(info.payload_checksum,
            Fnv1a64(std::span<const std::uint8_t>(bytes).subspan(kEmb1HeaderSize)));
}

TEST(Emb1, RejectsMalformedInput) {
  const Matrix m = Matrix::FromRows({{1.0, 2.0}});
  auto bytes = EncodeEmb1(m, Dtype::kFloat32);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(DecodeEmb1(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(DecodeEmb1(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(DecodeEmb1(trailing), FormatError);
  auto bad_dtype = bytes;
  bad_dtype[12] = 9;
  EXPECT_THROW(DecodeEmb1(bad_dtype), FormatError);
  EXPECT_THROW(DecodeEmb1(std::span<const std::uint8_t>(bytes).first(5)), FormatError);
}

TEST(Emb1, Float32EncodingRoundsToNearestFloat) {
  const Matrix m = Matrix::FromRows({{0.1}});
  EXPECT_EQ(LosslessDtype(m), Dtype::kFloat64);
  EXPECT_EQ(DecodeEmb1(EncodeEmb1(m, Dtype::kFloat32))(0, 0), static_cast<double>(0.1f));
}

TEST(Emb1, FileRoundTrip) {
  TempDir dir;
  Rng rng(5);
  const Matrix m = RandomMatrix(rng, 10, 3);
  const Emb1Info written = WriteEmb1(dir / "m.emb1", m, Dtype::kFloat64);
  Emb1Info read;
  EXPECT_EQ(ReadEmb1(dir / "m.emb1", &read), m);
  EXPECT_EQ(read.payload_checksum, written.payload_checksum);
  EXPECT_THROW(ReadEmb1(dir / "missing.emb1"), NotFoundError);
}

TEST(Emb1, EmptyMatrixAllowed) {
  const Matrix m(0, 4);
  const Matrix back = DecodeEmb1(EncodeEmb1(m, Dtype::kFloat32));
  EXPECT_EQ(back.rows(), 0u);
  EXPECT_EQ(back.cols(), 4u);
}

}  // namespace
}  // namespace pcbm
