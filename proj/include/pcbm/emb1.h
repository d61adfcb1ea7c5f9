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

// EMB1 binary matrix container.
//
//   offset  size  field
//   0       4     magic "EMB1"
//   4       4     rows   (u32, little-endian)
//   8       4     cols   (u32, little-endian)
//   12      1     dtype  (0 = float32, 1 = float64)
//   13      ...   row-major payload, little-endian IEEE-754
//
// Checksums are FNV-1a 64 over the payload bytes only (offset 13 onward).

#ifndef PCBM_EMB1_H_
#define PCBM_EMB1_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcbm/matrix.h"

namespace pcbm {

enum class Dtype : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

inline constexpr std::size_t kEmb1HeaderSize = 13;

struct Emb1Info {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  Dtype dtype = Dtype::kFloat32;
  std::uint64_t payload_checksum = 0;
};

std::uint64_t Fnv1a64(std::span<const std::uint8_t> bytes);
std::string ChecksumHex(std::uint64_t checksum);
std::uint64_t ParseChecksumHex(const std::string& hex);

// kFloat32 when every value survives a float round-trip, else kFloat64.
Dtype LosslessDtype(const Matrix& m);

std::vector<std::uint8_t> EncodeEmb1(const Matrix& m, Dtype dtype);
Matrix DecodeEmb1(std::span<const std::uint8_t> bytes, Emb1Info* info = nullptr);

// Writes the file and returns its info (including the payload checksum).
Emb1Info WriteEmb1(const std::filesystem::path& path, const Matrix& m,
                   Dtype dtype);
Matrix ReadEmb1(const std::filesystem::path& path, Emb1Info* info = nullptr);

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path);
// Writes via a temporary sibling and renames into place.
void WriteFileBytes(const std::filesystem::path& path,
                    std::span<const std::uint8_t> bytes);
nlohmann::json ReadJsonFile(const std::filesystem::path& path);
void WriteJsonFile(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace pcbm

#endif  // PCBM_EMB1_H_
