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

#include "pcbm/emb1.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pcbm/errors.h"

namespace pcbm {
namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

template <typename T>
void PutLittle(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(raw[sizeof(T) - 1 - i]);
  } else {
    out.insert(out.end(), raw, raw + sizeof(T));
  }
}

template <typename T>
T GetLittle(const std::uint8_t* p) {
  std::uint8_t raw[sizeof(T)];
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T); ++i) raw[i] = p[sizeof(T) - 1 - i];
  } else {
    std::memcpy(raw, p, sizeof(T));
  }
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

std::size_t ElementSize(Dtype dtype) {
  return dtype == Dtype::kFloat32 ? 4 : 8;
}

}  // namespace

std::uint64_t Fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ChecksumHex(std::uint64_t checksum) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = kDigits[checksum & 0xf];
    checksum >>= 4;
  }
  return s;
}

std::uint64_t ParseChecksumHex(const std::string& hex) {
  if (hex.size() != 16) throw FormatError("checksum must be 16 hex digits");
  std::uint64_t v = 0;
  for (char c : hex) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw FormatError("checksum has a non-hex digit");
  }
  return v;
}

Dtype LosslessDtype(const Matrix& m) {
  for (double v : m.data()) {
    if (static_cast<double>(static_cast<float>(v)) != v) return Dtype::kFloat64;
  }
  return Dtype::kFloat32;
}

std::vector<std::uint8_t> EncodeEmb1(const Matrix& m, Dtype dtype) {
  if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX) {
    throw ArgumentError("matrix too large for EMB1");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kEmb1HeaderSize + m.rows() * m.cols() * ElementSize(dtype));
  out.insert(out.end(), kMagic, kMagic + 4);
  PutLittle<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  PutLittle<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  out.push_back(static_cast<std::uint8_t>(dtype));
  for (double v : m.data()) {
    if (dtype == Dtype::kFloat32) {
      PutLittle<float>(out, static_cast<float>(v));
    } else {
      PutLittle<double>(out, v);
    }
  }
  return out;
}

Matrix DecodeEmb1(std::span<const std::uint8_t> bytes, Emb1Info* info) {
  if (bytes.size() < kEmb1HeaderSize ||
      std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not an EMB1 container (bad magic or short header)");
  }
  Emb1Info h;
  h.rows = GetLittle<std::uint32_t>(bytes.data() + 4);
  h.cols = GetLittle<std::uint32_t>(bytes.data() + 8);
  const std::uint8_t code = bytes[12];
  if (code > 1) {
    throw FormatError("unsupported EMB1 dtype code " + std::to_string(code));
  }
  h.dtype = static_cast<Dtype>(code);
  const std::size_t count = static_cast<std::size_t>(h.rows) * h.cols;
  const std::size_t expected = kEmb1HeaderSize + count * ElementSize(h.dtype);
  if (bytes.size() != expected) {
    throw FormatError("EMB1 payload is " +
                      std::to_string(bytes.size() - kEmb1HeaderSize) +
                      " bytes, header implies " +
                      std::to_string(expected - kEmb1HeaderSize));
  }
  auto payload = bytes.subspan(kEmb1HeaderSize);
  h.payload_checksum = Fnv1a64(payload);
  std::vector<double> values(count);
  const std::uint8_t* p = payload.data();
  for (std::size_t i = 0; i < count; ++i) {
    if (h.dtype == Dtype::kFloat32) {
      values[i] = GetLittle<float>(p + 4 * i);
    } else {
      values[i] = GetLittle<double>(p + 8 * i);
    }
  }
  if (info != nullptr) *info = h;
  return Matrix(h.rows, h.cols, std::move(values));
}

Emb1Info WriteEmb1(const std::filesystem::path& path, const Matrix& m,
                   Dtype dtype) {
  auto bytes = EncodeEmb1(m, dtype);
  WriteFileBytes(path, bytes);
  Emb1Info info;
  info.rows = static_cast<std::uint32_t>(m.rows());
  info.cols = static_cast<std::uint32_t>(m.cols());
  info.dtype = dtype;
  info.payload_checksum =
      Fnv1a64(std::span<const std::uint8_t>(bytes).subspan(kEmb1HeaderSize));
  return info;
}

Matrix ReadEmb1(const std::filesystem::path& path, Emb1Info* info) {
  auto bytes = ReadFileBytes(path);
  return DecodeEmb1(bytes, info);
}

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void WriteFileBytes(const std::filesystem::path& path,
                    std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArgumentError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ArgumentError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json ReadJsonFile(const std::filesystem::path& path) {
  auto bytes = ReadFileBytes(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void WriteJsonFile(const std::filesystem::path& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  WriteFileBytes(path, std::span<const std::uint8_t>(
                           reinterpret_cast<const std::uint8_t*>(text.data()),
                           text.size()));
}

}  // namespace pcbm
