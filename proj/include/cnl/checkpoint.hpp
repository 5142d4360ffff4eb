// Copyright 2026 The CNL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Flat binary tensor container, little-endian:
//
//   "CNL1" | version u32 | tensor count u32
//   per tensor: name length u32 | UTF-8 name | rank u32 | dims u64 x rank |
//               row-major float64 payload

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cnl/error.hpp"
#include "cnl/matrix.hpp"

namespace cnl {

inline constexpr uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
};

namespace internal {

template <typename T>
void PutLe(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T GetLe(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint", "truncated file");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace internal

inline std::string EncodeCheckpoint(const std::vector<NamedTensor>& tensors) {
  std::string out = "CNL1";
  internal::PutLe<uint32_t>(out, kCheckpointVersion);
  internal::PutLe<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    internal::PutLe<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
    out += t.name;
    internal::PutLe<uint32_t>(out, 2);
    internal::PutLe<uint64_t>(out, t.value.rows());
    internal::PutLe<uint64_t>(out, t.value.cols());
    for (double v : t.value.data()) internal::PutLe<double>(out, v);
  }
  return out;
}

inline std::vector<NamedTensor> DecodeCheckpoint(const std::string& in) {
  if (in.size() < 4 || in.compare(0, 4, "CNL1") != 0) {
    throw DataError("checkpoint", "bad magic (expected CNL1)");
  }
  size_t pos = 4;
  const auto version = internal::GetLe<uint32_t>(in, pos);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint", "unsupported version " + std::to_string(version));
  }
  const auto count = internal::GetLe<uint32_t>(in, pos);
  std::vector<NamedTensor> tensors;
  for (uint32_t k = 0; k < count; ++k) {
    const auto name_len = internal::GetLe<uint32_t>(in, pos);
    if (pos + name_len > in.size()) throw DataError("checkpoint", "truncated name");
    NamedTensor t;
    t.name = in.substr(pos, name_len);
    pos += name_len;
    const auto rank = internal::GetLe<uint32_t>(in, pos);
    std::vector<uint64_t> dims(rank);
    for (auto& d : dims) d = internal::GetLe<uint64_t>(in, pos);
    // Rank 0..2 map onto a matrix; higher ranks are not produced by this library.
    if (rank > 2) throw DataError("checkpoint", "tensor '" + t.name + "' has rank > 2");
    const size_t rows = rank >= 1 ? dims[0] : 1;
    const size_t cols = rank == 2 ? dims[1] : 1;
    std::vector<double> payload(rows * cols);
    for (auto& v : payload) v = internal::GetLe<double>(in, pos);
    t.value = Matrix(rows, cols, std::move(payload));
    tensors.push_back(std::move(t));
  }
  if (pos != in.size()) throw DataError("checkpoint", "trailing bytes after last tensor");
  return tensors;
}

inline void WriteCheckpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint", "cannot open " + path + " for writing");
  const std::string bytes = EncodeCheckpoint(tensors);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<NamedTensor> ReadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint", "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return DecodeCheckpoint(bytes);
}

}  // namespace cnl
