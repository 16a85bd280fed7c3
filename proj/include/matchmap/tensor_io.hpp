// Copyright 2026 The Matchmap Authors
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

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "matchmap/tensor.hpp"

// MMTF: a minimal binary tensor container.
//
//   bytes 0..3   magic "MMTF"
//   byte  4      format version (1)
//   byte  5      dtype: 0 = f32, 1 = f64, 2 = u16
//   byte  6      rank (1..8)
//   then         rank u32 little-endian extents
//   then         row-major payload, little-endian
//
// Readers reject wrong magic, unknown version or dtype, zero or
// out-of-range rank, zero extents, and short payloads, each with its own
// diagnostic.

namespace mm {

static_assert(std::endian::native == std::endian::little,
              "MMTF i/o assumes a little-endian host");

template <typename T>
struct MmtfDtype;
template <>
struct MmtfDtype<float> {
  static constexpr uint8_t code = 0;
  static constexpr const char* name = "f32";
};
template <>
struct MmtfDtype<double> {
  static constexpr uint8_t code = 1;
  static constexpr const char* name = "f64";
};
template <>
struct MmtfDtype<uint16_t> {
  static constexpr uint8_t code = 2;
  static constexpr const char* name = "u16";
};

inline constexpr uint8_t kMmtfVersion = 1;
inline constexpr int64_t kMmtfMaxRank = 8;

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  check(t.rank() >= 1, "mmtf write: rank-0 tensor");
  check(t.rank() <= kMmtfMaxRank, "mmtf write: rank ", t.rank(), " exceeds ",
        kMmtfMaxRank);
  os.write("MMTF", 4);
  uint8_t head[3] = {kMmtfVersion, MmtfDtype<T>::code, uint8_t(t.rank())};
  os.write(reinterpret_cast<const char*>(head), 3);
  for (int64_t a = 0; a < t.rank(); ++a) {
    int64_t e = t.extent(a);
    check(e <= int64_t(UINT32_MAX), "mmtf write: extent ", e,
          " overflows u32 on axis ", a);
    uint32_t e32 = uint32_t(e);
    os.write(reinterpret_cast<const char*>(&e32), 4);
  }
  os.write(reinterpret_cast<const char*>(t.data()),
           std::streamsize(size_t(t.numel()) * sizeof(T)));
  check(bool(os), "mmtf write: stream failure");
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  check(bool(os), "mmtf write: cannot open ", path);
  write_tensor(os, t);
  os.close();
  check(bool(os), "mmtf write: close failure on ", path);
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4] = {0, 0, 0, 0};
  is.read(magic, 4);
  check(is.gcount() == 4 && std::memcmp(magic, "MMTF", 4) == 0,
        "mmtf read: bad magic");
  uint8_t head[3];
  is.read(reinterpret_cast<char*>(head), 3);
  check(is.gcount() == 3, "mmtf read: truncated header");
  check(head[0] == kMmtfVersion, "mmtf read: unsupported version ",
        int(head[0]));
  check(head[1] == MmtfDtype<T>::code, "mmtf read: dtype code ", int(head[1]),
        " does not match requested ", MmtfDtype<T>::name);
  int64_t rank = head[2];
  check(rank >= 1, "mmtf read: rank 0");
  check(rank <= kMmtfMaxRank, "mmtf read: rank ", rank, " exceeds ",
        kMmtfMaxRank);
  Shape shape(static_cast<size_t>(rank));
  for (int64_t a = 0; a < rank; ++a) {
    uint32_t e32 = 0;
    is.read(reinterpret_cast<char*>(&e32), 4);
    check(is.gcount() == 4, "mmtf read: truncated extent list");
    check(e32 >= 1, "mmtf read: zero extent on axis ", a);
    shape[size_t(a)] = int64_t(e32);
  }
  int64_t n = shape_numel(shape);  // rejects extent overflow
  std::vector<T> data(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(data.data()),
          std::streamsize(size_t(n) * sizeof(T)));
  check(is.gcount() == std::streamsize(size_t(n) * sizeof(T)),
        "mmtf read: truncated payload");
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), "mmtf read: cannot open ", path);
  Tensor<T> t = read_tensor<T>(is);
  // A valid container must end exactly after the payload.
  is.peek();
  check(is.eof(), "mmtf read: trailing bytes after payload in ", path);
  return t;
}

}  // namespace mm
