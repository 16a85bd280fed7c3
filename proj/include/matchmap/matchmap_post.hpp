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

// Matchmap post-processing shared by localization, discovery, and
// visualization: temporal smoothing, binarization, top-p mass selection,
// and 3-D connected components.

#ifndef MATCHMAP_MATCHMAP_POST_HPP_
#define MATCHMAP_MATCHMAP_POST_HPP_

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "matchmap/common.hpp"
#include "matchmap/tensor.hpp"

namespace mm {

// Boolean volume over matchmap cells, shape (R, C, T).
struct BinaryVolume {
  int64_t rows = 0;
  int64_t cols = 0;
  int64_t frames = 0;
  std::vector<uint8_t> bits;

  BinaryVolume() = default;
  BinaryVolume(int64_t r, int64_t c, int64_t t)
      : rows(r), cols(c), frames(t) {
    check(r >= 0 && c >= 0 && t >= 0, "binary volume: negative extent");
    bits.assign(static_cast<size_t>(r * c * t), 0);
  }

  bool at(int64_t r, int64_t c, int64_t t) const {
    return bits[static_cast<size_t>((r * cols + c) * frames + t)] != 0;
  }
  void set(int64_t r, int64_t c, int64_t t, bool v) {
    bits[static_cast<size_t>((r * cols + c) * frames + t)] = v ? 1 : 0;
  }
  int64_t count() const {
    int64_t n = 0;
    for (uint8_t b : bits) n += b != 0;
    return n;
  }

  // 0/1 volume for MMTF export.
  Tensor<uint16_t> to_tensor() const {
    Tensor<uint16_t> t({rows, cols, frames});
    for (int64_t i = 0; i < t.numel(); ++i)
      t.at_flat(i) = bits[static_cast<size_t>(i)] ? 1 : 0;
    return t;
  }
};

// One 6-connected region of true cells. voxels hold (r, c, t), sorted by
// (t, r, c); mask is the spatial union; t_start/t_end bound the time span.
struct ComponentRecord {
  int64_t id = 0;
  std::vector<std::array<int64_t, 3>> voxels;
  Tensor<uint16_t> mask;
  int64_t t_start = 0;
  int64_t t_end = 0;
};

enum class SmoothKind { avg, max };

// Sliding window along t only, centered; the window clamps at the edges so
// shape is preserved without inventing data.
template <typename T>
Tensor<T> temporal_smooth(const Tensor<T>& m, int64_t width, SmoothKind kind) {
  check(m.rank() == 3, "temporal_smooth: expected (R, C, T), got ",
        shape_str(m.shape()));
  check(width >= 1 && width % 2 == 1,
        "temporal_smooth: width must be odd and positive, got ", width);
  const int64_t R = m.shape()[0], C = m.shape()[1], Tn = m.shape()[2];
  const int64_t half = width / 2;
  Tensor<T> out(m.shape());
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t t = 0; t < Tn; ++t) {
        const int64_t lo = std::max<int64_t>(0, t - half);
        const int64_t hi = std::min<int64_t>(Tn - 1, t + half);
        if (kind == SmoothKind::avg) {
          double s = 0;
          for (int64_t u = lo; u <= hi; ++u) s += double(m(r, c, u));
          out(r, c, t) = T(s / double(hi - lo + 1));
        } else {
          T mx = m(r, c, lo);
          for (int64_t u = lo + 1; u <= hi; ++u)
            mx = std::max(mx, m(r, c, u));
          out(r, c, t) = mx;
        }
      }
  return out;
}

// True iff value > mean + k * std, strict; std is the population deviation.
// The rule is invariant to adding a constant and to positive scaling.
template <typename T>
BinaryVolume binarize_sigma(const Tensor<T>& m, double k) {
  check(m.rank() == 3, "binarize_sigma: expected (R, C, T), got ",
        shape_str(m.shape()));
  check(std::isfinite(k), "binarize_sigma: k must be finite");
  const int64_t n = m.numel();
  check(n >= 1, "binarize_sigma: empty matchmap");
  double mean = 0;
  for (int64_t i = 0; i < n; ++i) mean += double(m.at_flat(i));
  mean /= double(n);
  double var = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = double(m.at_flat(i)) - mean;
    var += d * d;
  }
  var /= double(n);
  const double thresh = mean + k * std::sqrt(var);
  BinaryVolume v(m.shape()[0], m.shape()[1], m.shape()[2]);
  for (int64_t i = 0; i < n; ++i)
    v.bits[static_cast<size_t>(i)] = double(m.at_flat(i)) > thresh ? 1 : 0;
  return v;
}

// Shift by the minimum, normalize to unit mass, then keep the smallest
// value-cutoff set of highest cells whose mass reaches p. Every cell equal
// to the cutoff is kept, so selections nest as p grows. p = 1 keeps every
// cell; a flat matchmap selects nothing and warns.
template <typename T>
BinaryVolume top_p_mass(const Tensor<T>& m, double p) {
  check(m.rank() == 3, "top_p_mass: expected (R, C, T), got ",
        shape_str(m.shape()));
  const int64_t n = m.numel();
  check(n >= 1, "top_p_mass: empty matchmap");
  check(p > 0.0 && p <= 1.0, "top_p_mass: p must lie in (0, 1], got ", p);
  double mn = double(m.at_flat(0));
  for (int64_t i = 1; i < n; ++i) mn = std::min(mn, double(m.at_flat(i)));
  std::vector<double> w(static_cast<size_t>(n));
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    w[static_cast<size_t>(i)] = double(m.at_flat(i)) - mn;
    total += w[static_cast<size_t>(i)];
  }
  BinaryVolume v(m.shape()[0], m.shape()[1], m.shape()[2]);
  if (total == 0) {
    warn("top_p_mass: flat matchmap, selecting no cells");
    return v;
  }
  if (p >= 1.0) {
    std::fill(v.bits.begin(), v.bits.end(), uint8_t(1));
    return v;
  }
  std::vector<double> sorted = w;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double cum = 0;
  double cutoff = sorted.back();
  for (double value : sorted) {
    cum += value;
    if (cum >= p * total) {
      cutoff = value;
      break;
    }
  }
  for (int64_t i = 0; i < n; ++i)
    v.bits[static_cast<size_t>(i)] = w[static_cast<size_t>(i)] >= cutoff;
  return v;
}

// Face-adjacent (6-connected) components, ordered by each component's
// lexicographically minimal (t, r, c) voxel. Scanning t, then r, then c
// seeds every component at exactly that voxel.
inline std::vector<ComponentRecord> connected_components(
    const BinaryVolume& v) {
  const int64_t R = v.rows, C = v.cols, Tn = v.frames;
  std::vector<uint8_t> seen(v.bits.size(), 0);
  std::vector<ComponentRecord> out;
  std::vector<std::array<int64_t, 3>> stack;
  for (int64_t t = 0; t < Tn; ++t)
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c) {
        const size_t seed = static_cast<size_t>((r * C + c) * Tn + t);
        if (!v.bits[seed] || seen[seed]) continue;
        ComponentRecord rec;
        rec.id = int64_t(out.size());
        rec.mask = Tensor<uint16_t>({R, C});
        rec.t_start = t;
        rec.t_end = t;
        seen[seed] = 1;
        stack.assign(1, {r, c, t});
        while (!stack.empty()) {
          const auto [cr, cc, ct] = stack.back();
          stack.pop_back();
          rec.voxels.push_back({cr, cc, ct});
          rec.mask(cr, cc) = 1;
          rec.t_start = std::min(rec.t_start, ct);
          rec.t_end = std::max(rec.t_end, ct);
          const std::array<std::array<int64_t, 3>, 6> nbrs = {{
              {cr - 1, cc, ct},
              {cr + 1, cc, ct},
              {cr, cc - 1, ct},
              {cr, cc + 1, ct},
              {cr, cc, ct - 1},
              {cr, cc, ct + 1},
          }};
          for (const auto& nb : nbrs) {
            if (nb[0] < 0 || nb[0] >= R || nb[1] < 0 || nb[1] >= C ||
                nb[2] < 0 || nb[2] >= Tn)
              continue;
            const size_t idx =
                static_cast<size_t>((nb[0] * C + nb[1]) * Tn + nb[2]);
            if (!v.bits[idx] || seen[idx]) continue;
            seen[idx] = 1;
            stack.push_back(nb);
          }
        }
        std::sort(rec.voxels.begin(), rec.voxels.end(),
                  [](const std::array<int64_t, 3>& a,
                     const std::array<int64_t, 3>& b) {
                    if (a[2] != b[2]) return a[2] < b[2];
                    if (a[0] != b[0]) return a[0] < b[0];
                    return a[1] < b[1];
                  });
        out.push_back(std::move(rec));
      }
  return out;
}

}  // namespace mm

#endif  // MATCHMAP_MATCHMAP_POST_HPP_
