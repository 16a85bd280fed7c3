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

// Retrieval recall and speech-prompted localization metrics.

#ifndef MATCHMAP_METRICS_HPP_
#define MATCHMAP_METRICS_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "matchmap/common.hpp"
#include "matchmap/image.hpp"
#include "matchmap/tensor.hpp"

namespace mm {

// One spoken word with its interval in seconds.
struct WordAlignment {
  std::string word;
  double t1 = 0;
  double t2 = 0;
};

struct Recall {
  double caption_to_image = 0;
  double image_to_caption = 0;
};

// sim is N x N with rows indexing captions: sim(i, j) = S(image j, caption i).
// A query counts when its matched index ranks in the top k under descending
// scores, ties broken toward the lower index.
template <typename T>
Recall recall_at_k(const Tensor<T>& sim, int64_t k) {
  check(sim.rank() == 2 && sim.shape()[0] == sim.shape()[1],
        "recall_at_k: expected a square matrix, got ", shape_str(sim.shape()));
  const int64_t n = sim.shape()[0];
  check(k >= 1 && k <= n, "recall_at_k: k must lie in [1, ", n, "], got ", k);
  int64_t cap_hits = 0, img_hits = 0;
  for (int64_t q = 0; q < n; ++q) {
    const double row_match = double(sim(q, q));
    int64_t row_rank = 1, col_rank = 1;
    for (int64_t o = 0; o < n; ++o) {
      if (o == q) continue;
      const double row_other = double(sim(q, o));
      if (row_other > row_match || (row_other == row_match && o < q))
        ++row_rank;
      const double col_other = double(sim(o, q));
      if (col_other > row_match || (col_other == row_match && o < q))
        ++col_rank;
    }
    cap_hits += row_rank <= k;
    img_hits += col_rank <= k;
  }
  return {double(cap_hits) / double(n), double(img_hits) / double(n)};
}

// Intersection over union of nonzero cells; an empty union scores 0.
template <typename T>
double iou(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "iou: shape mismatch ", shape_str(a.shape()),
        " vs ", shape_str(b.shape()));
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const bool av = a.at_flat(i) != T(0);
    const bool bv = b.at_flat(i) != T(0);
    inter += av && bv;
    uni += av || bv;
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

// Cells strictly above tau become 1.
template <typename T>
Tensor<uint16_t> threshold_mask(const Tensor<T>& heat, double tau) {
  Tensor<uint16_t> out(heat.shape());
  for (int64_t i = 0; i < heat.numel(); ++i)
    out.at_flat(i) = double(heat.at_flat(i)) > tau ? 1 : 0;
  return out;
}

// Sums the matchmap frames covering [t1, t2), upsamples the spatial slice to
// the image, and min-max normalizes into [0, 1]. Frame indices come from
// floor(t * frame_rate_in / downsample), half open, widened to at least one
// frame. A constant map normalizes to all zeros.
template <typename T>
Tensor<T> speech_prompted_heatmap(const Tensor<T>& m, const WordAlignment& a,
                                  double frame_rate_in, int64_t downsample,
                                  int64_t image_size) {
  check(m.rank() == 3, "speech_prompted_heatmap: expected (R, C, T), got ",
        shape_str(m.shape()));
  check(frame_rate_in > 0, "speech_prompted_heatmap: frame rate must be > 0");
  check(downsample >= 1, "speech_prompted_heatmap: downsample must be >= 1");
  check(image_size >= 1, "speech_prompted_heatmap: image size must be >= 1");
  check(a.t1 >= 0 && a.t2 > a.t1,
        "speech_prompted_heatmap: bad interval [", a.t1, ", ", a.t2, ")");
  const int64_t R = m.shape()[0], C = m.shape()[1], Tn = m.shape()[2];
  const double scale = frame_rate_in / double(downsample);
  const int64_t f1 = int64_t(std::floor(a.t1 * scale));
  check(f1 < Tn, "speech_prompted_heatmap: interval starts after the caption",
        " (frame ", f1, " of ", Tn, ")");
  int64_t f2 = std::min<int64_t>(int64_t(std::floor(a.t2 * scale)), Tn);
  if (f2 <= f1) f2 = f1 + 1;

  Tensor<T> summed({1, R, C});
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) {
      double s = 0;
      for (int64_t t = f1; t < f2; ++t) s += double(m(r, c, t));
      summed(0, r, c) = T(s);
    }
  Tensor<T> up = bilinear_resize(summed, image_size, image_size);
  double mn = double(up.at_flat(0)), mx = mn;
  for (int64_t i = 1; i < up.numel(); ++i) {
    mn = std::min(mn, double(up.at_flat(i)));
    mx = std::max(mx, double(up.at_flat(i)));
  }
  Tensor<T> out({image_size, image_size});
  if (mx > mn) {
    const double span = mx - mn;
    for (int64_t i = 0; i < out.numel(); ++i)
      out.at_flat(i) = T((double(up.at_flat(i)) - mn) / span);
  }
  return out;
}

// Per word-object pair localization outcome.
struct PairResult {
  std::string word;
  std::string object_label;
  int64_t occurrences = 0;
  double mean_iou = 0;
};

// Unweighted macro average over pairs.
inline double macro_iou(const std::vector<PairResult>& pairs) {
  check(!pairs.empty(), "macro_iou: empty pair set");
  double s = 0;
  for (const PairResult& p : pairs) s += p.mean_iou;
  return s / double(pairs.size());
}

}  // namespace mm

#endif  // MATCHMAP_METRICS_HPP_
