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

#include <vector>

#include "matchmap/config.hpp"
#include "matchmap/graph.hpp"
#include "matchmap/ops.hpp"

// Pair similarities over matchmaps and the sampled margin ranking
// objective. Image maps are (D, R, C), truncated audio maps are (D, T).

namespace mm {

template <typename T>
Var similarity(Graph<T>& g, Var img, Var aud, SimKind kind) {
  Var m = matchmap(g, img, aud);
  switch (kind) {
    case SimKind::sisa:
      return sisa(g, m);
    case SimKind::misa:
      return misa(g, m);
    case SimKind::sima:
      return sima(g, m);
  }
  fail("sim kind out of range");
}

template <typename T>
T similarity_value(const Tensor<T>& img, const Tensor<T>& aud, SimKind kind) {
  const Tensor<T> m = matchmap_fwd(img, aud);
  switch (kind) {
    case SimKind::sisa:
      return sisa_value(m);
    case SimKind::misa:
      return misa_value(m);
    case SimKind::sima:
      return sima_value(m);
  }
  fail("sim kind out of range");
}

// Mean over all non-leading axes: (D, ...) -> (D).
template <typename T>
Tensor<T> pooled_embedding(const Tensor<T>& map) {
  check(map.rank() >= 2, "pooled embedding: map must be (D, ...), got ",
        shape_str(map.shape()));
  const int64_t D = map.extent(0);
  const int64_t inner = map.numel() / D;
  Tensor<T> out({D});
  for (int64_t d = 0; d < D; ++d) {
    double s = 0;
    const T* p = map.data() + d * inner;
    for (int64_t i = 0; i < inner; ++i) s += double(p[i]);
    out.at_flat(d) = T(s / double(inner));
  }
  return out;
}

struct RankLossSample {
  // Per pair j, the batch indices whose caption and image stand in as
  // imposters. Never equal to j.
  std::vector<int64_t> imposter_captions;
  std::vector<int64_t> imposter_images;
};

// Eq.-style sampled margin ranking objective, summed over the batch:
//   sum_j hinge(S(I_j, A_kj) - S(I_j, A_j) + margin)
//        + hinge(S(I_lj, A_j) - S(I_j, A_j) + margin)
// with one imposter caption kj and one imposter image lj drawn uniformly
// from the other batch items (caption drawn first).
template <typename T>
Var margin_rank_loss(Graph<T>& g, const std::vector<Var>& imgs,
                     const std::vector<Var>& auds, SimKind kind, T margin,
                     Rng& rng, RankLossSample* sample = nullptr) {
  const int64_t B = int64_t(imgs.size());
  check(B == int64_t(auds.size()), "rank loss: ", imgs.size(), " images vs ",
        auds.size(), " captions");
  check(B >= 2, "rank loss: batch must hold at least 2 pairs, got ", B);
  if (sample) {
    sample->imposter_captions.clear();
    sample->imposter_images.clear();
  }
  std::vector<Var> terms;
  terms.reserve(size_t(2 * B));
  for (int64_t j = 0; j < B; ++j) {
    const int64_t kj = (j + 1 + rng.uniform_int(0, B - 2)) % B;
    const int64_t lj = (j + 1 + rng.uniform_int(0, B - 2)) % B;
    if (sample) {
      sample->imposter_captions.push_back(kj);
      sample->imposter_images.push_back(lj);
    }
    Var match = similarity(g, imgs[size_t(j)], auds[size_t(j)], kind);
    Var imp_aud = similarity(g, imgs[size_t(j)], auds[size_t(kj)], kind);
    Var imp_img = similarity(g, imgs[size_t(lj)], auds[size_t(j)], kind);
    terms.push_back(relu(g, shift(g, sub(g, imp_aud, match), margin)));
    terms.push_back(relu(g, shift(g, sub(g, imp_img, match), margin)));
  }
  return sum_vars(g, terms);
}

// S(i, j) = similarity of image j against caption i; rows index captions.
template <typename T>
Tensor<T> similarity_matrix(const std::vector<Tensor<T>>& imgs,
                            const std::vector<Tensor<T>>& auds,
                            SimKind kind) {
  const int64_t N = int64_t(imgs.size());
  check(N == int64_t(auds.size()), "similarity matrix: ", imgs.size(),
        " images vs ", auds.size(), " captions");
  check(N >= 1, "similarity matrix: empty pair set");
  Tensor<T> s({N, N});
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < N; ++j)
      s(i, j) = similarity_value(imgs[size_t(j)], auds[size_t(i)], kind);
  return s;
}

}  // namespace mm
