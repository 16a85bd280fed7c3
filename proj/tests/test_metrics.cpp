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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "helpers.hpp"
#include "matchmap/metrics.hpp"

using namespace mm;
using namespace mmtest;
using Catch::Approx;

namespace {

Tensor<double> rand_matrix(int64_t n, Rng& rng) {
  Tensor<double> s({n, n});
  for (int64_t i = 0; i < s.numel(); ++i) s.at_flat(i) = rng.uniform(-1, 1);
  return s;
}

// Brute-force rank of the match by full sort with (score desc, index asc).
Recall sort_oracle(const Tensor<double>& sim, int64_t k) {
  const int64_t n = sim.shape()[0];
  int64_t cap = 0, img = 0;
  for (int64_t q = 0; q < n; ++q) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      return sim(q, a) != sim(q, b) ? sim(q, a) > sim(q, b) : a < b;
    });
    cap += std::find(order.begin(), order.end(), q) - order.begin() < k;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      return sim(a, q) != sim(b, q) ? sim(a, q) > sim(b, q) : a < b;
    });
    img += std::find(order.begin(), order.end(), q) - order.begin() < k;
  }
  return {double(cap) / double(n), double(img) / double(n)};
}

}  // namespace

TEST_CASE("recall on dominant and reversed matrices") {
  Tensor<double> dom({4, 4});
  Rng rng(1);
  for (int64_t i = 0; i < dom.numel(); ++i) dom.at_flat(i) = rng.uniform();
  for (int64_t i = 0; i < 4; ++i) dom(i, i) = 2.0;
  const Recall r1 = recall_at_k(dom, 1);
  REQUIRE(r1.caption_to_image == 1.0);
  REQUIRE(r1.image_to_caption == 1.0);

  // Match tied with every other entry at a lower value ranks last.
  Tensor<double> rev({10, 10});
  rev.fill(1.0);
  for (int64_t i = 0; i < 10; ++i) rev(i, i) = 0.0;
  for (int64_t k : {1, 5, 9}) {
    const Recall r = recall_at_k(rev, k);
    REQUIRE(r.caption_to_image == 0.0);
    REQUIRE(r.image_to_caption == 0.0);
  }
  const Recall r10 = recall_at_k(rev, 10);
  REQUIRE(r10.caption_to_image == 1.0);
  REQUIRE(r10.image_to_caption == 1.0);

  REQUIRE_THROWS_AS(recall_at_k(rev, 11), Error);
  REQUIRE_THROWS_AS(recall_at_k(rev, 0), Error);
}

TEST_CASE("recall ties break toward the lower index") {
  Tensor<double> s({3, 3});
  s.fill(0.5);
  // Row 0's match at index 0 wins its ties; row 2's match loses to 0 and 1.
  const Recall r1 = recall_at_k(s, 1);
  REQUIRE(r1.caption_to_image == Approx(1.0 / 3));
  REQUIRE(r1.image_to_caption == Approx(1.0 / 3));
  const Recall r2 = recall_at_k(s, 2);
  REQUIRE(r2.caption_to_image == Approx(2.0 / 3));
  const Recall r3 = recall_at_k(s, 3);
  REQUIRE(r3.caption_to_image == 1.0);
}

TEST_CASE("recall matches the full-sort oracle and is rank invariant") {
  Rng rng(2);
  const Tensor<double> sim = rand_matrix(20, rng);
  double prev_cap = 0, prev_img = 0;
  for (int64_t k = 1; k <= 20; ++k) {
    const Recall got = recall_at_k(sim, k);
    const Recall want = sort_oracle(sim, k);
    REQUIRE(got.caption_to_image == Approx(want.caption_to_image));
    REQUIRE(got.image_to_caption == Approx(want.image_to_caption));
    REQUIRE(got.caption_to_image >= prev_cap);
    REQUIRE(got.image_to_caption >= prev_img);
    prev_cap = got.caption_to_image;
    prev_img = got.image_to_caption;
  }

  // A strictly increasing transform leaves every recall unchanged.
  Tensor<double> warped = sim;
  for (int64_t i = 0; i < warped.numel(); ++i)
    warped.at_flat(i) = std::tanh(2.0 * warped.at_flat(i)) + 0.1;
  for (int64_t k : {1, 3, 10, 20}) {
    const Recall a = recall_at_k(sim, k);
    const Recall b = recall_at_k(warped, k);
    REQUIRE(a.caption_to_image == b.caption_to_image);
    REQUIRE(a.image_to_caption == b.image_to_caption);
  }
}

TEST_CASE("iou counts pixels") {
  Tensor<uint16_t> a({4, 4}), b({4, 4});
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t c = 0; c < 2; ++c) a(r, c) = 1;
  REQUIRE(iou(a, a) == 1.0);

  // Same block shifted one column: 2 shared, union 6.
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t c = 1; c < 3; ++c) b(r, c) = 1;
  REQUIRE(iou(a, b) == Approx(1.0 / 3));
  REQUIRE(iou(b, a) == Approx(1.0 / 3));

  Tensor<uint16_t> far({4, 4});
  far(3, 3) = 1;
  REQUIRE(iou(a, far) == 0.0);

  const Tensor<uint16_t> empty({4, 4});
  REQUIRE(iou(empty, empty) == 0.0);

  Tensor<uint16_t> other({4, 5});
  REQUIRE_THROWS_AS(iou(a, other), Error);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<uint16_t> x({5, 5}), y({5, 5});
    for (int64_t i = 0; i < 25; ++i) {
      x.at_flat(i) = rng.uniform() < 0.4 ? 1 : 0;
      y.at_flat(i) = rng.uniform() < 0.4 ? 1 : 0;
    }
    const double v = iou(x, y);
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    REQUIRE(v == iou(y, x));
    bool equal = true, nonempty = false;
    for (int64_t i = 0; i < 25; ++i) {
      equal = equal && (x.at_flat(i) != 0) == (y.at_flat(i) != 0);
      nonempty = nonempty || x.at_flat(i) != 0;
    }
    if (v == 1.0) REQUIRE((equal && nonempty));
    if (equal && nonempty) REQUIRE(v == 1.0);
  }
}

TEST_CASE("threshold mask keeps strictly greater cells") {
  Tensor<double> h({2, 2});
  h(0, 0) = 0.5;
  h(0, 1) = 0.51;
  h(1, 0) = 0.49;
  h(1, 1) = 1.0;
  const Tensor<uint16_t> m = threshold_mask(h, 0.5);
  REQUIRE(m(0, 0) == 0);
  REQUIRE(m(0, 1) == 1);
  REQUIRE(m(1, 0) == 0);
  REQUIRE(m(1, 1) == 1);
}

TEST_CASE("heatmap frame window arithmetic") {
  // 100 Hz input frames, downsample 8: t in [0, 0.08) is exactly frame 0.
  // Column 0 dominates frame 0 and column 1 dominates frame 1, so the
  // normalized heatmap reveals which frames entered the sum.
  Tensor<double> m({1, 2, 4});
  m(0, 0, 0) = 1.0;
  m(0, 1, 1) = 5.0;
  const Tensor<double> h0 =
      speech_prompted_heatmap(m, {"w", 0.0, 0.08}, 100.0, 8, 2);
  REQUIRE(h0(0, 0) == 1.0);
  REQUIRE(h0(0, 1) == 0.0);
  REQUIRE(h0(1, 0) == 1.0);

  // Bad intervals and out-of-range starts are rejected.
  REQUIRE_THROWS_AS(speech_prompted_heatmap(m, {"w", 0.3, 0.2}, 100.0, 8, 4),
                    Error);
  REQUIRE_THROWS_AS(speech_prompted_heatmap(m, {"w", -0.1, 0.2}, 100.0, 8, 4),
                    Error);
  REQUIRE_THROWS_AS(speech_prompted_heatmap(m, {"w", 0.4, 0.5}, 100.0, 8, 4),
                    Error);  // frame 5 of 4

  // A zero-width window after flooring still covers one frame.
  Tensor<double> wide({2, 1, 4});
  wide(0, 0, 2) = 3.0;
  wide(1, 0, 2) = 1.0;
  const Tensor<double> h1 =
      speech_prompted_heatmap(wide, {"w", 0.17, 0.18}, 100.0, 8, 2);
  REQUIRE(h1.shape() == Shape({2, 2}));
  REQUIRE(h1(0, 0) == 1.0);
  REQUIRE(h1(1, 1) == 0.0);
}

TEST_CASE("heatmap peaks inside the hot cell's pixel block") {
  Tensor<double> m({4, 4, 2});
  m(1, 2, 0) = 1.0;
  m(1, 2, 1) = 1.0;
  const Tensor<double> h =
      speech_prompted_heatmap(m, {"w", 0.0, 0.16}, 100.0, 8, 32);
  REQUIRE(h.shape() == Shape({32, 32}));
  double best = -1;
  int64_t br = -1, bc = -1;
  for (int64_t r = 0; r < 32; ++r)
    for (int64_t c = 0; c < 32; ++c) {
      REQUIRE(h(r, c) >= 0.0);
      REQUIRE(h(r, c) <= 1.0);
      if (h(r, c) > best) {
        best = h(r, c);
        br = r;
        bc = c;
      }
    }
  REQUIRE(best == 1.0);
  REQUIRE(br >= 8);
  REQUIRE(br < 16);
  REQUIRE(bc >= 16);
  REQUIRE(bc < 24);
}

TEST_CASE("heatmap constants collapse to zero and scaling is exact") {
  Tensor<double> flat({3, 3, 5});
  flat.fill(2.5);
  const Tensor<double> z =
      speech_prompted_heatmap(flat, {"w", 0.0, 0.4}, 100.0, 8, 24);
  for (int64_t i = 0; i < z.numel(); ++i) REQUIRE(z.at_flat(i) == 0.0);

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> m({4, 4, 6});
    for (int64_t i = 0; i < m.numel(); ++i) m.at_flat(i) = rng.uniform(-1, 1);
    const WordAlignment a{"w", 0.1, 0.4};
    const Tensor<double> base = speech_prompted_heatmap(m, a, 100.0, 8, 40);
    Tensor<double> scaled = m;
    for (int64_t i = 0; i < m.numel(); ++i) scaled.at_flat(i) *= 4.0;
    const Tensor<double> again = speech_prompted_heatmap(scaled, a, 100.0, 8, 40);
    for (int64_t i = 0; i < base.numel(); ++i)
      REQUIRE(again.at_flat(i) == base.at_flat(i));
  }
}

TEST_CASE("macro iou averages pairs unweighted") {
  std::vector<PairResult> pairs;
  pairs.push_back({"red", "red_rectangle", 4, 0.5});
  pairs.push_back({"blue", "blue_circle", 9, 0.25});
  REQUIRE(macro_iou(pairs) == Approx(0.375));
  pairs.push_back({"lime", "lime_rectangle", 1, 1.0});
  REQUIRE(macro_iou(pairs) == Approx((0.5 + 0.25 + 1.0) / 3));
  REQUIRE_THROWS_AS(macro_iou({}), Error);
}
