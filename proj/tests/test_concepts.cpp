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
#include <fstream>
#include <string>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "helpers.hpp"
#include "matchmap/concepts.hpp"

using namespace mm;
using namespace mmtest;
using Catch::Approx;

namespace {

using Edges = std::vector<std::pair<std::string, std::string>>;

Taxonomy animal_tree() {
  return make_taxonomy(Edges{{"root", "animal"},
                             {"root", "plant"},
                             {"animal", "dog"},
                             {"animal", "cat"},
                             {"plant", "tree"}});
}

}  // namespace

TEST_CASE("taxonomy construction and validation") {
  const Taxonomy t = animal_tree();
  CHECK(t.root == "root");
  CHECK(t.depth_of("root") == 1);
  CHECK(t.depth_of("animal") == 2);
  CHECK(t.depth_of("plant") == 2);
  CHECK(t.depth_of("dog") == 3);
  CHECK(t.depth_of("tree") == 3);
  CHECK(t.contains("cat"));
  CHECK_FALSE(t.contains("fish"));
  CHECK_THROWS_AS(t.depth_of("fish"), Error);

  CHECK_THROWS_AS(make_taxonomy(Edges{}), Error);
  CHECK_THROWS_AS(make_taxonomy(Edges{{"", "a"}}), Error);
  CHECK_THROWS_AS(make_taxonomy(Edges{{"a", "a"}}), Error);
  // Two parents for one child.
  CHECK_THROWS_AS(make_taxonomy(Edges{{"r", "a"}, {"r", "b"}, {"a", "x"},
                                      {"b", "x"}}),
                  Error);
  // Two disconnected roots.
  CHECK_THROWS_AS(make_taxonomy(Edges{{"r1", "a"}, {"r2", "b"}}), Error);
  // Pure cycle, no root at all.
  CHECK_THROWS_AS(make_taxonomy(Edges{{"a", "b"}, {"b", "a"}}), Error);
  // Cycle disjoint from a valid root.
  CHECK_THROWS_AS(make_taxonomy(Edges{{"root", "a"}, {"b", "c"}, {"c", "b"}}),
                  Error);
}

TEST_CASE("taxonomy file loading") {
  TempDir dir("concepts");
  {
    std::ofstream os(dir.file("tax.tsv"), std::ios::binary);
    os << "root\tanimal\r\n";
    os << "\n";
    os << "animal\tdog\n";
    os << "animal\tcat\n";
  }
  const Taxonomy t = load_taxonomy(dir.file("tax.tsv"));
  CHECK(t.root == "root");
  CHECK(t.depth_of("dog") == 3);
  CHECK(t.parent.at("cat") == "animal");

  {
    std::ofstream os(dir.file("notab.tsv"));
    os << "root\tanimal\n";
    os << "missing tab here\n";
  }
  CHECK_THROWS_WITH(load_taxonomy(dir.file("notab.tsv")),
                    Catch::Matchers::ContainsSubstring(":2:"));
  {
    std::ofstream os(dir.file("empty_side.tsv"));
    os << "root\t\n";
  }
  CHECK_THROWS_AS(load_taxonomy(dir.file("empty_side.tsv")), Error);
  CHECK_THROWS_AS(load_taxonomy(dir.file("absent.tsv")), Error);
}

TEST_CASE("wu_palmer matches the formula on frozen trees") {
  const Taxonomy t = animal_tree();
  CHECK(wu_palmer(t, "dog", "cat") == Approx(2.0 / 3.0));
  CHECK(wu_palmer(t, "root", "dog") == Approx(0.5));
  CHECK(wu_palmer(t, "dog", "animal") == Approx(0.8));
  CHECK(wu_palmer(t, "dog", "tree") == Approx(2.0 / 6.0));
  CHECK(wu_palmer(t, "animal", "plant") == Approx(0.5));
  for (const std::string x : {"root", "animal", "dog", "tree"})
    CHECK(wu_palmer(t, x, x) == 1.0);
  CHECK_THROWS_AS(wu_palmer(t, "dog", "fish"), Error);
  CHECK_THROWS_AS(wu_palmer(t, "fish", "dog"), Error);
}

TEST_CASE("wu_palmer symmetry and ancestor dominance") {
  const Taxonomy t = animal_tree();
  const std::vector<std::string> labels = {"root",  "animal", "plant",
                                           "dog",   "cat",    "tree"};
  for (const std::string& a : labels)
    for (const std::string& b : labels) {
      const double s = wu_palmer(t, a, b);
      CHECK(s == wu_palmer(t, b, a));
      CHECK(s > 0.0);
      CHECK(s <= 1.0);
      CHECK((s == 1.0) == (a == b));
    }
  // At equal depth, the ancestor of dog scores above the non-ancestor.
  CHECK(wu_palmer(t, "dog", "animal") > wu_palmer(t, "dog", "plant"));
}

TEST_CASE("top_activated_images ranks by peak and masks half the peak") {
  std::vector<Tensor<float>> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(Tensor<float>({2, 2, 2}));
  // Dimension 0 peaks: 5, 9, 7. Dimension 1 reverses the order.
  maps[0](0, 1, 0) = 5.0f;
  maps[1](0, 0, 0) = 4.0f;
  maps[1](0, 0, 1) = 9.0f;
  maps[1](0, 1, 0) = 4.5f;
  maps[1](0, 1, 1) = -1.0f;
  maps[2](0, 0, 0) = 7.0f;
  maps[0](1, 0, 0) = 3.0f;
  maps[1](1, 0, 0) = 2.0f;
  maps[2](1, 0, 0) = 1.0f;

  const auto top = top_activated_images(maps, 0, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].index == 1);
  CHECK(top[0].peak == Approx(9.0));
  CHECK(top[1].index == 2);
  // Peak 9 cuts at 4.5; the 4.5 cell stays, the 4.0 cell drops.
  CHECK(top[0].mask(0, 0) == 0);
  CHECK(top[0].mask(0, 1) == 1);
  CHECK(top[0].mask(1, 0) == 1);
  CHECK(top[0].mask(1, 1) == 0);

  const auto all = top_activated_images(maps, 0, 5);
  REQUIRE(all.size() == 3);
  CHECK(all[2].index == 0);

  const auto other = top_activated_images(maps, 1, 3);
  CHECK(other[0].index == 0);
  CHECK(other[2].index == 2);

  CHECK_THROWS_AS(top_activated_images(maps, 2, 5), Error);
  CHECK_THROWS_AS(top_activated_images(maps, -1, 5), Error);
  CHECK_THROWS_AS(top_activated_images(maps, 0, 0), Error);
  CHECK_THROWS_AS(top_activated_images(std::vector<Tensor<float>>{}, 0, 5),
                  Error);
}

TEST_CASE("top_activated_images ties, negative peaks, mask invariant") {
  // Constant maps tie; ranking falls back to input order.
  std::vector<Tensor<float>> flat;
  for (int i = 0; i < 4; ++i) {
    flat.push_back(Tensor<float>({1, 2, 2}));
    flat.back().fill(2.5f);
  }
  const auto tied = top_activated_images(flat, 0, 3);
  REQUIRE(tied.size() == 3);
  CHECK(tied[0].index == 0);
  CHECK(tied[1].index == 1);
  CHECK(tied[2].index == 2);
  for (const auto& a : tied) {
    // Every cell equals the peak, so every cell is in the mask.
    CHECK(a.mask(0, 0) == 1);
    CHECK(a.mask(1, 1) == 1);
  }

  // A negative peak still anchors a non-empty mask.
  std::vector<Tensor<float>> neg;
  neg.push_back(Tensor<float>({1, 1, 2}));
  neg[0](0, 0, 0) = -2.0f;
  neg[0](0, 0, 1) = -10.0f;
  const auto n = top_activated_images(neg, 0, 1);
  CHECK(n[0].peak == Approx(-2.0));
  CHECK(n[0].mask(0, 0) == 1);
  CHECK(n[0].mask(0, 1) == 0);

  // The argmax cell is always masked; mask membership matches the cutoff.
  Rng rng(404);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor<float>> ms;
    for (int i = 0; i < 3; ++i) {
      ms.push_back(Tensor<float>({3, 4, 4}));
      for (int64_t j = 0; j < ms.back().numel(); ++j)
        ms.back().data()[j] = float(rng.normal() * 3.0);
    }
    const int64_t d = rng.uniform_int(0, 2);
    for (const auto& act : top_activated_images(ms, d, 3)) {
      const Tensor<float>& m = ms[static_cast<size_t>(act.index)];
      const double cutoff = act.peak - 0.5 * std::abs(act.peak);
      bool peak_masked = false;
      for (int64_t r = 0; r < 4; ++r)
        for (int64_t c = 0; c < 4; ++c) {
          CHECK(act.mask(r, c) == (double(m(d, r, c)) >= cutoff ? 1 : 0));
          if (act.mask(r, c) && double(m(d, r, c)) == act.peak)
            peak_masked = true;
        }
      CHECK(peak_masked);
    }
  }
}

TEST_CASE("top_activated_words maps argmax frames to aligned words") {
  // Frame 16 at downsample 8 covers input frames [128, 136), which at
  // 100 frames per second is the interval [1.28 s, 1.36 s).
  std::vector<Tensor<float>> maps;
  maps.push_back(Tensor<float>({1, 20}));
  maps[0](0, 16) = 3.0f;
  std::vector<std::vector<WordAlignment>> aligns(1);
  aligns[0] = {{"red", 0.0, 0.10}, {"blue", 1.20, 1.40}};
  auto top = top_activated_words(maps, aligns, 0, 5);
  REQUIRE(top.size() == 1);
  CHECK(top[0].frame == 16);
  CHECK(top[0].peak == Approx(3.0));
  CHECK(top[0].word == "blue");

  // Equal overlap on both sides of the window; the earlier word wins.
  aligns[0] = {{"one", 1.24, 1.32}, {"two", 1.32, 1.40}};
  CHECK(top_activated_words(maps, aligns, 0, 5)[0].word == "one");

  // No alignment overlaps the window.
  aligns[0] = {{"far", 2.0, 2.5}};
  CHECK(top_activated_words(maps, aligns, 0, 5)[0].word == "(none)");
  aligns[0] = {};
  CHECK(top_activated_words(maps, aligns, 0, 5)[0].word == "(none)");

  // Single caption, single word covering everything.
  aligns[0] = {{"word", 0.0, 2.0}};
  CHECK(top_activated_words(maps, aligns, 0, 5)[0].word == "word");
}

TEST_CASE("top_activated_words ranking and argument checks") {
  std::vector<Tensor<float>> maps;
  std::vector<std::vector<WordAlignment>> aligns;
  const double peaks[3] = {2.0, 5.0, 2.0};
  for (int i = 0; i < 3; ++i) {
    maps.push_back(Tensor<float>({2, 6}));
    maps.back()(0, i) = float(peaks[i]);
    aligns.push_back({{"w" + std::to_string(i), 0.0, 1.0}});
  }
  const auto top = top_activated_words(maps, aligns, 0, 5);
  REQUIRE(top.size() == 3);
  CHECK(top[0].index == 1);
  CHECK(top[1].index == 0);  // tie with caption 2 resolves to input order
  CHECK(top[2].index == 2);
  CHECK(top[0].word == "w1");

  const auto two = top_activated_words(maps, aligns, 0, 2);
  REQUIRE(two.size() == 2);
  CHECK(two[1].index == 0);

  CHECK_THROWS_AS(top_activated_words(maps, aligns, 2, 5), Error);
  CHECK_THROWS_AS(top_activated_words(maps, aligns, 0, 0), Error);
  aligns.pop_back();
  CHECK_THROWS_AS(top_activated_words(maps, aligns, 0, 5), Error);
}

TEST_CASE("modal word excludes (none) and breaks ties lexicographically") {
  auto acts = [](const std::vector<std::string>& words) {
    std::vector<WordActivation> v;
    for (const std::string& w : words) v.push_back({0, 0.0, 0, w});
    return v;
  };
  CHECK(modal_word(acts({"blue", "red", "blue"})) == "blue");
  CHECK(modal_word(acts({"blue", "(none)", "(none)", "red", "red"})) == "red");
  // Two-way tie picks the smaller word.
  CHECK(modal_word(acts({"red", "blue", "red", "blue"})) == "blue");
  CHECK(modal_word(acts({"(none)", "(none)"})) == "(none)");
  CHECK(modal_word({}) == "(none)");
}

TEST_CASE("class_iou_weights aggregates micro IoU without unlabeled pixels") {
  // Image A: activation covers the top-left 2x2 pixel block.
  ImageActivation a;
  a.index = 0;
  a.mask = Tensor<uint16_t>({2, 2});
  a.mask(0, 0) = 1;
  Tensor<uint16_t> la({4, 4});
  la(0, 0) = 1;
  la(0, 1) = 1;
  la(2, 0) = 1;
  la(1, 0) = 2;
  la(0, 3) = 2;
  // Pixel (1,1) is activated but unlabeled; it must not enter any union.

  SECTION("single image") {
    // Class 1: inter 2, union 4. Class 2: inter 1, union 4.
    const auto w =
        class_iou_weights({a}, {&la}, {"c1", "c2"}, 2);
    REQUIRE(w.size() == 2);
    CHECK(w[0].label == "c1");
    CHECK(w[0].weight == Approx(2.0 / 3.0));
    CHECK(w[1].label == "c2");
    CHECK(w[1].weight == Approx(1.0 / 3.0));
  }

  SECTION("counts pool across images before dividing") {
    ImageActivation b;
    b.index = 1;
    b.mask = Tensor<uint16_t>({2, 2});
    b.mask(1, 1) = 1;
    Tensor<uint16_t> lb({4, 4});
    lb(2, 2) = 1;
    lb(2, 3) = 1;
    lb(0, 0) = 1;
    // Class 1: inter 2+2, union 4+3 -> 4/7. Class 2: inter 1+0, and B's
    // two activated labeled pixels join its union too: 4+2 -> 1/6.
    const auto w = class_iou_weights({a, b}, {&la, &lb}, {"c1", "c2"}, 2);
    REQUIRE(w.size() == 2);
    const double total = 4.0 / 7.0 + 1.0 / 6.0;
    CHECK(w[0].weight == Approx((4.0 / 7.0) / total));
    CHECK(w[1].weight == Approx((1.0 / 6.0) / total));
    CHECK(w[0].weight + w[1].weight == Approx(1.0));
  }

  SECTION("classes the activation never touches drop out") {
    Tensor<uint16_t> lc({4, 4});
    lc(3, 3) = 2;  // class 2 exists but never intersects the activation
    lc(0, 0) = 1;
    const auto w = class_iou_weights({a}, {&lc}, {"c1", "c2"}, 2);
    REQUIRE(w.size() == 1);
    CHECK(w[0].label == "c1");
    CHECK(w[0].weight == 1.0);
  }

  SECTION("no labeled overlap at all") {
    Tensor<uint16_t> zero({4, 4});
    CHECK(class_iou_weights({a}, {&zero}, {"c1", "c2"}, 2).empty());
  }

  SECTION("argument checks") {
    Tensor<uint16_t> bad({4, 4});
    bad(0, 0) = 3;  // exceeds the two-class table
    CHECK_THROWS_AS(class_iou_weights({a}, {&bad}, {"c1", "c2"}, 2), Error);
    Tensor<uint16_t> wrong({3, 4});
    CHECK_THROWS_AS(class_iou_weights({a}, {&wrong}, {"c1", "c2"}, 2), Error);
    CHECK_THROWS_AS(class_iou_weights({a}, {&la, &la}, {"c1"}, 2), Error);
    CHECK_THROWS_AS(class_iou_weights({a}, {&la}, {"c1", "c2"}, 0), Error);
  }
}

TEST_CASE("concept_value is the weighted Wu-Palmer sum") {
  // Chain to depth 4 with leaves a, b under it and c on a side branch:
  // wu(b, a) = 2*4/10 = 0.8, wu(c, a) = 2*2/10 = 0.4.
  const Taxonomy t = make_taxonomy(Edges{{"root", "n2"},
                                         {"n2", "n3"},
                                         {"n3", "n4"},
                                         {"n4", "a"},
                                         {"n4", "b"},
                                         {"n2", "c3"},
                                         {"c3", "c4"},
                                         {"c4", "c"}});
  REQUIRE(wu_palmer(t, "b", "a") == Approx(0.8));
  REQUIRE(wu_palmer(t, "c", "a") == Approx(0.4));

  DimensionProfile p;
  p.dim = 7;
  p.audio_word = "a";
  p.weights = {{"b", 0.75}, {"c", 0.25}};
  const ConceptScore s = concept_value(p, t);
  CHECK(s.dim == 7);
  CHECK(s.value == Approx(0.7));

  p.weights = {{"a", 1.0}};
  CHECK(concept_value(p, t).value == Approx(1.0));

  p.weights = {};
  CHECK(concept_value(p, t).value == 0.0);

  p.audio_word = "zzz";
  p.weights = {{"a", 1.0}};
  CHECK_THROWS_AS(concept_value(p, t), Error);

  // Convexity: any normalized profile lands in [min sim, max sim].
  const std::vector<std::string> pool = {"a", "b", "c", "n3", "c4"};
  Rng rng(88);
  for (int trial = 0; trial < 40; ++trial) {
    DimensionProfile q;
    q.dim = trial;
    q.audio_word = pool[static_cast<size_t>(rng.uniform_int(0, 4))];
    double total = 0;
    for (const std::string& label : pool) {
      const double w = rng.uniform();
      q.weights.push_back({label, w});
      total += w;
    }
    double lo = 1.0, hi = 0.0;
    for (ClassWeight& w : q.weights) {
      w.weight /= total;
      const double sim = wu_palmer(t, w.label, q.audio_word);
      lo = std::min(lo, sim);
      hi = std::max(hi, sim);
    }
    const double v = concept_value(q, t).value;
    CHECK(v >= lo - 1e-12);
    CHECK(v <= hi + 1e-12);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("count_learned_concepts uses a strict threshold") {
  std::vector<ConceptScore> scores = {{0, 0.5}, {1, 0.61}, {2, 0.9}};
  CHECK(count_learned_concepts(scores, 0.6) == 2);
  CHECK(count_learned_concepts(scores, 0.9) == 0);  // strict at the boundary
  CHECK(count_learned_concepts(scores, 0.0) == 3);
  CHECK(count_learned_concepts({}, 0.6) == 0);
  CHECK(count_learned_concepts({{0, 0.0}, {1, 0.0}}, 0.6) == 0);

  Rng rng(31);
  std::vector<ConceptScore> rand;
  for (int i = 0; i < 60; ++i) rand.push_back({i, rng.uniform()});
  int64_t prev = int64_t(rand.size());
  for (double th = 0.0; th <= 1.0; th += 0.05) {
    const int64_t n = count_learned_concepts(rand, th);
    CHECK(n <= prev);
    prev = n;
  }
}
