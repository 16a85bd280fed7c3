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

// Concept-dictionary analysis: per-dimension top activations in both
// branches, IoU-weighted class profiles, and the concept value metric.

#ifndef MATCHMAP_CONCEPTS_HPP_
#define MATCHMAP_CONCEPTS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "matchmap/common.hpp"
#include "matchmap/metrics.hpp"
#include "matchmap/taxonomy.hpp"
#include "matchmap/tensor.hpp"

namespace mm {

// One image's response to a dimension: its peak activation and the cell
// mask within 50% of that peak.
struct ImageActivation {
  int64_t index = 0;
  double peak = 0;
  Tensor<uint16_t> mask;
};

// One caption's response to a dimension.
struct WordActivation {
  int64_t index = 0;
  double peak = 0;
  int64_t frame = 0;
  std::string word;
};

struct ClassWeight {
  std::string label;
  double weight = 0;
};

struct DimensionProfile {
  int64_t dim = 0;
  std::vector<ImageActivation> images;
  std::string audio_word;
  std::vector<ClassWeight> weights;
};

struct ConceptScore {
  int64_t dim = 0;
  double value = 0;
};

// Ranks images by their peak activation of dimension d, descending with
// ties in input order. The mask keeps cells within 50% of the peak; for a
// negative peak the band peak - |peak|/2 still contains the argmax cell.
template <typename T>
std::vector<ImageActivation> top_activated_images(
    const std::vector<Tensor<T>>& maps, int64_t d, int64_t k = 5) {
  check(!maps.empty(), "top_activated_images: no images");
  check(k >= 1, "top_activated_images: k must be >= 1");
  std::vector<ImageActivation> all;
  all.reserve(maps.size());
  for (size_t i = 0; i < maps.size(); ++i) {
    const Tensor<T>& m = maps[i];
    check(m.rank() == 3, "top_activated_images: maps must be (D, R, C)");
    check(d >= 0 && d < m.extent(0), "top_activated_images: dimension ", d,
          " out of range [0, ", m.extent(0), ")");
    const int64_t R = m.extent(1), C = m.extent(2);
    ImageActivation act;
    act.index = int64_t(i);
    act.peak = double(m(d, 0, 0));
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c)
        act.peak = std::max(act.peak, double(m(d, r, c)));
    const double cutoff = act.peak - 0.5 * std::abs(act.peak);
    act.mask = Tensor<uint16_t>({R, C});
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c)
        act.mask(r, c) = double(m(d, r, c)) >= cutoff ? 1 : 0;
    all.push_back(std::move(act));
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const ImageActivation& a, const ImageActivation& b) {
                     return a.peak > b.peak;
                   });
  if (int64_t(all.size()) > k) all.resize(static_cast<size_t>(k));
  return all;
}

namespace detail {

// The aligned word overlapping input frames [frame*down, (frame+1)*down) at
// frame_rate_in frames per second; maximal overlap wins, ties to the
// earlier word, none gives "(none)".
inline std::string word_at_frame(const std::vector<WordAlignment>& aligns,
                                 int64_t frame, double frame_rate_in,
                                 int64_t downsample) {
  const double lo = double(frame * downsample) / frame_rate_in;
  const double hi = double((frame + 1) * downsample) / frame_rate_in;
  std::string best = "(none)";
  double best_overlap = 0;
  for (const WordAlignment& a : aligns) {
    const double overlap = std::min(hi, a.t2) - std::max(lo, a.t1);
    if (overlap > best_overlap) {
      best_overlap = overlap;
      best = a.word;
    }
  }
  return best;
}

}  // namespace detail

// Ranks captions by their peak activation of dimension d and maps each
// argmax frame back to the aligned word covering it.
template <typename T>
std::vector<WordActivation> top_activated_words(
    const std::vector<Tensor<T>>& maps,
    const std::vector<std::vector<WordAlignment>>& alignments, int64_t d,
    int64_t k = 5, double frame_rate_in = 100.0, int64_t downsample = 8) {
  check(!maps.empty(), "top_activated_words: no captions");
  check(maps.size() == alignments.size(),
        "top_activated_words: ", maps.size(), " maps vs ", alignments.size(),
        " alignment lists");
  check(k >= 1, "top_activated_words: k must be >= 1");
  std::vector<WordActivation> all;
  all.reserve(maps.size());
  for (size_t i = 0; i < maps.size(); ++i) {
    const Tensor<T>& m = maps[i];
    check(m.rank() == 2, "top_activated_words: maps must be (D, T)");
    check(d >= 0 && d < m.extent(0), "top_activated_words: dimension ", d,
          " out of range [0, ", m.extent(0), ")");
    WordActivation act;
    act.index = int64_t(i);
    act.peak = double(m(d, 0));
    for (int64_t t = 1; t < m.extent(1); ++t)
      if (double(m(d, t)) > act.peak) {
        act.peak = double(m(d, t));
        act.frame = t;
      }
    act.word = detail::word_at_frame(alignments[i], act.frame, frame_rate_in,
                                     downsample);
    all.push_back(std::move(act));
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const WordActivation& a, const WordActivation& b) {
                     return a.peak > b.peak;
                   });
  if (int64_t(all.size()) > k) all.resize(static_cast<size_t>(k));
  return all;
}

// Modal word among activations, "(none)" entries excluded; ties pick the
// lexicographically smaller word. All "(none)" yields "(none)".
inline std::string modal_word(const std::vector<WordActivation>& acts) {
  std::map<std::string, int64_t> counts;
  for (const WordActivation& a : acts)
    if (a.word != "(none)") counts[a.word] += 1;
  std::string best = "(none)";
  int64_t best_count = 0;
  for (const auto& [word, count] : counts)
    if (count > best_count) {
      best_count = count;
      best = word;
    }
  return best;
}

// Micro IoU of each class's labeled pixels against the activation masks
// over the top images, normalized to sum 1. Activation cells expand to
// cell_pixels x cell_pixels pixel blocks; unlabeled (zero) pixels drop out
// of both the numerator and the denominator.
inline std::vector<ClassWeight> class_iou_weights(
    const std::vector<ImageActivation>& top,
    const std::vector<const Tensor<uint16_t>*>& label_masks,
    const std::vector<std::string>& class_names, int64_t cell_pixels) {
  check(top.size() == label_masks.size(),
        "class_iou_weights: ", top.size(), " activations vs ",
        label_masks.size(), " label masks");
  check(cell_pixels >= 1, "class_iou_weights: bad cell size");
  const int64_t K = int64_t(class_names.size());
  std::vector<int64_t> inter(static_cast<size_t>(K), 0);
  std::vector<int64_t> uni(static_cast<size_t>(K), 0);
  for (size_t i = 0; i < top.size(); ++i) {
    const Tensor<uint16_t>& labels = *label_masks[i];
    check(labels.rank() == 2, "class_iou_weights: label masks must be (H, W)");
    const Tensor<uint16_t>& cells = top[i].mask;
    check(labels.extent(0) == cells.extent(0) * cell_pixels &&
              labels.extent(1) == cells.extent(1) * cell_pixels,
          "class_iou_weights: label mask ", shape_str(labels.shape()),
          " does not cover ", shape_str(cells.shape()), " cells of ",
          cell_pixels, " pixels");
    for (int64_t y = 0; y < labels.extent(0); ++y)
      for (int64_t x = 0; x < labels.extent(1); ++x) {
        const uint16_t label = labels(y, x);
        if (label == 0) continue;
        check(int64_t(label) <= K, "class_iou_weights: label ", label,
              " exceeds the class table");
        const bool act = cells(y / cell_pixels, x / cell_pixels) != 0;
        for (int64_t c = 0; c < K; ++c) {
          const bool is_class = int64_t(label) == c + 1;
          inter[static_cast<size_t>(c)] += act && is_class;
          uni[static_cast<size_t>(c)] += act || is_class;
        }
      }
  }
  std::vector<ClassWeight> weights;
  double total = 0;
  for (int64_t c = 0; c < K; ++c) {
    if (uni[static_cast<size_t>(c)] == 0 || inter[static_cast<size_t>(c)] == 0)
      continue;
    const double w = double(inter[static_cast<size_t>(c)]) /
                     double(uni[static_cast<size_t>(c)]);
    weights.push_back({class_names[static_cast<size_t>(c)], w});
    total += w;
  }
  for (ClassWeight& w : weights) w.weight /= total;
  return weights;
}

// c = sum of w_i * wu_palmer(o_i, o_au). Empty profiles score 0 with a
// warning; an audio word outside the taxonomy is an error.
inline ConceptScore concept_value(const DimensionProfile& profile,
                                  const Taxonomy& tax) {
  check(tax.contains(profile.audio_word), "concept_value: audio word '",
        profile.audio_word, "' is not in the taxonomy");
  if (profile.weights.empty()) {
    warn("concept_value: dimension ", profile.dim,
         " has no image classes, scoring 0");
    return {profile.dim, 0.0};
  }
  double c = 0;
  for (const ClassWeight& w : profile.weights)
    c += w.weight * wu_palmer(tax, w.label, profile.audio_word);
  return {profile.dim, c};
}

// Dimensions scoring strictly above the threshold.
inline int64_t count_learned_concepts(const std::vector<ConceptScore>& scores,
                                      double threshold = 0.6) {
  int64_t n = 0;
  for (const ConceptScore& s : scores) n += s.value > threshold;
  return n;
}

}  // namespace mm

#endif  // MATCHMAP_CONCEPTS_HPP_
