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

// Audio-visual pattern discovery: pooled component features, norm
// rescaling, and cluster labeling with purity scores.

#ifndef MATCHMAP_DISCOVERY_HPP_
#define MATCHMAP_DISCOVERY_HPP_

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "matchmap/birch.hpp"
#include "matchmap/common.hpp"
#include "matchmap/matchmap_post.hpp"
#include "matchmap/tensor.hpp"

namespace mm {

// Pooled embeddings of one component; concat stays empty until rescaling.
struct ComponentFeature {
  int64_t component_id = 0;
  std::vector<double> image;
  std::vector<double> audio;
  std::vector<double> concat;
};

// Word and object evidence attached to one component. An empty word marks
// an unlabeled component; pixel_counts holds labeled pixels only.
struct ComponentAnnotation {
  std::string word;
  std::map<std::string, int64_t> pixel_counts;
};

struct Cluster {
  std::vector<int64_t> members;
  std::string word_label;
  std::string object_label;
  double word_precision = 0;
  double object_precision = 0;
  double harmonic = 0;
  int64_t size = 0;
};

// 2pq / (p + q), zero when both vanish.
inline double harmonic_mean(double p, double q) {
  return p + q == 0 ? 0.0 : 2.0 * p * q / (p + q);
}

// Mean image vector over the mask projection and mean audio vector over the
// component's frame span.
template <typename T>
ComponentFeature pool_component_features(const ComponentRecord& comp,
                                         const Tensor<T>& img,
                                         const Tensor<T>& aud) {
  check(img.rank() == 3, "pool: image map must be (D, R, C), got ",
        shape_str(img.shape()));
  check(aud.rank() == 2, "pool: audio map must be (D, T), got ",
        shape_str(aud.shape()));
  check(img.extent(0) == aud.extent(0), "pool: embed dims differ");
  check(!comp.voxels.empty(), "pool: empty component");
  const int64_t D = img.extent(0), R = img.extent(1), C = img.extent(2);
  const int64_t Tn = aud.extent(1);
  check(comp.mask.rank() == 2 && comp.mask.extent(0) == R &&
            comp.mask.extent(1) == C,
        "pool: component mask is ", shape_str(comp.mask.shape()),
        " but the image map is ", shape_str(img.shape()));
  check(comp.t_start >= 0 && comp.t_end < Tn,
        "pool: component frames [", comp.t_start, ", ", comp.t_end,
        "] exceed the audio map length ", Tn);
  ComponentFeature f;
  f.component_id = comp.id;
  f.image.assign(static_cast<size_t>(D), 0.0);
  f.audio.assign(static_cast<size_t>(D), 0.0);
  int64_t cells = 0;
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) {
      if (comp.mask(r, c) == 0) continue;
      ++cells;
      for (int64_t d = 0; d < D; ++d)
        f.image[static_cast<size_t>(d)] += double(img(d, r, c));
    }
  check(cells > 0, "pool: empty mask");
  for (int64_t d = 0; d < D; ++d) f.image[static_cast<size_t>(d)] /= double(cells);
  const int64_t span = comp.t_end - comp.t_start + 1;
  for (int64_t t = comp.t_start; t <= comp.t_end; ++t)
    for (int64_t d = 0; d < D; ++d)
      f.audio[static_cast<size_t>(d)] += double(aud(d, t));
  for (int64_t d = 0; d < D; ++d) f.audio[static_cast<size_t>(d)] /= double(span);
  return f;
}

// Divides every image vector by the mean image L2 norm and every audio
// vector by the mean audio norm, then fills concat as image followed by
// audio. Scale-invariant per modality and idempotent.
inline void rescale_by_avg_norm(std::vector<ComponentFeature>* features) {
  check(features && !features->empty(), "rescale: no features");
  double img_norm = 0, aud_norm = 0;
  for (const ComponentFeature& f : *features) {
    double i2 = 0, a2 = 0;
    for (double v : f.image) i2 += v * v;
    for (double v : f.audio) a2 += v * v;
    img_norm += std::sqrt(i2);
    aud_norm += std::sqrt(a2);
  }
  img_norm /= double(features->size());
  aud_norm /= double(features->size());
  check(img_norm > 0, "rescale: zero mean image norm");
  check(aud_norm > 0, "rescale: zero mean audio norm");
  for (ComponentFeature& f : *features) {
    for (double& v : f.image) v /= img_norm;
    for (double& v : f.audio) v /= aud_norm;
    f.concat.clear();
    f.concat.reserve(f.image.size() + f.audio.size());
    f.concat.insert(f.concat.end(), f.image.begin(), f.image.end());
    f.concat.insert(f.concat.end(), f.audio.begin(), f.audio.end());
  }
}

// Stacks the concatenated vectors into an (N, 2D) matrix for clustering.
inline Tensor<double> feature_matrix(
    const std::vector<ComponentFeature>& features) {
  check(!features.empty(), "feature_matrix: no features");
  const int64_t n = int64_t(features.size());
  const int64_t dim = int64_t(features[0].concat.size());
  check(dim > 0, "feature_matrix: features are not rescaled yet");
  Tensor<double> out({n, dim});
  for (int64_t i = 0; i < n; ++i) {
    check(int64_t(features[static_cast<size_t>(i)].concat.size()) == dim,
          "feature_matrix: ragged features");
    for (int64_t d = 0; d < dim; ++d)
      out(i, d) = features[static_cast<size_t>(i)].concat[static_cast<size_t>(d)];
  }
  return out;
}

// Labels each member group: modal word (lexicographic ties), argmax of the
// summed pixel histogram, and the two precisions with their harmonic mean.
// Members lacking a word label are skipped and counted in *unlabeled.
inline std::vector<Cluster> label_and_score(
    const std::vector<std::vector<int64_t>>& groups,
    const std::vector<ComponentAnnotation>& annotations,
    int64_t* unlabeled = nullptr) {
  if (unlabeled) *unlabeled = 0;
  std::vector<Cluster> out;
  out.reserve(groups.size());
  for (const std::vector<int64_t>& members : groups) {
    Cluster cl;
    cl.members = members;
    cl.size = int64_t(members.size());
    std::map<std::string, int64_t> words;
    std::map<std::string, int64_t> pixels;
    int64_t labeled = 0;
    for (int64_t id : members) {
      check(id >= 0 && id < int64_t(annotations.size()),
            "label_and_score: component id ", id, " out of range");
      const ComponentAnnotation& ann = annotations[static_cast<size_t>(id)];
      if (ann.word.empty()) {
        if (unlabeled) ++*unlabeled;
        continue;
      }
      ++labeled;
      words[ann.word] += 1;
      for (const auto& [label, count] : ann.pixel_counts)
        pixels[label] += count;
    }
    if (labeled > 0) {
      int64_t best_word = 0;
      for (const auto& [word, count] : words)
        if (count > best_word) {
          best_word = count;
          cl.word_label = word;
        }
      cl.word_precision = double(best_word) / double(labeled);
    }
    int64_t pixel_total = 0, best_pixels = 0;
    for (const auto& [label, count] : pixels) {
      pixel_total += count;
      if (count > best_pixels) {
        best_pixels = count;
        cl.object_label = label;
      }
    }
    if (pixel_total > 0)
      cl.object_precision = double(best_pixels) / double(pixel_total);
    cl.harmonic = harmonic_mean(cl.word_precision, cl.object_precision);
    out.push_back(std::move(cl));
  }
  return out;
}

}  // namespace mm

#endif  // MATCHMAP_DISCOVERY_HPP_
