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

// Post-training pipelines over a loaded corpus: eval-mode feature maps,
// retrieval recall, speech-prompted localization, cluster discovery,
// concept scoring, and mask-sequence export.

#ifndef MATCHMAP_ANALYSIS_HPP_
#define MATCHMAP_ANALYSIS_HPP_

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "matchmap/birch.hpp"
#include "matchmap/common.hpp"
#include "matchmap/concepts.hpp"
#include "matchmap/dataset.hpp"
#include "matchmap/discovery.hpp"
#include "matchmap/encoders.hpp"
#include "matchmap/matchmap_post.hpp"
#include "matchmap/metrics.hpp"
#include "matchmap/similarity.hpp"
#include "nlohmann/json.hpp"

namespace mm {

// ---------------------------------------------------------------------------
// eval-mode forward passes

struct SampleMaps {
  Tensor<float> image;  // (D, R, C)
  Tensor<float> audio;  // (D, T'), truncated to the caption's own frames
};

inline SampleMaps eval_forward(const ModelConfig& cfg, ParamStore<float>& ps,
                               const ImageStats& stats,
                               const Tensor<float>& raw_image,
                               const Tensor<float>& spec) {
  Graph<float> g;
  Var x = g.input(preprocess_image(raw_image, cfg.image, stats, false));
  Var im = image_forward(g, cfg.image, ps, x);

  check(spec.rank() == 2, "eval forward: spectrogram must be (bands, T)");
  const int64_t bands = spec.extent(0), Tn = spec.extent(1);
  Tensor<float> batch({1, 1, bands, Tn});
  for (int64_t b = 0; b < bands; ++b)
    for (int64_t t = 0; t < Tn; ++t) batch(0, 0, b, t) = spec(b, t);
  AudioForward af =
      audio_forward(g, cfg.audio, ps, g.input(std::move(batch)), {Tn}, false);
  Var am = slice_time(g, af.map, 0, af.lengths[0]);
  return {g.value(im), g.value(am)};
}

struct CorpusMaps {
  std::vector<Tensor<float>> img;
  std::vector<Tensor<float>> aud;

  int64_t size() const { return int64_t(img.size()); }
};

inline CorpusMaps compute_maps(const ModelConfig& cfg, ParamStore<float>& ps,
                               const ImageStats& stats,
                               const LoadedCorpus& corpus) {
  CorpusMaps maps;
  maps.img.reserve(corpus.images.size());
  maps.aud.reserve(corpus.specs.size());
  for (int64_t i = 0; i < corpus.size(); ++i) {
    SampleMaps m = eval_forward(cfg, ps, stats, corpus.images[size_t(i)],
                                corpus.specs[size_t(i)]);
    maps.img.push_back(std::move(m.image));
    maps.aud.push_back(std::move(m.audio));
  }
  return maps;
}

// ---------------------------------------------------------------------------
// retrieval

struct RetrievalSummary {
  int64_t pairs = 0;
  // (k, recall) for each requested k that fits the pair count.
  std::vector<std::pair<int64_t, Recall>> recalls;
};

inline RetrievalSummary retrieval_eval(const CorpusMaps& maps, SimKind sim,
                                       const std::vector<int64_t>& ks = {
                                           1, 5, 10}) {
  const Tensor<float> s = similarity_matrix(maps.img, maps.aud, sim);
  RetrievalSummary out;
  out.pairs = maps.size();
  for (int64_t k : ks) {
    if (k > out.pairs) continue;  // a k past the pair count is unreportable
    out.recalls.emplace_back(k, recall_at_k(s, k));
  }
  return out;
}

inline nlohmann::json retrieval_report(const RetrievalSummary& r,
                                       SimKind sim) {
  nlohmann::json j;
  j["pairs"] = r.pairs;
  j["sim"] = sim_name(sim);
  nlohmann::json rec = nlohmann::json::object();
  for (const auto& [k, recall] : r.recalls) {
    nlohmann::json one;
    one["caption_to_image"] = recall.caption_to_image;
    one["image_to_caption"] = recall.image_to_caption;
    rec[cat("r", k)] = one;
  }
  j["recall"] = rec;
  return j;
}

// ---------------------------------------------------------------------------
// speech-prompted localization

struct LocalizationParams {
  double tau = 0.5;
  double frame_rate_in = 100.0;
  int64_t audio_downsample = 8;
  int64_t min_occurrences = 1;
};

struct LocalizationSummary {
  std::vector<PairResult> pairs;  // one per word, ordered by word
  double macro = 0;
  int64_t evaluated = 0;
  int64_t skipped = 0;
};

// Per alignment: heatmap from the matchmap, binarize at tau, IoU against
// the word's object mask. Alignments whose word is unknown, whose window
// misses the truncated map, or whose object mask is empty are skipped.
inline LocalizationSummary localize(const CorpusMaps& maps,
                                    const LoadedCorpus& corpus,
                                    const std::vector<std::string>& words,
                                    const LocalizationParams& prm) {
  check(maps.size() == corpus.size(), "localize: ", maps.size(),
        " map pairs vs ", corpus.size(), " samples");
  check(!corpus.masks.empty(), "localize: corpus loaded without masks");
  struct Acc {
    double sum = 0;
    int64_t count = 0;
  };
  std::map<std::string, Acc> per_word;
  LocalizationSummary out;
  for (int64_t i = 0; i < corpus.size(); ++i) {
    const Tensor<uint16_t>& label_mask = corpus.masks[size_t(i)];
    const int64_t S = label_mask.extent(0);
    const Tensor<float> m =
        matchmap_fwd(maps.img[size_t(i)], maps.aud[size_t(i)]);
    for (const WordAlignment& a : corpus.alignments[size_t(i)]) {
      const auto it = std::find(words.begin(), words.end(), a.word);
      if (it == words.end()) {
        out.skipped += 1;
        continue;
      }
      const uint16_t label = uint16_t(it - words.begin() + 1);
      Tensor<uint16_t> object({S, S});
      int64_t object_pixels = 0;
      for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x)
          if (label_mask(y, x) == label) {
            object(y, x) = 1;
            ++object_pixels;
          }
      if (object_pixels == 0) {
        out.skipped += 1;
        continue;
      }
      Tensor<float> heat;
      try {
        heat = speech_prompted_heatmap(m, a, prm.frame_rate_in,
                                       prm.audio_downsample, S);
      } catch (const Error&) {
        out.skipped += 1;
        continue;
      }
      Acc& acc = per_word[a.word];
      acc.sum += iou(threshold_mask(heat, prm.tau), object);
      acc.count += 1;
      out.evaluated += 1;
    }
  }
  for (const auto& [word, acc] : per_word) {
    if (acc.count < prm.min_occurrences) continue;
    PairResult p;
    p.word = word;
    p.object_label = word;  // classes and words correspond one to one
    p.occurrences = acc.count;
    p.mean_iou = acc.sum / double(acc.count);
    out.pairs.push_back(std::move(p));
  }
  check(!out.pairs.empty(), "localize: no word-object pair was evaluated");
  out.macro = macro_iou(out.pairs);
  return out;
}

inline nlohmann::json localization_report(const LocalizationSummary& s,
                                          const LocalizationParams& prm) {
  nlohmann::json j;
  j["tau"] = prm.tau;
  j["macro_iou"] = s.macro;
  j["evaluated"] = s.evaluated;
  j["skipped"] = s.skipped;
  nlohmann::json pairs = nlohmann::json::array();
  for (const PairResult& p : s.pairs) {
    nlohmann::json one;
    one["word"] = p.word;
    one["object"] = p.object_label;
    one["occurrences"] = p.occurrences;
    one["mean_iou"] = p.mean_iou;
    pairs.push_back(one);
  }
  j["pairs"] = pairs;
  return j;
}

// ---------------------------------------------------------------------------
// cluster discovery

struct DiscoveryParams {
  int64_t smooth_width = 7;
  SmoothKind smooth_kind = SmoothKind::avg;
  double sigma_k = 1.5;
  double birch_threshold = 0.5;
  int64_t branching = 50;
  int64_t max_leaves = 64;
  int64_t target_clusters = 16;
  double frame_rate_in = 100.0;
  int64_t audio_downsample = 8;
};

struct DiscoverySummary {
  std::vector<Cluster> clusters;  // sorted by harmonic mean, best first
  int64_t components = 0;
  int64_t unlabeled = 0;
};

namespace detail {

// Word whose alignment overlaps the component's frame span the most; ties
// go to the earlier word, no overlap leaves the component unlabeled.
inline std::string component_word(const ComponentRecord& comp,
                                  const std::vector<WordAlignment>& aligns,
                                  double frame_rate_in, int64_t downsample) {
  const double lo = double(comp.t_start * downsample) / frame_rate_in;
  const double hi = double((comp.t_end + 1) * downsample) / frame_rate_in;
  std::string best;
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

// Labeled pixels under the component's spatial mask, keyed by class word.
inline std::map<std::string, int64_t> component_pixels(
    const ComponentRecord& comp, const Tensor<uint16_t>& label_mask,
    const std::vector<std::string>& words) {
  const int64_t S = label_mask.extent(0);
  const int64_t R = comp.mask.extent(0);
  check(S % R == 0, "discover: image size ", S,
        " not a multiple of the map size ", R);
  const int64_t cp = S / R;
  std::map<std::string, int64_t> counts;
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < comp.mask.extent(1); ++c) {
      if (!comp.mask(r, c)) continue;
      for (int64_t y = r * cp; y < (r + 1) * cp; ++y)
        for (int64_t x = c * cp; x < (c + 1) * cp; ++x) {
          const uint16_t label = label_mask(y, x);
          if (label == 0) continue;
          check(int64_t(label) <= int64_t(words.size()),
                "discover: mask label ", label, " exceeds the word table");
          counts[words[size_t(label - 1)]] += 1;
        }
    }
  return counts;
}

}  // namespace detail

// Smooth, binarize, extract components, pool and rescale features, cluster
// with Birch plus an agglomerative merge, then label against the ground
// truth annotations.
inline DiscoverySummary discover(const CorpusMaps& maps,
                                 const LoadedCorpus& corpus,
                                 const std::vector<std::string>& words,
                                 const DiscoveryParams& prm) {
  check(maps.size() == corpus.size(), "discover: ", maps.size(),
        " map pairs vs ", corpus.size(), " samples");
  check(!corpus.masks.empty(), "discover: corpus loaded without masks");
  std::vector<ComponentFeature> features;
  std::vector<ComponentAnnotation> annotations;
  DiscoverySummary out;
  for (int64_t i = 0; i < corpus.size(); ++i) {
    const Tensor<float> m =
        matchmap_fwd(maps.img[size_t(i)], maps.aud[size_t(i)]);
    const BinaryVolume bv = binarize_sigma(
        temporal_smooth(m, prm.smooth_width, prm.smooth_kind), prm.sigma_k);
    for (const ComponentRecord& comp : connected_components(bv)) {
      ComponentFeature f = pool_component_features(
          comp, maps.img[size_t(i)], maps.aud[size_t(i)]);
      f.component_id = int64_t(features.size());
      features.push_back(std::move(f));
      ComponentAnnotation ann;
      ann.word = detail::component_word(comp, corpus.alignments[size_t(i)],
                                        prm.frame_rate_in,
                                        prm.audio_downsample);
      ann.pixel_counts = detail::component_pixels(
          comp, corpus.masks[size_t(i)], words);
      annotations.push_back(std::move(ann));
    }
  }
  out.components = int64_t(features.size());
  if (features.empty()) {
    warn("discover: no components above threshold, nothing to cluster");
    return out;
  }

  rescale_by_avg_norm(&features);
  const Tensor<double> pts = feature_matrix(features);
  const std::vector<CfSubcluster> leaves =
      birch_fit(pts, prm.birch_threshold, prm.branching, prm.max_leaves);
  const std::vector<int64_t> leaf_of = birch_assign(pts, leaves);
  const int64_t target =
      std::min<int64_t>(prm.target_clusters, int64_t(leaves.size()));
  const std::vector<MergedCluster> merged =
      agglomerative_merge(leaves, target);

  std::vector<int64_t> cluster_of_leaf(leaves.size(), -1);
  for (size_t ci = 0; ci < merged.size(); ++ci)
    for (int64_t li : merged[ci].subclusters)
      cluster_of_leaf[static_cast<size_t>(li)] = int64_t(ci);
  std::vector<std::vector<int64_t>> groups(merged.size());
  for (size_t row = 0; row < leaf_of.size(); ++row)
    groups[static_cast<size_t>(
               cluster_of_leaf[static_cast<size_t>(leaf_of[row])])]
        .push_back(int64_t(row));

  out.clusters = label_and_score(groups, annotations, &out.unlabeled);
  std::stable_sort(out.clusters.begin(), out.clusters.end(),
                   [](const Cluster& a, const Cluster& b) {
                     if (a.harmonic != b.harmonic)
                       return a.harmonic > b.harmonic;
                     return a.size > b.size;
                   });
  return out;
}

inline nlohmann::json discovery_report(const DiscoverySummary& s,
                                       const DiscoveryParams& prm) {
  nlohmann::json j;
  j["components"] = s.components;
  j["unlabeled_components"] = s.unlabeled;
  j["target_clusters"] = prm.target_clusters;
  nlohmann::json clusters = nlohmann::json::array();
  for (const Cluster& c : s.clusters) {
    nlohmann::json one;
    one["word"] = c.word_label;
    one["object"] = c.object_label;
    one["size"] = c.size;
    one["word_precision"] = c.word_precision;
    one["object_precision"] = c.object_precision;
    one["harmonic"] = c.harmonic;
    one["members"] = c.members;
    clusters.push_back(one);
  }
  j["clusters"] = clusters;
  return j;
}

// ---------------------------------------------------------------------------
// concept dictionary

struct ConceptParams {
  int64_t top_k = 5;
  double threshold = 0.6;
  double frame_rate_in = 100.0;
  int64_t audio_downsample = 8;
};

struct ConceptSummary {
  std::vector<DimensionProfile> profiles;
  std::vector<ConceptScore> scores;
  int64_t learned = 0;
  int64_t unscored = 0;  // dimensions whose modal word left the taxonomy
};

inline ConceptSummary concept_eval(const CorpusMaps& maps,
                                   const LoadedCorpus& corpus,
                                   const std::vector<std::string>& words,
                                   const Taxonomy& tax,
                                   const ConceptParams& prm) {
  check(maps.size() == corpus.size(), "concepts: ", maps.size(),
        " map pairs vs ", corpus.size(), " samples");
  check(!corpus.masks.empty(), "concepts: corpus loaded without masks");
  check(maps.size() > 0, "concepts: empty corpus");
  const int64_t D = maps.img[0].extent(0);
  const int64_t S = corpus.masks[0].extent(0);
  const int64_t R = maps.img[0].extent(1);
  check(S % R == 0, "concepts: image size ", S,
        " not a multiple of the map size ", R);
  const int64_t cp = S / R;

  ConceptSummary out;
  for (int64_t d = 0; d < D; ++d) {
    DimensionProfile profile;
    profile.dim = d;
    profile.images = top_activated_images(maps.img, d, prm.top_k);
    std::vector<const Tensor<uint16_t>*> label_masks;
    for (const ImageActivation& act : profile.images)
      label_masks.push_back(&corpus.masks[static_cast<size_t>(act.index)]);
    profile.weights =
        class_iou_weights(profile.images, label_masks, words, cp);
    const std::vector<WordActivation> top_words = top_activated_words(
        maps.aud, corpus.alignments, d, prm.top_k, prm.frame_rate_in,
        prm.audio_downsample);
    profile.audio_word = modal_word(top_words);

    ConceptScore score{d, 0.0};
    if (!tax.contains(profile.audio_word)) {
      warn("concepts: dimension ", d, " has audio word '",
           profile.audio_word, "' outside the taxonomy, scoring 0");
      out.unscored += 1;
    } else {
      score = concept_value(profile, tax);
    }
    out.profiles.push_back(std::move(profile));
    out.scores.push_back(score);
  }
  out.learned = count_learned_concepts(out.scores, prm.threshold);
  return out;
}

inline nlohmann::json concept_report(const ConceptSummary& s,
                                     const ConceptParams& prm) {
  nlohmann::json j;
  j["threshold"] = prm.threshold;
  j["learned"] = s.learned;
  j["unscored"] = s.unscored;
  nlohmann::json dims = nlohmann::json::array();
  for (size_t i = 0; i < s.profiles.size(); ++i) {
    const DimensionProfile& p = s.profiles[i];
    nlohmann::json one;
    one["dim"] = p.dim;
    one["audio_word"] = p.audio_word;
    one["value"] = s.scores[i].value;
    nlohmann::json ws = nlohmann::json::array();
    for (const ClassWeight& w : p.weights) {
      nlohmann::json jw;
      jw["label"] = w.label;
      jw["weight"] = w.weight;
      ws.push_back(jw);
    }
    one["weights"] = ws;
    dims.push_back(one);
  }
  j["dimensions"] = dims;
  return j;
}

// ---------------------------------------------------------------------------
// mask-sequence export

struct VizParams {
  double top_p = 0.3;
  double fps = 12.5;
};

// One PGM mask per matchmap frame, block-upsampled to image_size, plus a
// JSON timing sidecar. Returns the frame count.
inline int64_t write_viz(const Tensor<float>& img_map,
                         const Tensor<float>& aud_map, int64_t image_size,
                         const std::string& out_dir, const std::string& id,
                         const VizParams& prm) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  check(!ec, "viz: cannot create ", out_dir, ": ", ec.message());
  const Tensor<float> m = matchmap_fwd(img_map, aud_map);
  const BinaryVolume bv = top_p_mass(m, prm.top_p);
  const int64_t R = bv.rows, C = bv.cols, Tn = bv.frames;
  check(image_size % R == 0 && image_size % C == 0, "viz: image size ",
        image_size, " not a multiple of the map size");
  const int64_t py = image_size / R, px = image_size / C;
  nlohmann::json files = nlohmann::json::array();
  for (int64_t t = 0; t < Tn; ++t) {
    Tensor<float> frame({image_size, image_size});
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c) {
        if (!bv.at(r, c, t)) continue;
        for (int64_t y = r * py; y < (r + 1) * py; ++y)
          for (int64_t x = c * px; x < (c + 1) * px; ++x)
            frame(y, x) = 1.0f;
      }
    char name[64];
    std::snprintf(name, sizeof name, "%s_f%04d.pgm", id.c_str(), int(t));
    save_pgm((fs::path(out_dir) / name).string(), frame);
    files.push_back(std::string(name));
  }
  nlohmann::json side;
  side["id"] = id;
  side["fps"] = prm.fps;
  side["frames"] = Tn;
  side["top_p"] = prm.top_p;
  side["files"] = files;
  std::ofstream os(fs::path(out_dir) / (id + ".json"), std::ios::binary);
  check(bool(os), "viz: cannot write sidecar for ", id);
  os << side.dump(2) << "\n";
  check(bool(os), "viz: sidecar write failure for ", id);
  return Tn;
}

}  // namespace mm

#endif  // MATCHMAP_ANALYSIS_HPP_
