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

// Corpus access: JSON-lines manifests, spectrogram featurization with an
// on-disk cache, corpus image statistics, and whole-split loading.

#ifndef MATCHMAP_DATASET_HPP_
#define MATCHMAP_DATASET_HPP_

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "matchmap/audio.hpp"
#include "matchmap/common.hpp"
#include "matchmap/image.hpp"
#include "matchmap/metrics.hpp"
#include "matchmap/tensor.hpp"
#include "matchmap/tensor_io.hpp"
#include "nlohmann/json.hpp"

namespace mm {

struct ManifestEntry {
  std::string id;
  std::string image;  // paths relative to the manifest directory
  std::string audio;
  std::string mask;
  std::vector<WordAlignment> alignments;
};

struct Dataset {
  std::string root;
  std::vector<ManifestEntry> entries;
};

inline Dataset load_manifest(const std::string& path) {
  std::ifstream is(path);
  check(bool(is), "manifest: cannot open ", path);
  Dataset ds;
  ds.root = std::filesystem::path(path).parent_path().string();
  if (ds.root.empty()) ds.root = ".";
  std::set<std::string> seen;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail("manifest: ", path, ":", lineno, ": bad JSON: ", e.what());
    }
    ManifestEntry e;
    try {
      j.at("id").get_to(e.id);
      j.at("image").get_to(e.image);
      j.at("audio").get_to(e.audio);
      j.at("mask").get_to(e.mask);
      for (const nlohmann::json& ja : j.at("alignments")) {
        WordAlignment a;
        ja.at("word").get_to(a.word);
        ja.at("t1").get_to(a.t1);
        ja.at("t2").get_to(a.t2);
        check(a.t1 >= 0 && a.t1 < a.t2, "manifest: ", path, ":", lineno,
              ": bad alignment interval [", a.t1, ", ", a.t2, ")");
        e.alignments.push_back(std::move(a));
      }
    } catch (const nlohmann::json::exception& ex) {
      fail("manifest: ", path, ":", lineno, ": missing field: ", ex.what());
    }
    check(!e.id.empty(), "manifest: ", path, ":", lineno, ": empty id");
    check(seen.insert(e.id).second, "manifest: ", path, ":", lineno,
          ": duplicate id '", e.id, "'");
    ds.entries.push_back(std::move(e));
  }
  check(!ds.entries.empty(), "manifest: ", path, " holds no samples");
  return ds;
}

inline std::string dataset_path(const Dataset& ds, const std::string& rel) {
  return (std::filesystem::path(ds.root) / rel).string();
}

inline Tensor<float> load_image(const Dataset& ds, const ManifestEntry& e) {
  return load_ppm(dataset_path(ds, e.image));
}

inline Tensor<uint16_t> load_mask(const Dataset& ds, const ManifestEntry& e) {
  return load_tensor<uint16_t>(dataset_path(ds, e.mask));
}

// Class words in label order: mask label k maps to words[k - 1].
inline std::vector<std::string> load_corpus_words(const std::string& root) {
  const std::string path =
      (std::filesystem::path(root) / "corpus.json").string();
  std::ifstream is(path);
  check(bool(is), "corpus: cannot open ", path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    fail("corpus: bad JSON in ", path, ": ", e.what());
  }
  std::vector<std::string> words;
  try {
    j.at("words").get_to(words);
  } catch (const nlohmann::json::exception& e) {
    fail("corpus: missing word table in ", path, ": ", e.what());
  }
  check(!words.empty(), "corpus: empty word table in ", path);
  return words;
}

// ---------------------------------------------------------------------------
// spectrogram featurization

// The encoder consumes (bands, T); logmel emits (T, bands).
inline Tensor<float> bands_by_time(const Tensor<float>& frames_by_bands) {
  check(frames_by_bands.rank() == 2, "spectrogram: expected (T, bands), got ",
        shape_str(frames_by_bands.shape()));
  const int64_t Tn = frames_by_bands.extent(0);
  const int64_t B = frames_by_bands.extent(1);
  Tensor<float> out({B, Tn});
  for (int64_t t = 0; t < Tn; ++t)
    for (int64_t b = 0; b < B; ++b) out(b, t) = frames_by_bands(t, b);
  return out;
}

inline Tensor<float> compute_spectrogram(const Dataset& ds,
                                         const ManifestEntry& e,
                                         const LogmelConfig& lm) {
  return bands_by_time(logmel(load_wav(dataset_path(ds, e.audio)), lm));
}

inline std::string spec_cache_path(const std::string& root,
                                   const std::string& id) {
  return (std::filesystem::path(root) / "specs" / (id + ".mmtf")).string();
}

inline std::string stats_path(const std::string& root) {
  return (std::filesystem::path(root) / "stats.json").string();
}

inline void save_stats(const std::string& path, const ImageStats& s) {
  nlohmann::json j;
  j["mean"] = {s.mean[0], s.mean[1], s.mean[2]};
  j["stdev"] = {s.stdev[0], s.stdev[1], s.stdev[2]};
  std::ofstream os(path, std::ios::binary);
  check(bool(os), "stats: cannot open ", path);
  os << j.dump(2) << "\n";
  check(bool(os), "stats: write failure on ", path);
}

inline ImageStats load_stats(const std::string& path) {
  std::ifstream is(path);
  check(bool(is), "stats: cannot open ", path, "; run featurize first");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    fail("stats: bad JSON in ", path, ": ", e.what());
  }
  ImageStats s;
  try {
    for (int i = 0; i < 3; ++i) {
      s.mean[i] = j.at("mean").at(size_t(i)).get<double>();
      s.stdev[i] = j.at("stdev").at(size_t(i)).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail("stats: bad fields in ", path, ": ", e.what());
  }
  for (int i = 0; i < 3; ++i)
    check(s.stdev[i] > 0, "stats: non-positive stdev in ", path);
  return s;
}

struct FeaturizeReport {
  int64_t samples = 0;
  ImageStats stats;
};

// Writes specs/<id>.mmtf next to the manifest; with_stats additionally
// computes the corpus image statistics and writes stats.json.
inline FeaturizeReport featurize_corpus(const Dataset& ds,
                                        const LogmelConfig& lm,
                                        bool with_stats) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(ds.root) / "specs", ec);
  check(!ec, "featurize: cannot create spec cache under ", ds.root, ": ",
        ec.message());
  FeaturizeReport report;
  std::vector<Tensor<float>> images;
  for (const ManifestEntry& e : ds.entries) {
    save_tensor(spec_cache_path(ds.root, e.id),
                compute_spectrogram(ds, e, lm));
    if (with_stats) images.push_back(load_image(ds, e));
    report.samples += 1;
  }
  if (with_stats) {
    std::vector<const Tensor<float>*> ptrs;
    ptrs.reserve(images.size());
    for (const Tensor<float>& img : images) ptrs.push_back(&img);
    report.stats = compute_image_stats(ptrs);
    save_stats(stats_path(ds.root), report.stats);
  }
  return report;
}

// ---------------------------------------------------------------------------
// whole-split loading

struct LoadedCorpus {
  std::vector<std::string> ids;
  std::vector<Tensor<float>> images;   // raw (3, S, S)
  std::vector<Tensor<float>> specs;    // (bands, T)
  std::vector<Tensor<uint16_t>> masks;  // (S, S); empty unless requested
  std::vector<std::vector<WordAlignment>> alignments;

  int64_t size() const { return int64_t(ids.size()); }
};

// Cached spectrograms are used when present and computed otherwise; the
// cache holds exactly the computed tensors, so both paths agree bit-exactly.
inline LoadedCorpus load_corpus(const Dataset& ds, const LogmelConfig& lm,
                                bool with_masks) {
  LoadedCorpus c;
  for (const ManifestEntry& e : ds.entries) {
    c.ids.push_back(e.id);
    c.images.push_back(load_image(ds, e));
    const std::string cached = spec_cache_path(ds.root, e.id);
    if (std::filesystem::exists(cached))
      c.specs.push_back(load_tensor<float>(cached));
    else
      c.specs.push_back(compute_spectrogram(ds, e, lm));
    if (with_masks) c.masks.push_back(load_mask(ds, e));
    c.alignments.push_back(e.alignments);
  }
  return c;
}

}  // namespace mm

#endif  // MATCHMAP_DATASET_HPP_
