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

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "matchmap/audio.hpp"
#include "matchmap/common.hpp"
#include "matchmap/image.hpp"
#include "matchmap/tensor.hpp"
#include "matchmap/tensor_io.hpp"

// Synthetic paired corpus: images of colored rectangles and circles on a
// noisy gray background, spoken captions built from per-class tone-chord
// signatures, pixel-exact masks, word alignments, and a class taxonomy.
// Generation is a pure function of (config, seed); every sample draws from
// its own seed stream so the corpus is byte-identical across re-runs.

namespace mm {

struct SynthConfig {
  int64_t classes = 12;
  int64_t image_size = 64;
  int64_t min_objects = 2;
  int64_t max_objects = 3;
  int64_t train_samples = 2000;
  int64_t val_samples = 200;
  int64_t sample_rate = 16000;
  uint64_t seed = 0;
  double tone_seconds = 0.5;
  double gap_seconds = 0.2;
  // Rectangle sides and circle diameters are drawn from [min_side, max_side].
  int64_t min_side = 14;
  int64_t max_side = 20;
};

struct SynthClass {
  std::string word;
  bool is_rect = false;
  double hue = 0.0;
  float red = 0.0f, green = 0.0f, blue = 0.0f;
  int64_t band1 = 0, band2 = 0;
  double freq1 = 0.0, freq2 = 0.0;
};

namespace detail {
// Bounding boxes of placed objects keep at least 2 * kPlacementMargin
// pixels between each other, so no object touches another.
inline constexpr int64_t kPlacementMargin = 4;
inline constexpr int64_t kPlacementTries = 1000;
inline constexpr double kBackgroundGray = 0.5;
inline constexpr double kBackgroundJitter = 0.05;
inline constexpr double kPixelNoise = 0.02;
inline constexpr double kToneRampSeconds = 0.010;
inline constexpr double kXcorrLimit = 0.3;
}  // namespace detail

inline void validate(const SynthConfig& c) {
  check(c.classes >= 2, "synth: need at least 2 classes, got ", c.classes);
  check(c.min_objects >= 1 && c.min_objects <= c.max_objects,
        "synth: bad object range [", c.min_objects, ", ", c.max_objects, "]");
  check(c.max_objects <= c.classes,
        "synth: max_objects ", c.max_objects, " exceeds class count ",
        c.classes);
  check(c.min_side >= 6 && c.min_side <= c.max_side,
        "synth: bad shape size range [", c.min_side, ", ", c.max_side, "]");
  check(c.image_size >= c.max_side + 2 * detail::kPlacementMargin + 2,
        "synth: image size ", c.image_size, " too small for shapes up to ",
        c.max_side);
  check(c.train_samples >= 1 && c.val_samples >= 1, "synth: empty split");
  check(c.sample_rate >= 4000, "synth: bad sample rate ", c.sample_rate);
  check(c.tone_seconds > 0.05 && c.gap_seconds > 0.0,
        "synth: bad tone timing");
}

// Classes alternate rectangle/circle around the hue wheel; tone chords sit
// on distinct mel band centers so captions stay separable.
inline std::vector<SynthClass> make_classes(const SynthConfig& cfg) {
  validate(cfg);
  static const char* kWheel[12] = {"red",     "orange", "yellow", "lime",
                                   "green",   "teal",   "cyan",   "azure",
                                   "blue",    "violet", "magenta", "rose"};
  const std::vector<double> centers = mel_band_centers(40, cfg.sample_rate);
  std::vector<SynthClass> out(size_t(cfg.classes));
  std::set<std::string> seen;
  for (int64_t k = 0; k < cfg.classes; ++k) {
    SynthClass& c = out[size_t(k)];
    c.is_rect = (k % 2 == 0);
    c.hue = 360.0 * double(k) / double(cfg.classes);
    const int64_t wheel = ((k * 12 + cfg.classes / 2) / cfg.classes) % 12;
    c.word = std::string(kWheel[wheel]) + (c.is_rect ? "_rectangle" : "_circle");
    check(seen.insert(c.word).second,
          "synth: class words collide at ", cfg.classes,
          " classes; duplicate word ", c.word);
    hsv_to_rgb(c.hue, 0.85, 0.9, &c.red, &c.green, &c.blue);
    c.band1 = 2 + (k * 34) / cfg.classes;
    c.band2 = c.band1 + 1;
    c.freq1 = centers[size_t(c.band1)];
    c.freq2 = centers[size_t(c.band2)];
  }
  return out;
}

// Canonical chord: two sinusoids at mel band centers with raised-cosine
// on/off ramps. Caption synthesis scales this by a per-occurrence jitter.
inline std::vector<double> class_signature(const SynthClass& c,
                                           const SynthConfig& cfg) {
  const int64_t n = int64_t(std::llround(cfg.tone_seconds * double(cfg.sample_rate)));
  const int64_t ramp = std::max<int64_t>(
      1, int64_t(std::llround(detail::kToneRampSeconds * double(cfg.sample_rate))));
  std::vector<double> s(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double t = double(i) / double(cfg.sample_rate);
    double v = 0.45 * std::sin(2.0 * M_PI * c.freq1 * t) +
               0.35 * std::sin(2.0 * M_PI * c.freq2 * t);
    double env = 1.0;
    if (i < ramp)
      env = 0.5 * (1.0 - std::cos(M_PI * double(i) / double(ramp)));
    else if (i >= n - ramp)
      env = 0.5 * (1.0 - std::cos(M_PI * double(n - 1 - i) / double(ramp)));
    s[size_t(i)] = v * env;
  }
  return s;
}

// Peak normalized cross-correlation over all lags, via FFT.
inline double max_normalized_xcorr(const std::vector<double>& a,
                                   const std::vector<double>& b) {
  check(!a.empty() && !b.empty(), "xcorr: empty signal");
  const size_t n = size_t(next_pow2(int64_t(a.size() + b.size())));
  std::vector<std::complex<double>> fa(n), fb(n);
  double ea = 0, eb = 0;
  for (size_t i = 0; i < a.size(); ++i) fa[i] = {a[i], 0.0}, ea += a[i] * a[i];
  for (size_t i = 0; i < b.size(); ++i) fb[i] = {b[i], 0.0}, eb += b[i] * b[i];
  check(ea > 0 && eb > 0, "xcorr: zero-energy signal");
  fft_radix2(fa);
  fft_radix2(fb);
  for (size_t i = 0; i < n; ++i) fa[i] = std::conj(fa[i] * std::conj(fb[i]));
  fft_radix2(fa);
  double peak = 0;
  for (size_t i = 0; i < n; ++i)
    peak = std::max(peak, std::abs(fa[i]) / double(n));
  return peak / std::sqrt(ea * eb);
}

inline void check_signature_separation(const std::vector<SynthClass>& classes,
                                       const SynthConfig& cfg) {
  std::vector<std::vector<double>> sigs;
  sigs.reserve(classes.size());
  for (const SynthClass& c : classes) sigs.push_back(class_signature(c, cfg));
  for (size_t i = 0; i < sigs.size(); ++i)
    for (size_t j = i + 1; j < sigs.size(); ++j) {
      const double x = max_normalized_xcorr(sigs[i], sigs[j]);
      check(x < detail::kXcorrLimit, "synth: signatures for ",
            classes[i].word, " and ", classes[j].word,
            " correlate at ", x, "; raise class spacing");
    }
}

struct SynthSample {
  Tensor<float> image;
  Tensor<uint16_t> mask;
  // Classes actually placed, in placement order.
  std::vector<int64_t> present;
  int64_t dropped = 0;
};

// Non-occluding placement by rejection sampling. An object that cannot be
// placed within the try budget is dropped from both image and caption.
inline SynthSample gen_image(const SynthConfig& cfg,
                             const std::vector<SynthClass>& classes, Rng& rng) {
  const int64_t S = cfg.image_size;
  SynthSample out;
  out.image = Tensor<float>({3, S, S});
  out.mask = Tensor<uint16_t>({S, S});
  const double bg = std::clamp(
      detail::kBackgroundGray +
          rng.uniform(-detail::kBackgroundJitter, detail::kBackgroundJitter),
      0.35, 0.65);
  for (int64_t i = 0; i < out.image.numel(); ++i)
    out.image.at_flat(i) = float(bg);

  const int64_t want = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  std::vector<int64_t> ids(size_t(cfg.classes));
  for (int64_t k = 0; k < cfg.classes; ++k) ids[size_t(k)] = k;
  rng.shuffle(ids);

  struct Box {
    int64_t x0, y0, x1, y1;  // half-open
  };
  std::vector<Box> placed;
  const int64_t m = detail::kPlacementMargin;
  for (int64_t obj = 0; obj < want; ++obj) {
    const int64_t k = ids[size_t(obj)];
    const SynthClass& cls = classes[size_t(k)];
    bool ok = false;
    for (int64_t attempt = 0; attempt < detail::kPlacementTries && !ok;
         ++attempt) {
      Box b{};
      int64_t cx = 0, cy = 0, r = 0;
      if (cls.is_rect) {
        const int64_t w = rng.uniform_int(cfg.min_side, cfg.max_side);
        const int64_t h = rng.uniform_int(cfg.min_side, cfg.max_side);
        b.x0 = rng.uniform_int(0, S - w);
        b.y0 = rng.uniform_int(0, S - h);
        b.x1 = b.x0 + w;
        b.y1 = b.y0 + h;
      } else {
        r = rng.uniform_int(cfg.min_side / 2, cfg.max_side / 2);
        cx = rng.uniform_int(r, S - 1 - r);
        cy = rng.uniform_int(r, S - 1 - r);
        b = {cx - r, cy - r, cx + r + 1, cy + r + 1};
      }
      bool clash = false;
      for (const Box& p : placed)
        if (b.x0 - m < p.x1 + m && p.x0 - m < b.x1 + m &&
            b.y0 - m < p.y1 + m && p.y0 - m < b.y1 + m) {
          clash = true;
          break;
        }
      if (clash) continue;
      ok = true;
      placed.push_back(b);
      out.present.push_back(k);
      const uint16_t label = uint16_t(k + 1);
      for (int64_t y = b.y0; y < b.y1; ++y)
        for (int64_t x = b.x0; x < b.x1; ++x) {
          if (!cls.is_rect &&
              (x - cx) * (x - cx) + (y - cy) * (y - cy) > r * r)
            continue;
          out.mask(y, x) = label;
          out.image(0, y, x) = cls.red;
          out.image(1, y, x) = cls.green;
          out.image(2, y, x) = cls.blue;
        }
    }
    if (!ok) out.dropped += 1;
  }
  for (int64_t i = 0; i < out.image.numel(); ++i)
    out.image.at_flat(i) = float(std::clamp(
        double(out.image.at_flat(i)) + rng.normal(0.0, detail::kPixelNoise),
        0.0, 1.0));
  return out;
}

struct WordSpan {
  std::string word;
  double t1 = 0.0, t2 = 0.0;
};

struct Caption {
  Waveform wave;
  std::vector<WordSpan> alignments;
};

// Spoken caption: the present classes' chords in shuffled order, separated
// by silence, with leading and trailing gaps and per-chord amplitude jitter.
inline Caption gen_caption(const SynthConfig& cfg,
                           const std::vector<SynthClass>& classes,
                           std::vector<int64_t> present, Rng& rng) {
  check(!present.empty(), "caption: no classes present");
  rng.shuffle(present);
  const double slot = cfg.tone_seconds + cfg.gap_seconds;
  const double dur = cfg.gap_seconds + double(present.size()) * slot;
  Caption out;
  out.wave.sample_rate = cfg.sample_rate;
  out.wave.samples.assign(
      size_t(std::llround(dur * double(cfg.sample_rate))), 0.0);
  for (size_t i = 0; i < present.size(); ++i) {
    const SynthClass& cls = classes[size_t(present[i])];
    const double t1 = cfg.gap_seconds + double(i) * slot;
    const double t2 = t1 + cfg.tone_seconds;
    const double amp = rng.uniform(0.7, 1.0);
    const std::vector<double> sig = class_signature(cls, cfg);
    const size_t start = size_t(std::llround(t1 * double(cfg.sample_rate)));
    for (size_t j = 0; j < sig.size(); ++j)
      out.wave.samples[start + j] += amp * sig[j];
    out.alignments.push_back({cls.word, t1, t2});
  }
  return out;
}

struct CorpusReport {
  int64_t train_written = 0;
  int64_t val_written = 0;
  int64_t dropped_objects = 0;
};

namespace detail {

inline std::string sample_id(const char* prefix, int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06lld", prefix,
                static_cast<long long>(i));
  return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  check(bool(os), "synth: cannot open ", path, " for writing");
  os << text;
  check(bool(os), "synth: write failure on ", path);
}

}  // namespace detail

inline void write_taxonomy(const std::string& path,
                           const std::vector<SynthClass>& classes) {
  std::string text;
  text += "thing\trectangle\n";
  text += "thing\tcircle\n";
  for (const SynthClass& c : classes)
    text += std::string(c.is_rect ? "rectangle" : "circle") + "\t" + c.word +
            "\n";
  detail::write_text(path, text);
}

// Writes images/, audio/, masks/, {train,val}.jsonl, taxonomy.tsv, and a
// corpus.json config echo under out_dir.
inline CorpusReport gen_corpus(const SynthConfig& cfg,
                               const std::string& out_dir) {
  validate(cfg);
  const std::vector<SynthClass> classes = make_classes(cfg);
  check_signature_separation(classes, cfg);

  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"images", "audio", "masks"}) {
    fs::create_directories(fs::path(out_dir) / sub, ec);
    check(!ec, "synth: cannot create ", (fs::path(out_dir) / sub).string(),
          ": ", ec.message());
  }

  write_taxonomy((fs::path(out_dir) / "taxonomy.tsv").string(), classes);

  nlohmann::json meta;
  meta["classes"] = cfg.classes;
  meta["image_size"] = cfg.image_size;
  meta["min_objects"] = cfg.min_objects;
  meta["max_objects"] = cfg.max_objects;
  meta["train_samples"] = cfg.train_samples;
  meta["val_samples"] = cfg.val_samples;
  meta["sample_rate"] = cfg.sample_rate;
  meta["seed"] = cfg.seed;
  meta["tone_seconds"] = cfg.tone_seconds;
  meta["gap_seconds"] = cfg.gap_seconds;
  meta["min_side"] = cfg.min_side;
  meta["max_side"] = cfg.max_side;
  {
    nlohmann::json words = nlohmann::json::array();
    for (const SynthClass& c : classes) words.push_back(c.word);
    meta["words"] = words;
  }
  detail::write_text((fs::path(out_dir) / "corpus.json").string(),
                     meta.dump(2) + "\n");

  CorpusReport report;
  struct Split {
    const char* prefix;
    const char* manifest;
    int64_t count;
    int64_t base;
    int64_t* written;
  };
  const Split splits[2] = {
      {"tr", "train.jsonl", cfg.train_samples, 0, &report.train_written},
      {"va", "val.jsonl", cfg.val_samples, cfg.train_samples,
       &report.val_written}};
  for (const Split& sp : splits) {
    std::ofstream manifest(fs::path(out_dir) / sp.manifest,
                           std::ios::binary);
    check(bool(manifest), "synth: cannot open manifest ", sp.manifest);
    for (int64_t i = 0; i < sp.count; ++i) {
      Rng rng(mix_seed(cfg.seed, uint64_t(sp.base + i)));
      const std::string id = detail::sample_id(sp.prefix, i);
      SynthSample sample = gen_image(cfg, classes, rng);
      report.dropped_objects += sample.dropped;
      Caption cap = gen_caption(cfg, classes, sample.present, rng);
      const std::string image_rel = "images/" + id + ".ppm";
      const std::string audio_rel = "audio/" + id + ".wav";
      const std::string mask_rel = "masks/" + id + ".mmtf";
      save_ppm((fs::path(out_dir) / image_rel).string(), sample.image);
      save_wav((fs::path(out_dir) / audio_rel).string(), cap.wave);
      save_tensor((fs::path(out_dir) / mask_rel).string(), sample.mask);
      nlohmann::json line;
      line["id"] = id;
      line["image"] = image_rel;
      line["audio"] = audio_rel;
      line["mask"] = mask_rel;
      nlohmann::json aligns = nlohmann::json::array();
      for (const WordSpan& a : cap.alignments) {
        nlohmann::json ja;
        ja["word"] = a.word;
        ja["t1"] = a.t1;
        ja["t2"] = a.t2;
        aligns.push_back(ja);
      }
      line["alignments"] = aligns;
      manifest << line.dump() << "\n";
      *sp.written += 1;
    }
    check(bool(manifest), "synth: write failure on ", sp.manifest);
  }
  return report;
}

}  // namespace mm
