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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "matchmap/common.hpp"

// Model and training configuration, JSON serialization, and the config
// hash embedded in checkpoints and reports.

namespace mm {

enum class SimKind { sisa, misa, sima };

inline const char* sim_name(SimKind k) {
  switch (k) {
    case SimKind::sisa:
      return "sisa";
    case SimKind::misa:
      return "misa";
    case SimKind::sima:
      return "sima";
  }
  fail("sim kind out of range");
}

inline SimKind parse_sim(const std::string& s) {
  if (s == "sisa") return SimKind::sisa;
  if (s == "misa") return SimKind::misa;
  if (s == "sima") return SimKind::sima;
  fail("unknown similarity '", s, "'; expected sisa, misa, or sima");
}

// Trunk blocks are 3x3 "same" convolutions with ReLU and a 2x stride-2
// max-pool each; the projection is a final 3x3 linear convolution.
struct ImageEncoderConfig {
  int64_t input_size = 64;
  int64_t resize_side = 64;
  std::vector<int64_t> trunk_channels = {32, 64, 128};
  int64_t embed_dim = 64;

  int64_t downsample() const {
    return int64_t(1) << trunk_channels.size();
  }
  int64_t map_size() const { return input_size / downsample(); }
};

inline void validate(const ImageEncoderConfig& c) {
  check(!c.trunk_channels.empty() && c.trunk_channels.size() <= 8,
        "image config: trunk must have 1 to 8 blocks, has ",
        c.trunk_channels.size());
  for (int64_t ch : c.trunk_channels)
    check(ch >= 1, "image config: non-positive channel count ", ch);
  check(c.embed_dim >= 1, "image config: bad embed dim ", c.embed_dim);
  check(c.input_size >= c.downsample() &&
            c.input_size % c.downsample() == 0,
        "image config: input size ", c.input_size,
        " not divisible by downsample factor ", c.downsample());
  check(c.resize_side >= c.input_size, "image config: resize side ",
        c.resize_side, " smaller than crop ", c.input_size);
}

// Layer 1 spans all frequency bands in a single frame; layers 2 to 5 are
// temporal with widths 11, 17, 17, 17. Width-3 stride-2 max-pools after
// layers 2, 3, and 4 give the fixed 8x temporal downsample.
struct AudioEncoderConfig {
  int64_t bands = 40;
  std::vector<int64_t> channels = {64, 128, 128, 256, 64};

  static constexpr int64_t kLayers = 5;
  std::vector<int64_t> widths() const { return {1, 11, 17, 17, 17}; }
  int64_t embed_dim() const { return channels.back(); }
  int64_t downsample() const { return 8; }
};

inline void validate(const AudioEncoderConfig& c) {
  check(c.bands >= 1, "audio config: bad band count ", c.bands);
  check(int64_t(c.channels.size()) == AudioEncoderConfig::kLayers,
        "audio config: expected ", AudioEncoderConfig::kLayers,
        " channel counts, got ", c.channels.size());
  for (int64_t ch : c.channels)
    check(ch >= 1, "audio config: non-positive channel count ", ch);
}

struct ModelConfig {
  ImageEncoderConfig image;
  AudioEncoderConfig audio;
  SimKind sim = SimKind::misa;
};

inline void validate(const ModelConfig& c) {
  validate(c.image);
  validate(c.audio);
  check(c.image.embed_dim == c.audio.embed_dim(),
        "model config: embed dims differ, image ", c.image.embed_dim,
        " vs audio ", c.audio.embed_dim());
}

struct TrainConfig {
  int64_t epochs = 60;
  int64_t batch = 32;
  double lr = 0.001;
  double momentum = 0.9;
  int64_t lr_decay_epochs = 20;
  double margin = 1.0;
  uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  check(c.epochs >= 1, "train config: bad epoch count ", c.epochs);
  check(c.batch >= 2, "train config: batch must be at least 2, got ",
        c.batch);
  check(c.lr > 0, "train config: non-positive learning rate");
  check(c.momentum >= 0 && c.momentum < 1, "train config: momentum ",
        c.momentum, " outside [0, 1)");
  check(c.lr_decay_epochs >= 1, "train config: bad decay interval ",
        c.lr_decay_epochs);
  check(c.margin >= 0, "train config: negative margin");
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const ImageEncoderConfig& c) {
  j = {{"input_size", c.input_size},
       {"resize_side", c.resize_side},
       {"trunk_channels", c.trunk_channels},
       {"embed_dim", c.embed_dim}};
}

inline void from_json(const nlohmann::json& j, ImageEncoderConfig& c) {
  j.at("input_size").get_to(c.input_size);
  j.at("resize_side").get_to(c.resize_side);
  j.at("trunk_channels").get_to(c.trunk_channels);
  j.at("embed_dim").get_to(c.embed_dim);
}

inline void to_json(nlohmann::json& j, const AudioEncoderConfig& c) {
  j = {{"bands", c.bands}, {"channels", c.channels}};
}

inline void from_json(const nlohmann::json& j, AudioEncoderConfig& c) {
  j.at("bands").get_to(c.bands);
  j.at("channels").get_to(c.channels);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"image", c.image}, {"audio", c.audio}, {"sim", sim_name(c.sim)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("image").get_to(c.image);
  j.at("audio").get_to(c.audio);
  c.sim = parse_sim(j.at("sim").get<std::string>());
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch", c.batch},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"lr_decay_epochs", c.lr_decay_epochs},
       {"margin", c.margin},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch").get_to(c.batch);
  j.at("lr").get_to(c.lr);
  j.at("momentum").get_to(c.momentum);
  j.at("lr_decay_epochs").get_to(c.lr_decay_epochs);
  j.at("margin").get_to(c.margin);
  j.at("seed").get_to(c.seed);
}

// ---------------------------------------------------------------------------
// hashing

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Hash of the canonical (sorted-key, compact) JSON dump.
inline uint64_t config_hash(const nlohmann::json& j) {
  return fnv1a64(j.dump());
}

}  // namespace mm
