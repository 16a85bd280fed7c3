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

#include <string>
#include <vector>

#include "matchmap/config.hpp"
#include "matchmap/graph.hpp"
#include "matchmap/image.hpp"
#include "matchmap/ops.hpp"
#include "matchmap/optim.hpp"

// The two encoder branches. Image: conv/ReLU/pool trunk plus a final 3x3
// linear convolution to D channels. Audio: BatchNorm front, a conv that
// collapses the frequency axis, then temporal convs of widths 11, 17, 17,
// 17 with ReLU after every conv and three width-3 stride-2 max-pools.
//
// Audio batches are zero-padded to the longest caption. Padded frames are
// re-zeroed after every layer, which makes each caption's truncated output
// in eval mode bit-identical to running that caption alone: stride-1
// "same" convs see the same zeros either way, and the pools' extra
// boundary zeros never beat a post-ReLU maximum.

namespace mm {

template <typename T>
void init_image_params(const ImageEncoderConfig& cfg, ParamStore<T>& ps,
                       Rng& rng) {
  validate(cfg);
  int64_t cin = 3;
  for (size_t i = 0; i < cfg.trunk_channels.size(); ++i) {
    const int64_t ch = cfg.trunk_channels[i];
    const std::string base = cat("image/block", i + 1);
    ps.add(base + "/w",
           glorot_uniform<T>({ch, cin, 3, 3}, cin * 9, ch * 9, rng));
    ps.add(base + "/b", Tensor<T>({ch}));
    cin = ch;
  }
  ps.add("image/proj/w", glorot_uniform<T>({cfg.embed_dim, cin, 3, 3},
                                           cin * 9, cfg.embed_dim * 9, rng));
  ps.add("image/proj/b", Tensor<T>({cfg.embed_dim}));
}

template <typename T>
void init_audio_params(const AudioEncoderConfig& cfg, ParamStore<T>& ps,
                       Rng& rng) {
  validate(cfg);
  ps.add("audio/bn/gamma", Tensor<T>::full({1}, T(1)));
  ps.add("audio/bn/beta", Tensor<T>({1}));
  ps.add_buffer("audio/bn/running_mean", Tensor<T>({1}));
  ps.add_buffer("audio/bn/running_var", Tensor<T>::full({1}, T(1)));
  const std::vector<int64_t> widths = cfg.widths();
  int64_t cin = 1;
  for (int64_t l = 0; l < AudioEncoderConfig::kLayers; ++l) {
    const int64_t kh = (l == 0) ? cfg.bands : 1;
    const int64_t kw = widths[size_t(l)];
    const int64_t cout = cfg.channels[size_t(l)];
    const std::string base = cat("audio/conv", l + 1);
    ps.add(base + "/w", glorot_uniform<T>({cout, cin, kh, kw}, cin * kh * kw,
                                          cout * kh * kw, rng));
    ps.add(base + "/b", Tensor<T>({cout}));
    cin = cout;
  }
}

template <typename T>
void init_params(const ModelConfig& cfg, ParamStore<T>& ps, uint64_t seed) {
  validate(cfg);
  Rng rng(mix_seed(seed, 0x70617261));
  init_image_params(cfg.image, ps, rng);
  init_audio_params(cfg.audio, ps, rng);
}

// x: (3, S, S) single image or (B, 3, S, S) batch; returns the feature map
// (D, R, C) or (B, D, R, C).
template <typename T>
Var image_forward(Graph<T>& g, const ImageEncoderConfig& cfg,
                  ParamStore<T>& ps, Var x) {
  const Tensor<T>& xv = g.value(x);
  check(xv.rank() == 3 || xv.rank() == 4,
        "image forward: input must be (3, S, S) or (B, 3, S, S), got ",
        shape_str(xv.shape()));
  const int64_t coff = xv.rank() - 3;
  check(xv.extent(coff) == 3 && xv.extent(coff + 1) == cfg.input_size &&
            xv.extent(coff + 2) == cfg.input_size,
        "image forward: expected ", cfg.input_size, "x", cfg.input_size,
        " RGB input, got ", shape_str(xv.shape()));
  Var h = x;
  for (size_t i = 0; i < cfg.trunk_channels.size(); ++i) {
    const std::string base = cat("image/block", i + 1);
    h = conv2d(g, h, g.param(ps.get(base + "/w")),
               g.param(ps.get(base + "/b")));
    h = relu(g, h);
    h = maxpool2d(g, h, 2, 2);
  }
  return conv2d(g, h, g.param(ps.get("image/proj/w")),
                g.param(ps.get("image/proj/b")));
}

struct AudioForward {
  Var map;                       // (B, D, 1, T')
  std::vector<int64_t> lengths;  // per-caption valid output frames
};

// x: (B, 1, bands, T) zero-padded batch; lengths are the true frame counts.
template <typename T>
AudioForward audio_forward(Graph<T>& g, const AudioEncoderConfig& cfg,
                           ParamStore<T>& ps, Var x,
                           std::vector<int64_t> lengths, bool train) {
  const Tensor<T>& xv = g.value(x);
  check(xv.rank() == 4 && xv.extent(1) == 1,
        "audio forward: input must be (B, 1, bands, T), got ",
        shape_str(xv.shape()));
  check(xv.extent(2) == cfg.bands, "audio forward: expected ", cfg.bands,
        " bands, got ", xv.extent(2));
  const int64_t B = xv.extent(0), Tn = xv.extent(3);
  check(int64_t(lengths.size()) == B, "audio forward: ", lengths.size(),
        " lengths for batch of ", B);
  for (int64_t len : lengths)
    check(len >= 1 && len <= Tn, "audio forward: caption length ", len,
          " outside [1, ", Tn, "]");

  Var h = batchnorm(g, x, g.param(ps.get("audio/bn/gamma")),
                    g.param(ps.get("audio/bn/beta")), train,
                    &ps.buffer("audio/bn/running_mean"),
                    &ps.buffer("audio/bn/running_var"));
  std::vector<int64_t> cur = lengths;
  for (int64_t l = 0; l < AudioEncoderConfig::kLayers; ++l) {
    const std::string base = cat("audio/conv", l + 1);
    const Pad ph = (l == 0) ? Pad::valid : Pad::same;
    h = conv2d(g, h, g.param(ps.get(base + "/w")),
               g.param(ps.get(base + "/b")), 1, 1, ph, Pad::same);
    h = relu(g, h);
    h = mask_time(g, h, cur);
    if (l >= 1 && l <= 3) {
      h = maxpool1d(g, h, 3, 2);
      for (int64_t& len : cur) len = ceil_div(len, 2);
    }
  }
  return {h, cur};
}

// Zero-pads spectrogram frames (bands, T_i) to the batch maximum.
template <typename T>
Tensor<T> batch_pad(const std::vector<Tensor<T>>& specs,
                    std::vector<int64_t>* lengths) {
  check(!specs.empty(), "batch pad: empty batch");
  const int64_t B = int64_t(specs.size());
  const int64_t bands = specs[0].extent(0);
  int64_t tmax = 0;
  lengths->clear();
  for (const Tensor<T>& s : specs) {
    check(s.rank() == 2 && s.extent(0) == bands,
          "batch pad: inconsistent spectrogram shape ", shape_str(s.shape()));
    lengths->push_back(s.extent(1));
    tmax = std::max(tmax, s.extent(1));
  }
  Tensor<T> out({B, 1, bands, tmax});
  for (int64_t b = 0; b < B; ++b) {
    const Tensor<T>& s = specs[size_t(b)];
    const int64_t tn = s.extent(1);
    for (int64_t f = 0; f < bands; ++f)
      for (int64_t t = 0; t < tn; ++t)
        out(b, 0, f, t) = s(f, t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// image preprocessing

// Resize smallest side, crop (random offsets in train mode, centered in
// eval), then standardize by the corpus statistics.
inline Tensor<float> preprocess_image(const Tensor<float>& raw,
                                      const ImageEncoderConfig& cfg,
                                      const ImageStats& stats, bool train,
                                      Rng* rng = nullptr) {
  check(raw.rank() == 3 && raw.extent(0) == 3,
        "preprocess: image must be (3, H, W), got ", shape_str(raw.shape()));
  Tensor<float> img = raw;
  if (std::min(img.extent(1), img.extent(2)) != cfg.resize_side)
    img = resize_smallest_side(img, cfg.resize_side);
  const int64_t S = cfg.input_size;
  check(img.extent(1) >= S && img.extent(2) >= S,
        "preprocess: image ", shape_str(img.shape()),
        " smaller than crop size ", S);
  if (img.extent(1) != S || img.extent(2) != S) {
    if (train) {
      check(rng != nullptr, "preprocess: train mode needs an rng");
      const int64_t y0 = rng->uniform_int(0, img.extent(1) - S);
      const int64_t x0 = rng->uniform_int(0, img.extent(2) - S);
      Tensor<float> crop({3, S, S});
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < S; ++y)
          for (int64_t x = 0; x < S; ++x)
            crop(c, y, x) = img(c, y0 + y, x0 + x);
      img = std::move(crop);
    } else {
      img = center_crop(img, S);
    }
  }
  return standardize(img, stats);
}

}  // namespace mm
