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

// Margin-ranking training loop: epoch-seeded shuffling and imposter
// sampling, per-batch graphs, SGD with momentum and stepped decay, and
// per-epoch validation recall.

#ifndef MATCHMAP_TRAINER_HPP_
#define MATCHMAP_TRAINER_HPP_

#include <cstdint>
#include <ostream>
#include <utility>
#include <vector>

#include "matchmap/analysis.hpp"
#include "matchmap/checkpoint.hpp"
#include "matchmap/common.hpp"
#include "matchmap/dataset.hpp"
#include "matchmap/encoders.hpp"
#include "matchmap/optim.hpp"
#include "matchmap/similarity.hpp"

namespace mm {

struct EpochLog {
  int64_t epoch = 0;
  double mean_loss = 0;  // per-pair average of the summed batch losses
  double lr = 0;
  double val_r1 = 0;
  double val_r10 = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int64_t pairs_seen = 0;
};

namespace detail {

inline uint64_t epoch_seed(uint64_t seed, int64_t epoch) {
  return mix_seed(mix_seed(seed, 0x65706f63), uint64_t(epoch));
}

}  // namespace detail

// Runs epochs [start_epoch, cfg.epochs). The store is initialized from the
// training seed when empty, so a populated store resumes training. Fully
// deterministic for a fixed seed: the epoch index keys the shuffle, the
// crop draws, and the imposter draws.
inline TrainResult train_model(const ModelConfig& mcfg,
                               const TrainConfig& tcfg,
                               const ImageStats& stats,
                               const LoadedCorpus& train,
                               const LoadedCorpus& val,
                               ParamStore<float>& ps, SgdState<float>& opt,
                               std::ostream* progress = nullptr,
                               int64_t start_epoch = 0) {
  validate(mcfg);
  validate(tcfg);
  check(train.size() >= 2, "train: need at least 2 training pairs, got ",
        train.size());
  check(val.size() >= 1, "train: empty validation split");
  check(start_epoch >= 0 && start_epoch <= tcfg.epochs,
        "train: start epoch ", start_epoch, " outside [0, ", tcfg.epochs,
        "]");
  if (ps.params().empty()) init_params(mcfg, ps, tcfg.seed);

  const int64_t N = train.size();
  TrainResult result;
  for (int64_t epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
    Rng rng(detail::epoch_seed(tcfg.seed, epoch));
    std::vector<int64_t> order(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) order[size_t(i)] = i;
    rng.shuffle(order);

    double loss_sum = 0;
    int64_t pairs = 0;
    for (int64_t start = 0; start + 2 <= N; start += tcfg.batch) {
      const int64_t B = std::min<int64_t>(tcfg.batch, N - start);
      if (B < 2) break;  // a single leftover pair has no imposters

      const int64_t S = mcfg.image.input_size;
      Tensor<float> images({B, 3, S, S});
      std::vector<Tensor<float>> specs;
      specs.reserve(size_t(B));
      for (int64_t j = 0; j < B; ++j) {
        const int64_t idx = order[size_t(start + j)];
        const Tensor<float> pre = preprocess_image(
            train.images[size_t(idx)], mcfg.image, stats, true, &rng);
        for (int64_t i = 0; i < pre.numel(); ++i)
          images.at_flat(j * pre.numel() + i) = pre.at_flat(i);
        specs.push_back(train.specs[size_t(idx)]);
      }
      std::vector<int64_t> lengths;
      Tensor<float> audio = batch_pad(specs, &lengths);

      Graph<float> g;
      Var img_maps =
          image_forward(g, mcfg.image, ps, g.input(std::move(images)));
      AudioForward af = audio_forward(g, mcfg.audio, ps,
                                      g.input(std::move(audio)), lengths,
                                      true);
      std::vector<Var> img_vars, aud_vars;
      img_vars.reserve(size_t(B));
      aud_vars.reserve(size_t(B));
      for (int64_t j = 0; j < B; ++j) {
        img_vars.push_back(slice_batch(g, img_maps, j));
        aud_vars.push_back(slice_time(g, af.map, j, af.lengths[size_t(j)]));
      }
      Var loss = margin_rank_loss(g, img_vars, aud_vars, mcfg.sim,
                                  float(tcfg.margin), rng);
      loss_sum += double(g.value(loss).at_flat(0));
      pairs += B;

      ps.zero_grads();
      g.backward(loss);
      opt.step(ps, epoch);
    }
    result.pairs_seen += pairs;

    const CorpusMaps val_maps = compute_maps(mcfg, ps, stats, val);
    const RetrievalSummary rs =
        retrieval_eval(val_maps, mcfg.sim, {1, 10});
    EpochLog log;
    log.epoch = epoch;
    log.mean_loss = pairs > 0 ? loss_sum / double(pairs) : 0.0;
    log.lr = opt.lr_at_epoch(epoch);
    for (const auto& [k, recall] : rs.recalls) {
      // Mean of the two directions; both are logged in reports.
      const double avg =
          0.5 * (recall.caption_to_image + recall.image_to_caption);
      if (k == 1) log.val_r1 = avg;
      if (k == 10) log.val_r10 = avg;
    }
    if (progress)
      (*progress) << "epoch " << epoch << " loss " << log.mean_loss << " lr "
                  << log.lr << " val_r1 " << log.val_r1 << " val_r10 "
                  << log.val_r10 << "\n";
    result.log.push_back(log);
  }
  return result;
}

}  // namespace mm

#endif  // MATCHMAP_TRAINER_HPP_
