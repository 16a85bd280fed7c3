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

// mmnet: operator surface for the matchmap pipeline. Settings merge in
// order: built-in defaults, then the --config JSON file, then the
// checkpoint's stored configuration for commands that load one, then
// explicit flags. Every report embeds the merged configuration, its
// hash, and the operative seed; identical inputs produce byte-identical
// report bodies.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "matchmap/analysis.hpp"
#include "matchmap/checkpoint.hpp"
#include "matchmap/dataset.hpp"
#include "matchmap/synth.hpp"
#include "matchmap/taxonomy.hpp"
#include "matchmap/trainer.hpp"

namespace mm {

// Corpus-side config serializers live with the CLI so the signal headers
// stay free of JSON dependencies.
inline void to_json(nlohmann::json& j, const LogmelConfig& c) {
  j = {{"sample_rate", c.sample_rate}, {"window_ms", c.window_ms},
       {"shift_ms", c.shift_ms},       {"nbands", c.nbands},
       {"preemph", c.preemph},         {"floor_energy", c.floor_energy}};
}

inline void from_json(const nlohmann::json& j, LogmelConfig& c) {
  j.at("sample_rate").get_to(c.sample_rate);
  j.at("window_ms").get_to(c.window_ms);
  j.at("shift_ms").get_to(c.shift_ms);
  j.at("nbands").get_to(c.nbands);
  j.at("preemph").get_to(c.preemph);
  j.at("floor_energy").get_to(c.floor_energy);
}

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"classes", c.classes},
       {"image_size", c.image_size},
       {"min_objects", c.min_objects},
       {"max_objects", c.max_objects},
       {"train_samples", c.train_samples},
       {"val_samples", c.val_samples},
       {"sample_rate", c.sample_rate},
       {"seed", c.seed},
       {"tone_seconds", c.tone_seconds},
       {"gap_seconds", c.gap_seconds},
       {"min_side", c.min_side},
       {"max_side", c.max_side}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  j.at("classes").get_to(c.classes);
  j.at("image_size").get_to(c.image_size);
  j.at("min_objects").get_to(c.min_objects);
  j.at("max_objects").get_to(c.max_objects);
  j.at("train_samples").get_to(c.train_samples);
  j.at("val_samples").get_to(c.val_samples);
  j.at("sample_rate").get_to(c.sample_rate);
  j.at("seed").get_to(c.seed);
  j.at("tone_seconds").get_to(c.tone_seconds);
  j.at("gap_seconds").get_to(c.gap_seconds);
  j.at("min_side").get_to(c.min_side);
  j.at("max_side").get_to(c.max_side);
}

// Analysis parameter serializers cover the tunable fields only; frame
// rates and downsample factors derive from the logmel and model configs
// at command time.
inline void to_json(nlohmann::json& j, const LocalizationParams& p) {
  j = {{"tau", p.tau}, {"min_occurrences", p.min_occurrences}};
}

inline void from_json(const nlohmann::json& j, LocalizationParams& p) {
  j.at("tau").get_to(p.tau);
  j.at("min_occurrences").get_to(p.min_occurrences);
}

inline void to_json(nlohmann::json& j, const DiscoveryParams& p) {
  j = {{"smooth_width", p.smooth_width},
       {"smooth_kind", p.smooth_kind == SmoothKind::avg ? "avg" : "max"},
       {"sigma_k", p.sigma_k},
       {"birch_threshold", p.birch_threshold},
       {"branching", p.branching},
       {"max_leaves", p.max_leaves},
       {"target_clusters", p.target_clusters}};
}

inline void from_json(const nlohmann::json& j, DiscoveryParams& p) {
  j.at("smooth_width").get_to(p.smooth_width);
  const std::string kind = j.at("smooth_kind").get<std::string>();
  check(kind == "avg" || kind == "max", "config: smooth_kind must be ",
        "avg or max, got ", kind);
  p.smooth_kind = kind == "avg" ? SmoothKind::avg : SmoothKind::max;
  j.at("sigma_k").get_to(p.sigma_k);
  j.at("birch_threshold").get_to(p.birch_threshold);
  j.at("branching").get_to(p.branching);
  j.at("max_leaves").get_to(p.max_leaves);
  j.at("target_clusters").get_to(p.target_clusters);
}

inline void to_json(nlohmann::json& j, const ConceptParams& p) {
  j = {{"top_k", p.top_k}, {"threshold", p.threshold}};
}

inline void from_json(const nlohmann::json& j, ConceptParams& p) {
  j.at("top_k").get_to(p.top_k);
  j.at("threshold").get_to(p.threshold);
}

inline void to_json(nlohmann::json& j, const VizParams& p) {
  j = {{"top_p", p.top_p}};
}

inline void from_json(const nlohmann::json& j, VizParams& p) {
  j.at("top_p").get_to(p.top_p);
}

}  // namespace mm

namespace {

using nlohmann::json;

struct RunConfig {
  mm::ModelConfig model;
  mm::TrainConfig train;
  mm::LogmelConfig logmel;
  mm::SynthConfig synth;
  mm::LocalizationParams localize;
  mm::DiscoveryParams discover;
  mm::ConceptParams concepts;
  mm::VizParams viz;
};

json run_config_json(const RunConfig& rc) {
  return {{"model", rc.model},       {"train", rc.train},
          {"logmel", rc.logmel},     {"synth", rc.synth},
          {"localize", rc.localize}, {"discover", rc.discover},
          {"concepts", rc.concepts}, {"viz", rc.viz}};
}

void run_config_from_json(const json& j, RunConfig* rc) {
  j.at("model").get_to(rc->model);
  j.at("train").get_to(rc->train);
  j.at("logmel").get_to(rc->logmel);
  j.at("synth").get_to(rc->synth);
  j.at("localize").get_to(rc->localize);
  j.at("discover").get_to(rc->discover);
  j.at("concepts").get_to(rc->concepts);
  j.at("viz").get_to(rc->viz);
}

// Flag values; negative numbers mean the flag was not given.
struct Options {
  std::string config;
  std::string manifest;
  std::string checkpoint;
  std::string sim;
  std::string out;
  int64_t seed = -1;
  int64_t epochs = -1;
  int64_t batch = -1;
  double threshold = -1.0;
  double top_p = -1.0;
};

// Defaults overlaid with the config file. The file may be partial; keys
// it omits keep their defaults.
RunConfig base_config(const Options& o) {
  RunConfig rc;
  if (!o.config.empty()) {
    std::ifstream is(o.config);
    mm::check(bool(is), "cannot open config ", o.config);
    json patch;
    try {
      is >> patch;
    } catch (const json::exception& e) {
      mm::fail("config ", o.config, ": ", e.what());
    }
    json merged = run_config_json(rc);
    merged.merge_patch(patch);
    try {
      run_config_from_json(merged, &rc);
    } catch (const json::exception& e) {
      mm::fail("config ", o.config, ": ", e.what());
    }
  }
  if (!o.sim.empty()) rc.model.sim = mm::parse_sim(o.sim);
  if (o.seed >= 0) {
    rc.train.seed = uint64_t(o.seed);
    rc.synth.seed = uint64_t(o.seed);
  }
  if (o.epochs >= 0) rc.train.epochs = o.epochs;
  if (o.batch >= 0) rc.train.batch = o.batch;
  return rc;
}

// Analysis stages run at the matchmap frame rate implied by the model.
void derive_rates(RunConfig* rc) {
  const double rate = rc->logmel.frame_rate();
  const int64_t down = rc->model.audio.downsample();
  rc->localize.frame_rate_in = rate;
  rc->localize.audio_downsample = down;
  rc->discover.frame_rate_in = rate;
  rc->discover.audio_downsample = down;
  rc->concepts.frame_rate_in = rate;
  rc->concepts.audio_downsample = down;
  rc->viz.fps = rate / double(down);
}

json frame_report(const char* command, const RunConfig& rc, uint64_t seed,
                  json body) {
  char hex[24];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(
                    mm::config_hash(run_config_json(rc))));
  body["command"] = command;
  body["config_hash"] = hex;
  body["seed"] = seed;
  body["config"] = run_config_json(rc);
  return body;
}

void emit(const json& report, const std::string& out) {
  const std::string text = report.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(out, std::ios::binary);
  mm::check(bool(os), "cannot open report path ", out);
  os.write(text.data(), std::streamsize(text.size()));
  mm::check(bool(os), "cannot write report to ", out);
}

// Checkpoint-driven commands share this preamble: restore the parameters
// and adopt the stored model and train configs before flag overrides.
struct LoadedModel {
  mm::ParamStore<float> ps;
  mm::CheckpointMeta meta;
};

LoadedModel open_checkpoint(const Options& o, RunConfig* rc) {
  mm::check(!o.checkpoint.empty(), "--checkpoint is required");
  LoadedModel lm;
  lm.meta = mm::load_checkpoint<float>(o.checkpoint, lm.ps);
  rc->model = lm.meta.model;
  rc->train = lm.meta.train;
  if (!o.sim.empty()) rc->model.sim = mm::parse_sim(o.sim);
  derive_rates(rc);
  return lm;
}

int cmd_synth(const Options& o) {
  RunConfig rc = base_config(o);
  const std::string out_dir = o.out.empty() ? "corpus" : o.out;
  const mm::CorpusReport rep = mm::gen_corpus(rc.synth, out_dir);
  json body = {{"out", out_dir},
               {"train_written", rep.train_written},
               {"val_written", rep.val_written},
               {"dropped_objects", rep.dropped_objects}};
  emit(frame_report("synth", rc, rc.synth.seed, std::move(body)), "");
  return 0;
}

int cmd_featurize(const Options& o) {
  RunConfig rc = base_config(o);
  const mm::Dataset ds = mm::load_manifest(o.manifest);
  // Image statistics always come from the training split.
  const bool with_stats =
      std::filesystem::path(o.manifest).filename() == "train.jsonl";
  const mm::FeaturizeReport rep =
      mm::featurize_corpus(ds, rc.logmel, with_stats);
  json body = {{"manifest", o.manifest},
               {"samples", rep.samples},
               {"stats_written", with_stats}};
  if (with_stats)
    body["stats"] = json{{"mean", {rep.stats.mean[0], rep.stats.mean[1],
                                   rep.stats.mean[2]}},
                         {"stdev", {rep.stats.stdev[0], rep.stats.stdev[1],
                                    rep.stats.stdev[2]}}};
  emit(frame_report("featurize", rc, rc.train.seed, std::move(body)), o.out);
  return 0;
}

int cmd_train(const Options& o) {
  RunConfig rc = base_config(o);
  mm::check(!o.checkpoint.empty(), "--checkpoint is required");
  const mm::Dataset tr_ds = mm::load_manifest(o.manifest);
  const std::string val_manifest =
      (std::filesystem::path(tr_ds.root) / "val.jsonl").string();
  const mm::Dataset va_ds = mm::load_manifest(val_manifest);
  const mm::ImageStats stats = mm::load_stats(mm::stats_path(tr_ds.root));
  const mm::LoadedCorpus train = mm::load_corpus(tr_ds, rc.logmel, false);
  const mm::LoadedCorpus val = mm::load_corpus(va_ds, rc.logmel, false);

  mm::ParamStore<float> ps;
  mm::SgdState<float> opt(rc.train.lr, rc.train.momentum,
                          rc.train.lr_decay_epochs);
  const mm::TrainResult res = mm::train_model(rc.model, rc.train, stats,
                                              train, val, ps, opt, &std::cerr);

  mm::CheckpointMeta meta;
  meta.model = rc.model;
  meta.train = rc.train;
  meta.epoch = rc.train.epochs;
  meta.stats = stats;
  mm::save_checkpoint(o.checkpoint, meta, ps, &opt);

  json log = json::array();
  for (const mm::EpochLog& e : res.log)
    log.push_back({{"epoch", e.epoch},
                   {"loss", e.mean_loss},
                   {"lr", e.lr},
                   {"val_r1", e.val_r1},
                   {"val_r10", e.val_r10}});
  json body = {{"checkpoint", o.checkpoint},
               {"epochs", rc.train.epochs},
               {"pairs_seen", res.pairs_seen},
               {"log", std::move(log)}};
  emit(frame_report("train", rc, rc.train.seed, std::move(body)), o.out);
  return 0;
}

int cmd_eval(const Options& o) {
  RunConfig rc = base_config(o);
  LoadedModel lm = open_checkpoint(o, &rc);
  const mm::Dataset ds = mm::load_manifest(o.manifest);
  const mm::LoadedCorpus corpus = mm::load_corpus(ds, rc.logmel, false);
  const mm::CorpusMaps maps =
      mm::compute_maps(rc.model, lm.ps, lm.meta.stats, corpus);
  const mm::RetrievalSummary rs =
      mm::retrieval_eval(maps, rc.model.sim, {1, 5, 10});
  emit(frame_report("eval", rc, rc.train.seed,
                    mm::retrieval_report(rs, rc.model.sim)),
       o.out);
  return 0;
}

int cmd_localize(const Options& o) {
  RunConfig rc = base_config(o);
  LoadedModel lm = open_checkpoint(o, &rc);
  if (o.threshold >= 0) rc.localize.tau = o.threshold;
  const mm::Dataset ds = mm::load_manifest(o.manifest);
  const mm::LoadedCorpus corpus = mm::load_corpus(ds, rc.logmel, true);
  const std::vector<std::string> words = mm::load_corpus_words(ds.root);
  const mm::CorpusMaps maps =
      mm::compute_maps(rc.model, lm.ps, lm.meta.stats, corpus);
  const mm::LocalizationSummary s =
      mm::localize(maps, corpus, words, rc.localize);
  emit(frame_report("localize", rc, rc.train.seed,
                    mm::localization_report(s, rc.localize)),
       o.out);
  return 0;
}

int cmd_discover(const Options& o) {
  RunConfig rc = base_config(o);
  LoadedModel lm = open_checkpoint(o, &rc);
  if (o.threshold >= 0) rc.discover.sigma_k = o.threshold;
  const mm::Dataset ds = mm::load_manifest(o.manifest);
  const mm::LoadedCorpus corpus = mm::load_corpus(ds, rc.logmel, true);
  const std::vector<std::string> words = mm::load_corpus_words(ds.root);
  const mm::CorpusMaps maps =
      mm::compute_maps(rc.model, lm.ps, lm.meta.stats, corpus);
  const mm::DiscoverySummary s =
      mm::discover(maps, corpus, words, rc.discover);
  emit(frame_report("discover", rc, rc.train.seed,
                    mm::discovery_report(s, rc.discover)),
       o.out);
  return 0;
}

int cmd_concepts(const Options& o) {
  RunConfig rc = base_config(o);
  LoadedModel lm = open_checkpoint(o, &rc);
  if (o.threshold >= 0) rc.concepts.threshold = o.threshold;
  const mm::Dataset ds = mm::load_manifest(o.manifest);
  const mm::LoadedCorpus corpus = mm::load_corpus(ds, rc.logmel, true);
  const std::vector<std::string> words = mm::load_corpus_words(ds.root);
  const mm::Taxonomy tax =
      mm::load_taxonomy(mm::dataset_path(ds, "taxonomy.tsv"));
  const mm::CorpusMaps maps =
      mm::compute_maps(rc.model, lm.ps, lm.meta.stats, corpus);
  const mm::ConceptSummary s =
      mm::concept_eval(maps, corpus, words, tax, rc.concepts);
  emit(frame_report("concepts", rc, rc.train.seed,
                    mm::concept_report(s, rc.concepts)),
       o.out);
  return 0;
}

int cmd_viz(const Options& o) {
  RunConfig rc = base_config(o);
  LoadedModel lm = open_checkpoint(o, &rc);
  if (o.top_p >= 0) rc.viz.top_p = o.top_p;
  const std::string out_dir = o.out.empty() ? "viz" : o.out;
  const mm::Dataset ds = mm::load_manifest(o.manifest);
  const mm::LoadedCorpus corpus = mm::load_corpus(ds, rc.logmel, false);
  const int64_t image_size = rc.model.image.input_size;
  int64_t frames_total = 0;
  for (int64_t i = 0; i < corpus.size(); ++i) {
    const mm::SampleMaps m = mm::eval_forward(
        rc.model, lm.ps, lm.meta.stats, corpus.images[size_t(i)],
        corpus.specs[size_t(i)]);
    frames_total += mm::write_viz(m.image, m.audio, image_size, out_dir,
                                  corpus.ids[size_t(i)], rc.viz);
  }
  json body = {{"out", out_dir},
               {"samples", corpus.size()},
               {"frames_total", frames_total},
               {"fps", rc.viz.fps}};
  emit(frame_report("viz", rc, rc.train.seed, std::move(body)), "");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-visual matchmap pipeline"};
  app.require_subcommand(1);
  Options o;

  const auto add_common = [&o](CLI::App* sub, bool needs_manifest) {
    sub->add_option("--config", o.config, "JSON settings file");
    auto* m = sub->add_option("--manifest", o.manifest, "JSONL manifest");
    if (needs_manifest) m->required();
    sub->add_option("--seed", o.seed, "random seed override");
    sub->add_option("--out", o.out, "report or output path");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a corpus");
  add_common(synth, false);

  CLI::App* featurize =
      app.add_subcommand("featurize", "precompute spectrograms and stats");
  add_common(featurize, true);

  CLI::App* train = app.add_subcommand("train", "fit a model");
  add_common(train, true);
  train->add_option("--checkpoint", o.checkpoint, "checkpoint to write")
      ->required();
  train->add_option("--sim", o.sim, "similarity kind")
      ->check(CLI::IsMember({"sisa", "misa", "sima"}));
  train->add_option("--epochs", o.epochs, "epoch count override");
  train->add_option("--batch", o.batch, "batch size override");

  const auto add_eval_family = [&](const char* name, const char* help,
                                   bool threshold, bool top_p) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, true);
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint to read")
        ->required();
    if (threshold)
      sub->add_option("--threshold", o.threshold, "decision threshold");
    if (top_p) sub->add_option("--top-p", o.top_p, "matchmap mass fraction");
    return sub;
  };

  CLI::App* eval = add_eval_family("eval", "retrieval recall", false, false);
  eval->add_option("--sim", o.sim, "similarity kind override")
      ->check(CLI::IsMember({"sisa", "misa", "sima"}));
  CLI::App* localize =
      add_eval_family("localize", "speech-prompted localization", true, false);
  CLI::App* discover =
      add_eval_family("discover", "cluster discovery report", true, false);
  CLI::App* concepts =
      add_eval_family("concepts", "concept dictionary scores", true, false);
  CLI::App* viz =
      add_eval_family("viz", "matchmap mask sequences", false, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (featurize->parsed()) return cmd_featurize(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (localize->parsed()) return cmd_localize(o);
    if (discover->parsed()) return cmd_discover(o);
    if (concepts->parsed()) return cmd_concepts(o);
    if (viz->parsed()) return cmd_viz(o);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mmnet: %s\n", e.what());
    return 1;
  }
  return 1;
}
