// src/pipeline.cpp
//
// Copyright 2026  The pmsspeech Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "pmsspeech/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pmsspeech/beam.hpp"
#include "pmsspeech/ctc.hpp"
#include "pmsspeech/features.hpp"
#include "pmsspeech/ngram.hpp"
#include "pmsspeech/parallel.hpp"
#include "pmsspeech/rng.hpp"
#include "pmsspeech/wer.hpp"

namespace fs = std::filesystem;

namespace pms {

// ---- Corpus access -----------------------------------------------------------

std::vector<Utterance> scan_corpus(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw ValidationError("corpus directory does not exist: " + dir);
  std::vector<Utterance> utts;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext != ".wav" && ext != ".pmsw") continue;
    utts.push_back({entry.path().stem().string(), entry.path().string()});
  }
  std::sort(utts.begin(), utts.end(),
            [](const Utterance& a, const Utterance& b) { return a.id < b.id; });
  return utts;
}

std::map<std::string, std::string> read_transcripts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open transcripts: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ValidationError("transcripts line " + std::to_string(line_no) +
                            ": expected utt_id<TAB>text in " + path);
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

void write_transcripts(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(path);
  if (!out) throw StageError("cannot write transcripts: " + path);
  for (const auto& [id, text] : entries) out << id << '\t' << text << '\n';
}

std::vector<std::string> build_vocab(
    const std::map<std::string, std::string>& transcripts) {
  std::set<std::string> tokens;
  for (const auto& [id, text] : transcripts)
    for (const std::string& tok : split_tokens(text)) tokens.insert(tok);
  if (tokens.empty()) throw ValidationError("transcripts contain no tokens");
  return {tokens.begin(), tokens.end()};
}

std::vector<int> resample_labels(const std::vector<int>& labels, Index target_len) {
  if (labels.empty()) throw ValidationError("resample_labels: empty label sequence");
  if (target_len < 1) throw ValidationError("resample_labels: bad target length");
  std::vector<int> out(static_cast<std::size_t>(target_len));
  const auto src_len = static_cast<Index>(labels.size());
  for (Index t = 0; t < target_len; ++t) {
    const Index idx = std::min<Index>(src_len - 1, t * src_len / target_len);
    out[static_cast<std::size_t>(t)] = labels[static_cast<std::size_t>(idx)];
  }
  return out;
}

std::vector<std::vector<std::size_t>> batch_by_duration(const std::vector<double>& seconds,
                                                        double cap_seconds) {
  if (!(cap_seconds > 0.0)) throw ValidationError("batch cap must be positive");
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  double used = 0.0;
  for (std::size_t i = 0; i < seconds.size(); ++i) {
    if (!current.empty() && used + seconds[i] > cap_seconds) {
      batches.push_back(std::move(current));
      current.clear();
      used = 0.0;
    }
    current.push_back(i);
    used += seconds[i];
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

// ---- Toy corpus ----------------------------------------------------------------

namespace {

Waveform toy_utterance(const std::vector<int>& symbols, const ToyCorpusSpec& spec,
                       Rng* rng) {
  const auto per_symbol =
      static_cast<Index>(std::lround(spec.symbol_seconds * spec.sample_rate));
  const Index ramp = spec.sample_rate / 80;  // 12.5 ms on/off ramps
  Waveform w;
  w.sample_rate = spec.sample_rate;
  w.samples = Vec::Zero(per_symbol * static_cast<Index>(symbols.size()));
  Index at = 0;
  for (int s : symbols) {
    // Two log-spaced tones per symbol keep the classes spectrally distinct.
    const double f1 = 300.0 * std::pow(1.3, s);
    const double f2 = 2.6 * f1 + 70.0;
    const double phase = rng->uniform(0.0, 2.0 * M_PI);
    for (Index i = 0; i < per_symbol; ++i, ++at) {
      double envelope = 1.0;
      if (i < ramp) envelope = 0.5 - 0.5 * std::cos(M_PI * i / static_cast<double>(ramp));
      if (per_symbol - i <= ramp)
        envelope = 0.5 - 0.5 * std::cos(M_PI * (per_symbol - i) / static_cast<double>(ramp));
      const double t = static_cast<double>(i) / spec.sample_rate;
      w.samples(at) = envelope * (0.32 * std::sin(2.0 * M_PI * f1 * t + phase) +
                                  0.22 * std::sin(2.0 * M_PI * f2 * t)) +
                      0.004 * rng->uniform(-1.0, 1.0);
    }
  }
  return w;
}

std::string utt_name(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03d", prefix, index);
  return buf;
}

}  // namespace

void gen_toy_corpus(const std::string& out_dir, const ToyCorpusSpec& spec) {
  if (spec.num_unlabeled < 1 || spec.num_labeled < 1)
    throw ValidationError("gen_toy_corpus: need at least one utterance of each kind");
  if (spec.num_symbols < 2 || spec.num_symbols > 26)
    throw ValidationError("gen_toy_corpus: symbol count outside [2, 26]");
  if (spec.min_length < 1 || spec.max_length < spec.min_length)
    throw ValidationError("gen_toy_corpus: bad utterance length range");

  fs::create_directories(fs::path(out_dir) / "unlabeled");
  fs::create_directories(fs::path(out_dir) / "labeled");

  Rng rng(spec.seed);
  auto random_symbols = [&]() {
    const int len = spec.min_length +
                    static_cast<int>(rng.uniform_index(
                        static_cast<std::uint64_t>(spec.max_length - spec.min_length + 1)));
    std::vector<int> symbols(static_cast<std::size_t>(len));
    for (int& s : symbols)
      s = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.num_symbols)));
    return symbols;
  };

  for (int u = 0; u < spec.num_unlabeled; ++u) {
    const Waveform w = toy_utterance(random_symbols(), spec, &rng);
    write_wav16((fs::path(out_dir) / "unlabeled" / (utt_name("unlab", u) + ".wav")).string(),
                w);
  }

  std::vector<std::pair<std::string, std::string>> transcripts;
  for (int u = 0; u < spec.num_labeled; ++u) {
    const std::vector<int> symbols = random_symbols();
    const Waveform w = toy_utterance(symbols, spec, &rng);
    const std::string id = utt_name("lab", u);
    write_wav16((fs::path(out_dir) / "labeled" / (id + ".wav")).string(), w);
    std::string text;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i) text += ' ';
      text += static_cast<char>('a' + symbols[i]);
    }
    transcripts.emplace_back(id, text);
  }
  write_transcripts((fs::path(out_dir) / "labeled" / "transcripts.tsv").string(),
                    transcripts);
}

ExperimentConfig default_toy_config(const std::string& corpus_dir,
                                    const std::string& output_dir) {
  ExperimentConfig cfg;
  cfg.model = desk_model_config();
  cfg.seed = 1;
  cfg.output_dir = output_dir;
  cfg.unlabeled_dir = (fs::path(corpus_dir) / "unlabeled").string();
  cfg.labeled_dir = (fs::path(corpus_dir) / "labeled").string();
  cfg.transcripts = (fs::path(corpus_dir) / "labeled" / "transcripts.tsv").string();
  cfg.cluster1_k = 100;
  cfg.cluster1_subsample = 1.0;
  cfg.cluster1_max_iters = 30;
  cfg.cluster2_sizes = {50, 100};
  cfg.cluster2_subsample = 0.1;
  cfg.cluster2_max_iters = 30;
  cfg.extract_layer = 2;
  cfg.pretrain1.steps = 400;
  cfg.pretrain1.peak_lr = 1e-3;
  cfg.pretrain1.batch_seconds = 8.0;
  cfg.pretrain2.steps = 600;
  cfg.pretrain2.peak_lr = 1e-3;
  cfg.pretrain2.batch_seconds = 8.0;
  cfg.finetune.steps = 1000;
  cfg.finetune.peak_lr = 3e-3;
  cfg.finetune.batch_seconds = 20.0;
  cfg.freeze_policy = "freeze-conv";
  cfg.beam_width = 8;
  cfg.lm_weight = 0.5;
  cfg.length_bonus = 0.0;
  cfg.lm_order = 3;
  validate_experiment_config(cfg);
  return cfg;
}

// ---- Run manifest ----------------------------------------------------------------

RunManifest RunManifest::load_or_create(const std::string& path,
                                        const std::string& config_hash,
                                        std::uint64_t seed) {
  RunManifest m;
  m.path_ = path;
  m.config_hash_ = config_hash;
  m.seed_ = seed;
  if (fs::exists(path)) {
    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    for (const auto& e : j.value("epochs", nlohmann::json::array())) {
      Epoch epoch;
      epoch.stage = e.value("stage", "");
      epoch.status = e.value("status", "");
      epoch.config_hash = e.value("config_hash", "");
      epoch.error = e.value("error", "");
      for (const auto& a : e.value("artifacts", nlohmann::json::array()))
        epoch.artifacts.push_back(a.get<std::string>());
      m.epochs_.push_back(std::move(epoch));
    }
  }
  return m;
}

bool RunManifest::stage_done(const std::string& stage) const {
  // Scan newest-first so a rerun after failure sees the latest status.
  for (auto it = epochs_.rbegin(); it != epochs_.rend(); ++it) {
    if (it->stage != stage || it->config_hash != config_hash_) continue;
    if (it->status != "done") return false;
    for (const std::string& artifact : it->artifacts)
      if (!fs::exists(artifact)) return false;
    return true;
  }
  return false;
}

void RunManifest::record_done(const std::string& stage,
                              const std::vector<std::string>& artifacts) {
  epochs_.push_back({stage, "done", config_hash_, artifacts, ""});
}

void RunManifest::record_failed(const std::string& stage, const std::string& error) {
  epochs_.push_back({stage, "failed", config_hash_, {}, error});
}

void RunManifest::save() const {
  nlohmann::json j;
  j["config_hash"] = config_hash_;
  j["seed"] = seed_;
  j["epochs"] = nlohmann::json::array();
  for (const Epoch& e : epochs_) {
    nlohmann::json je;
    je["stage"] = e.stage;
    je["status"] = e.status;
    je["config_hash"] = e.config_hash;
    je["artifacts"] = e.artifacts;
    if (!e.error.empty()) je["error"] = e.error;
    j["epochs"].push_back(je);
  }
  std::ofstream out(path_);
  if (!out) throw StageError("cannot write manifest: " + path_);
  out << j.dump(2) << "\n";
}

// ---- Pipeline ----------------------------------------------------------------------

namespace {

ModelConfig iter1_model_config(const ExperimentConfig& cfg) {
  // Iteration 1 is the plain baseline recipe: single top-layer loss over the
  // MFCC codebook, no attention windows.
  ModelConfig m = cfg.model;
  m.window_schedule.assign(static_cast<std::size_t>(m.num_layers), kUnboundedWindow);
  m.supervised_layers = {m.num_layers};
  m.codebook_sizes = {cfg.cluster1_k};
  return m;
}

std::string joined(const fs::path& a, const std::string& b) { return (a / b).string(); }

}  // namespace

Pipeline::Pipeline(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  validate_experiment_config(cfg_);
  hash_ = config_hash_hex(cfg_);
  run_dir_ = joined(fs::path(cfg_.output_dir), "run-" + hash_.substr(0, 8));
  for (const char* sub : {"", "mfcc", "cluster", "labels", "checkpoints", "lm", "decode",
                          "eval"})
    fs::create_directories(fs::path(run_dir_) / sub);
  fs::create_directories(fs::path(run_dir_) /
                         ("feats_layer" + std::to_string(cfg_.extract_layer)));
  manifest_ = RunManifest::load_or_create(joined(fs::path(run_dir_), "manifest.json"),
                                          hash_, cfg_.seed);
  // Keep a copy of the exact configuration next to the artifacts.
  const std::string cfg_file = joined(fs::path(run_dir_), "config.txt");
  if (!fs::exists(cfg_file)) {
    std::ofstream out(cfg_file);
    out << serialize_experiment_config(cfg_);
  }
}

std::string Pipeline::checkpoint_path(const std::string& name) const {
  return joined(fs::path(run_dir_) / "checkpoints", name + ".pmsc");
}

std::string Pipeline::metrics_path() const {
  return joined(fs::path(run_dir_), "metrics.txt");
}

std::string Pipeline::hypotheses_path(const std::string& decoder) const {
  return joined(fs::path(run_dir_) / "decode", decoder + ".tsv");
}

std::string Pipeline::report_path() const {
  return joined(fs::path(run_dir_) / "eval", "report.txt");
}

void Pipeline::require_unlabeled() {
  if (scan_corpus(cfg_.unlabeled_dir).empty())
    throw ValidationError("unlabeled corpus is empty: " + cfg_.unlabeled_dir);
}

void Pipeline::require_labeled() {
  const std::vector<Utterance> utts = scan_corpus(cfg_.labeled_dir);
  if (utts.empty())
    throw ValidationError("labeled corpus is empty: " + cfg_.labeled_dir);
  const auto transcripts = read_transcripts(cfg_.transcripts);
  for (const Utterance& u : utts)
    if (!transcripts.count(u.id))
      throw ValidationError("missing transcript for utterance " + u.id);
}

void Pipeline::guarded(const std::string& stage, const std::vector<std::string>& artifacts,
                       const std::function<void()>& body) {
  if (manifest_.stage_done(stage)) return;
  try {
    body();
  } catch (const std::exception& e) {
    manifest_.record_failed(stage, e.what());
    manifest_.save();
    throw StageError("stage " + stage + ": " + e.what());
  }
  manifest_.record_done(stage, artifacts);
  manifest_.save();
}

void Pipeline::stage_mfcc() {
  require_unlabeled();
  const std::vector<Utterance> utts = scan_corpus(cfg_.unlabeled_dir);
  std::vector<std::string> artifacts;
  for (const Utterance& u : utts)
    artifacts.push_back(joined(fs::path(run_dir_) / "mfcc", u.id + ".pmsf"));
  guarded("mfcc", artifacts, [&] {
    parallel_for_ordered(utts.size(), cfg_.threads, [&](std::size_t i) {
      const Waveform w = read_audio(utts[i].path);
      const FeatureSequence f = utterance_normalize(mfcc39(w));
      write_pmsf(artifacts[i], f);
    });
  });
}

void Pipeline::stage_cluster1() {
  stage_mfcc();
  const std::vector<Utterance> utts = scan_corpus(cfg_.unlabeled_dir);
  const std::string codebook =
      joined(fs::path(run_dir_) / "cluster", "iter1_k" + std::to_string(cfg_.cluster1_k) +
                                                 ".pmsf");
  const std::string labels =
      joined(fs::path(run_dir_) / "labels", "iter1_k" + std::to_string(cfg_.cluster1_k) +
                                                ".labels");
  guarded("cluster1", {codebook, labels}, [&] {
    std::vector<Mat> corpus;
    corpus.reserve(utts.size());
    for (const Utterance& u : utts)
      corpus.push_back(read_pmsf(joined(fs::path(run_dir_) / "mfcc", u.id + ".pmsf")).frames);
    const Mat sample =
        subsample_frames(corpus, cfg_.cluster1_subsample, derive_seed(cfg_.seed, 101));
    ClusterModel model = kmeans_fit(sample, cfg_.cluster1_k, cfg_.cluster1_max_iters,
                                    derive_seed(cfg_.seed, 102));
    TargetAssignment assignment;
    assignment.codebook_size = cfg_.cluster1_k;
    assignment.source = "mfcc";
    assignment.labels.resize(corpus.size());
    parallel_for_ordered(corpus.size(), cfg_.threads, [&](std::size_t i) {
      assignment.labels[i] = assign(model, corpus[i]);
    });
    write_codebook(codebook, model);
    write_labels(labels, assignment);
  });
}

std::vector<PretrainItem> Pipeline::load_pretrain_items(
    const ModelConfig& model_cfg,
    const std::map<int, const TargetAssignment*>& targets_by_layer) {
  const std::vector<Utterance> utts = scan_corpus(cfg_.unlabeled_dir);
  std::vector<PretrainItem> items(utts.size());
  parallel_for_ordered(utts.size(), cfg_.threads, [&](std::size_t i) {
    PretrainItem& item = items[i];
    item.utt_id = utts[i].id;
    item.waveform = read_audio(utts[i].path);
    const Index t_len = conv_output_length(model_cfg, item.waveform.samples.size());
    if (t_len < 1)
      throw ValidationError("utterance " + item.utt_id + " is too short (needs " +
                            std::to_string(conv_min_samples(model_cfg)) + " samples)");
    for (const auto& [layer, assignment] : targets_by_layer) {
      const std::vector<int>& raw = assignment->labels.at(i);
      item.targets[layer] = static_cast<Index>(raw.size()) == t_len
                                ? raw
                                : resample_labels(raw, t_len);
    }
  });
  return items;
}

void Pipeline::train_stage(const std::string& stage, Model* model,
                           const std::vector<PretrainItem>& items,
                           const TrainStageConfig& tsc) {
  std::vector<double> seconds;
  seconds.reserve(items.size());
  for (const PretrainItem& item : items)
    seconds.push_back(static_cast<double>(item.waveform.samples.size()) /
                      item.waveform.sample_rate);
  const auto batch_indices = batch_by_duration(seconds, tsc.batch_seconds);
  std::vector<std::vector<PretrainItem>> batches;
  batches.reserve(batch_indices.size());
  for (const auto& indices : batch_indices) {
    std::vector<PretrainItem> batch;
    batch.reserve(indices.size());
    for (std::size_t i : indices) batch.push_back(items[i]);
    batches.push_back(std::move(batch));
  }

  SslTrainConfig train;
  train.mask = cfg_.mask;
  train.schedule.peak = tsc.peak_lr;
  train.schedule.warmup_fraction = tsc.warmup_fraction;
  train.schedule.total_steps = tsc.steps;
  train.adam = tsc.adam;
  train.mask_seed = derive_seed(cfg_.seed, fnv1a64(stage));
  train.threads = cfg_.threads;

  AdamState state;
  state.init_for(model->params);
  std::ofstream metrics(metrics_path(), std::ios::app);
  for (long step = 0; step < tsc.steps; ++step) {
    const StepMetrics m = pretrain_step(
        model, &state, batches[static_cast<std::size_t>(step) % batches.size()], train,
        step);
    metrics << format_metrics_line(m, stage) << "\n";
  }
  metrics.flush();
}

void Pipeline::stage_pretrain1() {
  stage_cluster1();
  const std::string ckpt = checkpoint_path("iter1");
  guarded("pretrain1", {ckpt}, [&] {
    const ModelConfig model_cfg = iter1_model_config(cfg_);
    const TargetAssignment labels = read_labels(
        joined(fs::path(run_dir_) / "labels",
               "iter1_k" + std::to_string(cfg_.cluster1_k) + ".labels"));
    std::map<int, const TargetAssignment*> targets{{model_cfg.num_layers, &labels}};
    std::vector<PretrainItem> items = load_pretrain_items(model_cfg, targets);
    Model model = init_model(model_cfg, derive_seed(cfg_.seed, 111));
    train_stage("pretrain1", &model, items, cfg_.pretrain1);
    save_checkpoint(ckpt, model);
  });
}

void Pipeline::stage_extract() {
  stage_pretrain1();
  const std::vector<Utterance> utts = scan_corpus(cfg_.unlabeled_dir);
  const fs::path feat_dir =
      fs::path(run_dir_) / ("feats_layer" + std::to_string(cfg_.extract_layer));
  std::vector<std::string> artifacts;
  for (const Utterance& u : utts) artifacts.push_back(joined(feat_dir, u.id + ".pmsf"));
  guarded("extract", artifacts, [&] {
    const Model model = load_checkpoint(checkpoint_path("iter1"));
    if (cfg_.extract_layer > model.config.num_layers)
      throw ValidationError("extract layer out of range for the checkpoint");
    parallel_for_ordered(utts.size(), cfg_.threads, [&](std::size_t i) {
      const Waveform w = read_audio(utts[i].path);
      Tape tape;
      BoundParams p(&tape, model.params);
      Var frames = conv_encode(tape, model.config, p, w);
      const Index t_len = tape.value(frames).rows();
      Var x = add(tape, frames,
                  tape.input(sinusoidal_positions(t_len, model.config.model_dim)));
      const AttentionMaskPlan plan =
          build_attention_masks(static_cast<int>(t_len), model.config);
      EncoderForward enc = encoder_forward(tape, model.config, p, x, plan);
      FeatureSequence f;
      f.frames = tape.value(enc.layers[static_cast<std::size_t>(cfg_.extract_layer - 1)]);
      f.frame_rate = conv_frame_rate(model.config);
      f.source = static_cast<std::uint8_t>(cfg_.extract_layer);
      write_pmsf(artifacts[i], f);
    });
  });
}

void Pipeline::stage_cluster2() {
  stage_extract();
  const std::vector<Utterance> utts = scan_corpus(cfg_.unlabeled_dir);
  const fs::path feat_dir =
      fs::path(run_dir_) / ("feats_layer" + std::to_string(cfg_.extract_layer));
  std::vector<std::string> artifacts;
  for (int size : cfg_.cluster2_sizes) {
    artifacts.push_back(
        joined(fs::path(run_dir_) / "cluster", "iter2_k" + std::to_string(size) + ".pmsf"));
    artifacts.push_back(
        joined(fs::path(run_dir_) / "labels", "iter2_k" + std::to_string(size) + ".labels"));
  }
  guarded("cluster2", artifacts, [&] {
    std::vector<Mat> corpus;
    corpus.reserve(utts.size());
    for (const Utterance& u : utts)
      corpus.push_back(read_pmsf(joined(feat_dir, u.id + ".pmsf")).frames);
    const Mat sample =
        subsample_frames(corpus, cfg_.cluster2_subsample, derive_seed(cfg_.seed, 201));
    const MultiResolutionTargets targets = multi_resolution_targets(
        sample, corpus, cfg_.cluster2_sizes,
        "encoder-layer-" + std::to_string(cfg_.extract_layer), cfg_.cluster2_max_iters,
        derive_seed(cfg_.seed, 202));
    for (int size : cfg_.cluster2_sizes) {
      write_codebook(joined(fs::path(run_dir_) / "cluster",
                            "iter2_k" + std::to_string(size) + ".pmsf"),
                     targets.models.at(size));
      write_labels(joined(fs::path(run_dir_) / "labels",
                          "iter2_k" + std::to_string(size) + ".labels"),
                   targets.assignments.at(size));
    }
  });
}

void Pipeline::stage_pretrain2() {
  stage_cluster2();
  const std::string ckpt = checkpoint_path("iter2");
  guarded("pretrain2", {ckpt}, [&] {
    std::map<int, TargetAssignment> loaded;
    std::map<int, const TargetAssignment*> targets;
    for (std::size_t i = 0; i < cfg_.model.supervised_layers.size(); ++i) {
      const int layer = cfg_.model.supervised_layers[i];
      const int size = cfg_.model.codebook_sizes[i];
      if (!loaded.count(size))
        loaded.emplace(size, read_labels(joined(fs::path(run_dir_) / "labels",
                                                "iter2_k" + std::to_string(size) +
                                                    ".labels")));
      targets[layer] = &loaded.at(size);
    }
    std::vector<PretrainItem> items = load_pretrain_items(cfg_.model, targets);
    Model model = init_model(cfg_.model, derive_seed(cfg_.seed, 211));
    if (cfg_.iter2_warm_start) {
      // Carry over every shared (same-name, same-shape) tensor from the
      // iteration-1 encoder; heads stay freshly initialized.
      const Model iter1 = load_checkpoint(checkpoint_path("iter1"));
      for (auto& [name, value] : model.params.items()) {
        if (!iter1.params.contains(name)) continue;
        const Mat& prev = iter1.params.at(name);
        if (prev.rows() == value.rows() && prev.cols() == value.cols()) value = prev;
      }
    }
    train_stage("pretrain2", &model, items, cfg_.pretrain2);
    save_checkpoint(ckpt, model);
  });
}

void Pipeline::stage_finetune() {
  stage_pretrain2();
  require_labeled();
  const std::string ckpt = checkpoint_path("finetuned");
  const std::string vocab_path = joined(fs::path(run_dir_) / "lm", "vocab.txt");
  guarded("finetune", {ckpt, vocab_path}, [&] {
    const auto transcripts = read_transcripts(cfg_.transcripts);
    const std::vector<std::string> vocab = build_vocab(transcripts);
    std::map<std::string, int> token_id;
    for (std::size_t i = 0; i < vocab.size(); ++i)
      token_id[vocab[i]] = static_cast<int>(i) + 1;

    const std::vector<Utterance> utts = scan_corpus(cfg_.labeled_dir);
    std::vector<FinetuneItem> items;
    items.reserve(utts.size());
    for (const Utterance& u : utts) {
      FinetuneItem item;
      item.utt_id = u.id;
      item.waveform = read_audio(u.path);
      for (const std::string& tok : split_tokens(transcripts.at(u.id)))
        item.labels.push_back(token_id.at(tok));
      items.push_back(std::move(item));
    }

    Model model = load_checkpoint(checkpoint_path("iter2"));
    add_ctc_head(&model, static_cast<int>(vocab.size()), derive_seed(cfg_.seed, 301));
    const FreezePolicy policy = parse_freeze_policy(cfg_.freeze_policy);

    std::vector<double> seconds;
    for (const FinetuneItem& item : items)
      seconds.push_back(static_cast<double>(item.waveform.samples.size()) /
                        item.waveform.sample_rate);
    const auto batch_indices = batch_by_duration(seconds, cfg_.finetune.batch_seconds);
    std::vector<std::vector<FinetuneItem>> batches;
    for (const auto& indices : batch_indices) {
      std::vector<FinetuneItem> batch;
      for (std::size_t i : indices) batch.push_back(items[i]);
      batches.push_back(std::move(batch));
    }

    LrSchedule schedule;
    schedule.peak = cfg_.finetune.peak_lr;
    schedule.warmup_fraction = cfg_.finetune.warmup_fraction;
    schedule.total_steps = cfg_.finetune.steps;
    AdamState state;
    state.init_for(model.params);
    FrozenForwardCache cache;
    std::ofstream metrics(metrics_path(), std::ios::app);
    for (long step = 0; step < cfg_.finetune.steps; ++step) {
      const FinetuneMetrics m = finetune_step(
          &model, &state, batches[static_cast<std::size_t>(step) % batches.size()], policy,
          schedule, cfg_.finetune.adam, step, &cache, cfg_.threads);
      metrics << "stage=finetune step=" << m.step << " lr=" << m.lr << " loss=" << m.loss
              << "\n";
    }
    metrics.flush();

    save_checkpoint(ckpt, model);
    std::ofstream vout(vocab_path);
    for (const std::string& tok : vocab) vout << tok << "\n";
  });
}

void Pipeline::stage_decode_eval() {
  stage_finetune();
  const std::string arpa = joined(fs::path(run_dir_) / "lm", "train.arpa");
  const std::string greedy_tsv = hypotheses_path("greedy");
  const std::string beam_tsv = hypotheses_path("beam");
  const std::string report = report_path();
  guarded("decode_eval", {arpa, greedy_tsv, beam_tsv, report}, [&] {
    const Model model = load_checkpoint(checkpoint_path("finetuned"));
    const auto transcripts = read_transcripts(cfg_.transcripts);

    std::vector<std::string> vocab;
    {
      std::ifstream vin(joined(fs::path(run_dir_) / "lm", "vocab.txt"));
      std::string tok;
      while (std::getline(vin, tok))
        if (!tok.empty()) vocab.push_back(tok);
    }
    if (static_cast<int>(vocab.size()) != ctc_vocab_size(model))
      throw ValidationError("vocabulary file does not match the CTC head");

    std::vector<std::vector<std::string>> sentences;
    for (const auto& [id, text] : transcripts) sentences.push_back(split_tokens(text));
    const NgramLM lm = NgramLM::train(sentences, cfg_.lm_order);
    lm.save_arpa(arpa);

    LmFusion fusion;
    fusion.lm = &lm;
    fusion.symbol_tokens.push_back("");  // blank
    for (const std::string& tok : vocab) fusion.symbol_tokens.push_back(tok);

    DecodeConfig decode_cfg;
    decode_cfg.beam_width = cfg_.beam_width;
    decode_cfg.lm_weight = cfg_.lm_weight;
    decode_cfg.length_bonus = cfg_.length_bonus;

    const std::vector<Utterance> utts = scan_corpus(cfg_.labeled_dir);
    std::vector<std::vector<int>> greedy_ids(utts.size());
    std::vector<std::vector<int>> beam_ids(utts.size());
    parallel_for_ordered(utts.size(), cfg_.threads, [&](std::size_t i) {
      const Mat lp = ctc_inference_log_probs(model, read_audio(utts[i].path));
      greedy_ids[i] = greedy_decode(lp);
      beam_ids[i] = beam_decode(lp, decode_cfg, &fusion).symbols;
    });

    auto to_tokens = [&](const std::vector<int>& ids) {
      std::vector<std::string> toks;
      for (int id : ids) toks.push_back(vocab[static_cast<std::size_t>(id - 1)]);
      return toks;
    };
    auto join = [](const std::vector<std::string>& toks) {
      std::string out;
      for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += toks[i];
      }
      return out;
    };

    std::ofstream gout(greedy_tsv), bout(beam_tsv);
    EditCounts greedy_counts, beam_counts;
    long ref_tokens = 0;
    for (std::size_t i = 0; i < utts.size(); ++i) {
      const std::vector<std::string> ref = split_tokens(transcripts.at(utts[i].id));
      const std::vector<std::string> ghyp = to_tokens(greedy_ids[i]);
      const std::vector<std::string> bhyp = to_tokens(beam_ids[i]);
      gout << utts[i].id << '\t' << join(ghyp) << '\n';
      bout << utts[i].id << '\t' << join(bhyp) << '\n';
      const EditCounts g = edit_align(ref, ghyp);
      const EditCounts b = edit_align(ref, bhyp);
      greedy_counts.substitutions += g.substitutions;
      greedy_counts.insertions += g.insertions;
      greedy_counts.deletions += g.deletions;
      beam_counts.substitutions += b.substitutions;
      beam_counts.insertions += b.insertions;
      beam_counts.deletions += b.deletions;
      ref_tokens += static_cast<long>(ref.size());
    }

    std::ofstream rout(report);
    const double greedy_wer =
        static_cast<double>(greedy_counts.distance()) / static_cast<double>(ref_tokens);
    const double beam_wer =
        static_cast<double>(beam_counts.distance()) / static_cast<double>(ref_tokens);
    rout << "ref_tokens=" << ref_tokens << "\n";
    rout << "greedy_wer=" << greedy_wer << " S=" << greedy_counts.substitutions
         << " I=" << greedy_counts.insertions << " D=" << greedy_counts.deletions << "\n";
    rout << "beam_wer=" << beam_wer << " S=" << beam_counts.substitutions
         << " I=" << beam_counts.insertions << " D=" << beam_counts.deletions << "\n";
    // The toy transcripts are single-character tokens, so token error rate is
    // the training CER used by the overfit check.
    rout << "train_greedy_cer=" << greedy_wer << "\n";
  });
}

void Pipeline::run_all() {
  require_unlabeled();
  require_labeled();
  stage_pretrain1();
  stage_extract();
  stage_cluster2();
  stage_pretrain2();
  stage_finetune();
  stage_decode_eval();
}

}  // namespace pms
