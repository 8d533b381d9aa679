// include/pmsspeech/pipeline.hpp
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

#ifndef PMSSPEECH_PIPELINE_HPP_
#define PMSSPEECH_PIPELINE_HPP_

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pmsspeech/config.hpp"
#include "pmsspeech/finetune.hpp"
#include "pmsspeech/kmeans.hpp"
#include "pmsspeech/model.hpp"
#include "pmsspeech/ssl.hpp"
#include "pmsspeech/wave.hpp"

namespace pms {

// ---- Corpus access -----------------------------------------------------------

struct Utterance {
  std::string id;      // filename stem
  std::string path;    // audio file
};

// Sorted by id; accepts .wav and .pmsw files.
std::vector<Utterance> scan_corpus(const std::string& dir);

// "utt_id<TAB>text" lines.
std::map<std::string, std::string> read_transcripts(const std::string& path);
void write_transcripts(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& entries);

// Sorted distinct whitespace tokens over all transcripts.
std::vector<std::string> build_vocab(const std::map<std::string, std::string>& transcripts);

// Nearest-index resampling of per-frame labels onto a new frame count
// (iteration-1 MFCC labels live at 100 Hz, the encoder at 50 Hz).
std::vector<int> resample_labels(const std::vector<int>& labels, Index target_len);

// Greedy duration-capped batching in utterance-id order.
std::vector<std::vector<std::size_t>> batch_by_duration(const std::vector<double>& seconds,
                                                        double cap_seconds);

// ---- Toy corpus ----------------------------------------------------------------

struct ToyCorpusSpec {
  int num_unlabeled = 50;
  int num_labeled = 10;
  int num_symbols = 6;     // vocabulary 'a'..'f'
  int min_length = 5;      // symbols per utterance
  int max_length = 9;
  double symbol_seconds = 0.2;
  int sample_rate = 16000;
  std::uint64_t seed = 1;
};

// Synthetic multi-tone utterances with known transcripts: unlabeled/*.wav,
// labeled/*.wav, labeled/transcripts.tsv.
void gen_toy_corpus(const std::string& out_dir, const ToyCorpusSpec& spec);

// Experiment config preconfigured for the generated toy corpus.
ExperimentConfig default_toy_config(const std::string& corpus_dir,
                                    const std::string& output_dir);

// ---- Run manifest ---------------------------------------------------------------

class RunManifest {
 public:
  RunManifest() = default;
  static RunManifest load_or_create(const std::string& path, const std::string& config_hash,
                                    std::uint64_t seed);
  bool stage_done(const std::string& stage) const;
  void record_done(const std::string& stage, const std::vector<std::string>& artifacts);
  void record_failed(const std::string& stage, const std::string& error);
  void save() const;
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::string config_hash_;
  std::uint64_t seed_ = 0;
  struct Epoch {
    std::string stage;
    std::string status;  // done | failed
    std::string config_hash;
    std::vector<std::string> artifacts;
    std::string error;
  };
  std::vector<Epoch> epochs_;
};

// ---- Pipeline --------------------------------------------------------------------

class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg);

  // Stage entry points; each is idempotent under an unchanged config hash.
  void stage_mfcc();
  void stage_cluster1();
  void stage_pretrain1();
  void stage_extract();
  void stage_cluster2();
  void stage_pretrain2();
  void stage_finetune();
  void stage_decode_eval();

  // The full two-iteration recipe plus fine-tuning and evaluation.
  void run_all();

  const std::string& run_dir() const { return run_dir_; }
  std::string checkpoint_path(const std::string& name) const;
  std::string metrics_path() const;
  std::string hypotheses_path(const std::string& decoder) const;
  std::string report_path() const;

 private:
  void require_unlabeled();
  void require_labeled();
  std::vector<PretrainItem> load_pretrain_items(
      const ModelConfig& model_cfg,
      const std::map<int, const TargetAssignment*>& targets_by_layer);
  void train_stage(const std::string& stage, Model* model,
                   const std::vector<PretrainItem>& items, const TrainStageConfig& tsc);
  // Runs body() unless the manifest marks the stage done; records the result.
  void guarded(const std::string& stage, const std::vector<std::string>& artifacts,
               const std::function<void()>& body);

  ExperimentConfig cfg_;
  std::string hash_;
  std::string run_dir_;
  RunManifest manifest_;
};

}  // namespace pms

#endif  // PMSSPEECH_PIPELINE_HPP_
