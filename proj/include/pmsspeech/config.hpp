// include/pmsspeech/config.hpp
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

#ifndef PMSSPEECH_CONFIG_HPP_
#define PMSSPEECH_CONFIG_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pmsspeech/model.hpp"
#include "pmsspeech/ssl.hpp"

namespace pms {

// Plain-text section/key-value config file ("[section]" headers, "key = value"
// lines, '#' comments).
using IniData = std::map<std::string, std::map<std::string, std::string>>;
IniData parse_ini(const std::string& text);
IniData load_ini(const std::string& path);

struct TrainStageConfig {
  long steps = 2000;
  double peak_lr = 5e-4;
  double warmup_fraction = 0.08;
  double batch_seconds = 10.0;
  AdamConfig adam;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/exp";
  int threads = 0;

  std::string unlabeled_dir;
  std::string labeled_dir;
  std::string transcripts;

  ModelConfig model;  // iteration-2 architecture (K, codebooks, windows)
  MaskConfig mask;

  int cluster1_k = 100;
  double cluster1_subsample = 1.0;
  int cluster1_max_iters = 50;

  std::vector<int> cluster2_sizes = {100, 300, 500};
  double cluster2_subsample = 0.1;
  int cluster2_max_iters = 50;

  int extract_layer = 6;

  TrainStageConfig pretrain1;
  TrainStageConfig pretrain2;
  bool iter2_warm_start = false;  // fresh initialization by default

  TrainStageConfig finetune;
  std::string freeze_policy = "freeze-conv";

  int beam_width = 8;
  double lm_weight = 1.0;
  double length_bonus = 0.0;
  int lm_order = 3;
};

ExperimentConfig parse_experiment_config(const IniData& ini);
ExperimentConfig load_experiment_config(const std::string& path);
// Canonical text (sorted sections/keys); basis of the config hash.
std::string serialize_experiment_config(const ExperimentConfig& cfg);
// Commented config template: desk-scale values with the full-scale defaults
// noted beside each training constant.
std::string annotated_config_text(const ExperimentConfig& cfg);
void validate_experiment_config(const ExperimentConfig& cfg);

std::uint64_t fnv1a64(const std::string& text);
std::string config_hash_hex(const ExperimentConfig& cfg);

}  // namespace pms

#endif  // PMSSPEECH_CONFIG_HPP_
