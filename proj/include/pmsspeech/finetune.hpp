// include/pmsspeech/finetune.hpp
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

#ifndef PMSSPEECH_FINETUNE_HPP_
#define PMSSPEECH_FINETUNE_HPP_

#include <map>
#include <string>
#include <vector>

#include "pmsspeech/model.hpp"
#include "pmsspeech/ssl.hpp"

namespace pms {

// Which parameter groups stay fixed during CTC fine-tuning.  The CTC head is
// always trainable.
struct FreezePolicy {
  bool freeze_waveform_encoder = true;
  bool freeze_transformer = false;
  bool train_head_only = false;

  bool conv_frozen() const { return train_head_only || freeze_waveform_encoder; }
  bool transformer_frozen() const { return train_head_only || freeze_transformer; }
};

FreezePolicy parse_freeze_policy(const std::string& name);
std::string freeze_policy_name(const FreezePolicy& policy);

// Adds a freshly initialized softmax head mapping model_dim -> vocab+1 logits
// (blank at index 0).  The pretraining codebook heads stay in the parameter
// set but are no longer on the forward path.
void add_ctc_head(Model* model, int vocab_size, std::uint64_t seed);
int ctc_vocab_size(const Model& model);

// True for parameters belonging to the conv front end / transformer stack.
bool is_conv_param(const std::string& name);
bool is_transformer_param(const std::string& name);

std::vector<bool> trainable_mask(const ParamSet& params, const FreezePolicy& policy);

struct FinetuneItem {
  std::string utt_id;
  Waveform waveform;
  std::vector<int> labels;  // symbols in [1, V]
};

// Conv (and optionally whole-encoder) outputs memoized while those stages are
// frozen; keyed by utterance id.
class FrozenForwardCache {
 public:
  const Mat* conv(const std::string& utt_id) const;
  void put_conv(const std::string& utt_id, Mat frames);
  const Mat* encoded(const std::string& utt_id) const;
  void put_encoded(const std::string& utt_id, Mat top);

 private:
  std::map<std::string, Mat> conv_, encoded_;
};

// Per-frame log-probabilities (T x V+1) for one utterance, no masking, no
// gradients; used by extraction-free inference and decoding.
Mat ctc_inference_log_probs(const Model& model, const Waveform& w);

struct FinetuneMetrics {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean CTC loss per utterance
};

FinetuneMetrics finetune_step(Model* model, AdamState* state,
                              const std::vector<FinetuneItem>& batch,
                              const FreezePolicy& policy, const LrSchedule& schedule,
                              const AdamConfig& adam, long step,
                              FrozenForwardCache* cache, int threads = 0);

}  // namespace pms

#endif  // PMSSPEECH_FINETUNE_HPP_
