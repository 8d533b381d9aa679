// include/pmsspeech/ssl.hpp
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

#ifndef PMSSPEECH_SSL_HPP_
#define PMSSPEECH_SSL_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pmsspeech/autodiff.hpp"
#include "pmsspeech/model.hpp"

namespace pms {

// ---- Span masking ------------------------------------------------------------

struct MaskConfig {
  double start_probability = 0.08;  // fraction of frames picked as span starts
  int span_length = 10;             // frames per span
};

struct MaskSpec {
  std::vector<int> masked;  // sorted unique indices (union of spans, clipped)
  std::vector<int> starts;  // the sampled start indices
  int t_len = 0;
};

// round(p*T) start indices sampled uniformly without replacement; spans of
// span_length frames are unioned and clipped at T.
MaskSpec sample_mask(int t_len, const MaskConfig& cfg, std::uint64_t seed);
// Deterministic core, exposed for tests that pin the start set.
MaskSpec mask_from_starts(std::vector<int> starts, int span_length, int t_len);

// ---- Learning-rate schedule ----------------------------------------------------

struct LrSchedule {
  double peak = 5e-4;
  double warmup_fraction = 0.08;
  long total_steps = 0;
};

// Linear 0 -> peak over the warmup fraction, then linear peak -> 0.
double lr_at(long step, const LrSchedule& schedule);

// ---- Adam ----------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Mat> m, v;  // aligned with ParamSet order
  long step = 0;
  void init_for(const ParamSet& params);
};

// In-place update; `trainable` (aligned with the ParamSet) freezes entries
// bit-exactly when false.  Gradients are indexed like the ParamSet.
void adam_update(ParamSet* params, const std::vector<Mat>& grads, AdamState* state,
                 double lr, const AdamConfig& cfg,
                 const std::vector<bool>* trainable = nullptr);

// ---- Masked-prediction losses ---------------------------------------------------

// -sum_{t in M} log p^l(target_t | corrupted input, t) for one supervised
// layer, built on the tape; a constant zero when the mask is empty.  The
// masked-row logits are exposed through `logits_out` for accuracy metrics.
Var layer_loss(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
               int supervised_layer, Var layer_output,
               const std::vector<int>& targets, const MaskSpec& mask,
               Var* logits_out = nullptr);

// Unweighted sum over the supervised set K.
Var total_loss(Tape& tape, const std::vector<Var>& layer_losses);

// Full SSL forward for one utterance: conv encode, span mask, positional
// encoding, encoder stack, per-supervised-layer losses.
struct SslForward {
  MaskSpec mask;
  EncoderForward encoder;
  std::map<int, Var> layer_logits;  // masked-row logits per supervised layer
  std::map<int, Var> layer_losses;  // raw (summed) losses; empty when M is empty
  Var loss;                         // invalid when the mask is empty
};

SslForward build_ssl_forward(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                             const Waveform& waveform,
                             const std::map<int, std::vector<int>>& targets,
                             const MaskSpec& mask);

// ---- Pretraining step -----------------------------------------------------------

struct PretrainItem {
  std::string utt_id;
  Waveform waveform;
  std::map<int, std::vector<int>> targets;  // supervised layer -> labels at encoder rate
};

struct SslTrainConfig {
  MaskConfig mask;
  LrSchedule schedule;
  AdamConfig adam;
  std::uint64_t mask_seed = 1;
  int threads = 0;  // batch-element workers; 0 = hardware default (capped)
};

struct StepMetrics {
  long step = 0;
  double lr = 0.0;
  double total_loss = 0.0;                // per masked frame, summed over K
  std::map<int, double> layer_loss;       // per masked frame
  std::map<int, double> layer_accuracy;   // masked-frame argmax accuracy
  long masked_frames = 0;
};

// Forward + backward over the batch (ordered per-utterance tapes), one Adam
// update.  Aborts with StageError naming the utterance if the loss goes
// non-finite.
StepMetrics pretrain_step(Model* model, AdamState* state,
                          const std::vector<PretrainItem>& batch,
                          const SslTrainConfig& cfg, long step);

std::string format_metrics_line(const StepMetrics& m, const std::string& stage);

}  // namespace pms

#endif  // PMSSPEECH_SSL_HPP_
