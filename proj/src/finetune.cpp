// src/finetune.cpp
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

#include "pmsspeech/finetune.hpp"

#include <cmath>

#include "pmsspeech/ctc.hpp"
#include "pmsspeech/parallel.hpp"
#include "pmsspeech/rng.hpp"

namespace pms {

FreezePolicy parse_freeze_policy(const std::string& name) {
  FreezePolicy policy;
  if (name == "freeze-conv") {
    policy.freeze_waveform_encoder = true;
    policy.freeze_transformer = false;
    policy.train_head_only = false;
  } else if (name == "head-only") {
    policy.freeze_waveform_encoder = true;
    policy.freeze_transformer = true;
    policy.train_head_only = true;
  } else if (name == "all") {
    policy.freeze_waveform_encoder = false;
    policy.freeze_transformer = false;
    policy.train_head_only = false;
  } else {
    throw ValidationError("unknown freeze policy '" + name +
                          "' (expected freeze-conv, head-only, or all)");
  }
  return policy;
}

std::string freeze_policy_name(const FreezePolicy& policy) {
  if (policy.train_head_only) return "head-only";
  if (policy.conv_frozen()) return "freeze-conv";
  return "all";
}

void add_ctc_head(Model* model, int vocab_size, std::uint64_t seed) {
  if (vocab_size < 1) throw ValidationError("add_ctc_head: vocabulary must be non-empty");
  if (model->params.contains("ctc.w"))
    throw ValidationError("add_ctc_head: model already has a CTC head");
  Rng rng(seed);
  const int d = model->config.model_dim;
  const double a = std::sqrt(6.0 / static_cast<double>(d + vocab_size + 1));
  model->params.add("ctc.w", rng.uniform_matrix(d, vocab_size + 1, -a, a));
  model->params.add("ctc.b", Mat::Zero(1, vocab_size + 1));
}

int ctc_vocab_size(const Model& model) {
  if (!model.params.contains("ctc.w"))
    throw ValidationError("model has no CTC head (fine-tuning has not run)");
  return static_cast<int>(model.params.at("ctc.w").cols()) - 1;
}

bool is_conv_param(const std::string& name) { return name.rfind("conv", 0) == 0; }

bool is_transformer_param(const std::string& name) {
  return name.rfind("enc", 0) == 0 || name == "mask_embed";
}

std::vector<bool> trainable_mask(const ParamSet& params, const FreezePolicy& policy) {
  std::vector<bool> mask;
  mask.reserve(params.size());
  for (const auto& [name, value] : params.items()) {
    bool trainable;
    if (name.rfind("ctc.", 0) == 0) {
      trainable = true;  // the head always trains
    } else if (is_conv_param(name)) {
      trainable = !policy.conv_frozen();
    } else if (is_transformer_param(name)) {
      trainable = !policy.transformer_frozen();
    } else {
      trainable = false;  // pretraining codebook heads are off the path
    }
    mask.push_back(trainable);
  }
  return mask;
}

const Mat* FrozenForwardCache::conv(const std::string& utt_id) const {
  const auto it = conv_.find(utt_id);
  return it == conv_.end() ? nullptr : &it->second;
}

void FrozenForwardCache::put_conv(const std::string& utt_id, Mat frames) {
  conv_.emplace(utt_id, std::move(frames));
}

const Mat* FrozenForwardCache::encoded(const std::string& utt_id) const {
  const auto it = encoded_.find(utt_id);
  return it == encoded_.end() ? nullptr : &it->second;
}

void FrozenForwardCache::put_encoded(const std::string& utt_id, Mat top) {
  encoded_.emplace(utt_id, std::move(top));
}

namespace {

Mat conv_inference(const Model& model, const Waveform& w) {
  Tape tape;
  BoundParams p(&tape, model.params);
  return tape.value(conv_encode(tape, model.config, p, w));
}

// Uncorrupted forward pass to the top layer on the given tape.
Var encode_to_top(Tape& tape, const Model& model, const BoundParams& p, Var frames) {
  const Index t_len = tape.value(frames).rows();
  Var x = add(tape, frames,
              tape.input(sinusoidal_positions(t_len, model.config.model_dim)));
  const AttentionMaskPlan plan =
      build_attention_masks(static_cast<int>(t_len), model.config);
  return encoder_forward(tape, model.config, p, x, plan).top();
}

Var head_log_probs(Tape& tape, const BoundParams& p, Var top) {
  Var logits = add_rowwise(tape, matmul(tape, top, p["ctc.w"]), p["ctc.b"]);
  return log_softmax_rows(tape, logits);
}

}  // namespace

Mat ctc_inference_log_probs(const Model& model, const Waveform& w) {
  Tape tape;
  BoundParams p(&tape, model.params);
  Var frames = conv_encode(tape, model.config, p, w);
  Var top = encode_to_top(tape, model, p, frames);
  return tape.value(head_log_probs(tape, p, top));
}

FinetuneMetrics finetune_step(Model* model, AdamState* state,
                              const std::vector<FinetuneItem>& batch,
                              const FreezePolicy& policy, const LrSchedule& schedule,
                              const AdamConfig& adam, long step,
                              FrozenForwardCache* cache, int threads) {
  if (batch.empty()) throw ValidationError("finetune_step: empty batch");
  if (!model->params.contains("ctc.w"))
    throw ValidationError("finetune_step: model has no CTC head");

  FinetuneMetrics metrics;
  metrics.step = step;
  metrics.lr = lr_at(step, schedule);

  std::vector<Mat> grad_acc;
  grad_acc.reserve(model->params.size());
  for (const auto& [name, value] : model->params.items())
    grad_acc.push_back(Mat::Zero(value.rows(), value.cols()));

  const bool conv_cached = policy.conv_frozen() && cache != nullptr;
  const bool top_cached = conv_cached && policy.transformer_frozen();

  // Fill cache misses sequentially; the parallel loop below only reads it.
  if (conv_cached) {
    for (const FinetuneItem& item : batch) {
      if (top_cached) {
        if (!cache->encoded(item.utt_id)) {
          Tape scratch;
          BoundParams sp(&scratch, model->params);
          Var frames = conv_encode(scratch, model->config, sp, item.waveform);
          cache->put_encoded(item.utt_id,
                             scratch.value(encode_to_top(scratch, *model, sp, frames)));
        }
      } else if (!cache->conv(item.utt_id)) {
        cache->put_conv(item.utt_id, conv_inference(*model, item.waveform));
      }
    }
  }

  struct ItemResult {
    std::vector<Mat> grads;
    double loss = 0.0;
    std::exception_ptr error;
  };
  std::vector<ItemResult> results(batch.size());

  parallel_for_ordered(batch.size(), threads, [&](std::size_t bi) {
    ItemResult& res = results[bi];
    try {
      const FinetuneItem& item = batch[bi];
      Tape tape;
      BoundParams p(&tape, model->params);

      Var top;
      if (top_cached) {
        top = tape.input(*cache->encoded(item.utt_id));
      } else if (conv_cached) {
        Var frames = tape.input(*cache->conv(item.utt_id));
        top = encode_to_top(tape, *model, p, frames);
      } else {
        Var frames = conv_encode(tape, model->config, p, item.waveform);
        top = encode_to_top(tape, *model, p, frames);
      }

      Var logp = head_log_probs(tape, p, top);
      Var loss = ctc_loss_op(tape, logp, item.labels);
      res.loss = tape.value(loss)(0, 0);
      if (!std::isfinite(res.loss))
        throw StageError("finetune step " + std::to_string(step) +
                         ": non-finite loss on utterance " + item.utt_id);

      tape.backward(loss);
      const std::vector<Var>& vars = p.vars();
      res.grads.reserve(vars.size());
      for (Var v : vars) res.grads.push_back(tape.grad(v));
    } catch (...) {
      res.error = std::current_exception();
    }
  });

  for (const ItemResult& res : results) {
    if (res.error) std::rethrow_exception(res.error);
    metrics.loss += res.loss;
    for (std::size_t i = 0; i < grad_acc.size(); ++i) grad_acc[i] += res.grads[i];
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  metrics.loss *= inv;
  for (Mat& g : grad_acc) g *= inv;
  const std::vector<bool> trainable = trainable_mask(model->params, policy);
  adam_update(&model->params, grad_acc, state, metrics.lr, adam, &trainable);
  return metrics;
}

}  // namespace pms
