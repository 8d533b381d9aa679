// src/ssl.cpp
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

#include "pmsspeech/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "pmsspeech/parallel.hpp"
#include "pmsspeech/rng.hpp"

namespace pms {

MaskSpec mask_from_starts(std::vector<int> starts, int span_length, int t_len) {
  if (t_len < 1) throw ValidationError("mask_from_starts: T must be >= 1");
  if (span_length < 1) throw ValidationError("mask_from_starts: span length must be >= 1");
  std::set<int> covered;
  for (int s : starts) {
    if (s < 0 || s >= t_len)
      throw ValidationError("mask_from_starts: start " + std::to_string(s) +
                            " outside [0, " + std::to_string(t_len) + ")");
    for (int t = s; t < std::min(s + span_length, t_len); ++t) covered.insert(t);
  }
  MaskSpec spec;
  spec.t_len = t_len;
  std::sort(starts.begin(), starts.end());
  spec.starts = std::move(starts);
  spec.masked.assign(covered.begin(), covered.end());
  return spec;
}

MaskSpec sample_mask(int t_len, const MaskConfig& cfg, std::uint64_t seed) {
  if (t_len < 1) throw ValidationError("sample_mask: T must be >= 1");
  if (cfg.start_probability < 0.0 || cfg.start_probability > 1.0)
    throw ValidationError("sample_mask: start probability outside [0, 1]");
  const auto num_starts = static_cast<std::size_t>(
      std::lround(cfg.start_probability * static_cast<double>(t_len)));
  Rng rng(seed);
  std::vector<int> starts;
  for (std::size_t s : rng.sample_without_replacement(static_cast<std::size_t>(t_len),
                                                      std::min<std::size_t>(num_starts,
                                                                            static_cast<std::size_t>(t_len))))
    starts.push_back(static_cast<int>(s));
  return mask_from_starts(std::move(starts), cfg.span_length, t_len);
}

double lr_at(long step, const LrSchedule& schedule) {
  if (schedule.total_steps < 1) throw ValidationError("lr_at: total_steps must be >= 1");
  if (step < 0 || step > schedule.total_steps)
    throw ValidationError("lr_at: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(schedule.total_steps) + "]");
  if (schedule.warmup_fraction < 0.0 || schedule.warmup_fraction >= 1.0)
    throw ValidationError("lr_at: warmup fraction outside [0, 1)");
  const double total = static_cast<double>(schedule.total_steps);
  const double warmup = schedule.warmup_fraction * total;
  const double s = static_cast<double>(step);
  if (warmup > 0.0 && s <= warmup) return schedule.peak * s / warmup;
  return schedule.peak * (total - s) / (total - warmup);
}

void AdamState::init_for(const ParamSet& params) {
  m.clear();
  v.clear();
  step = 0;
  for (const auto& [name, value] : params.items()) {
    m.push_back(Mat::Zero(value.rows(), value.cols()));
    v.push_back(Mat::Zero(value.rows(), value.cols()));
  }
}

void adam_update(ParamSet* params, const std::vector<Mat>& grads, AdamState* state,
                 double lr, const AdamConfig& cfg, const std::vector<bool>* trainable) {
  auto& items = params->items();
  if (grads.size() != items.size() || state->m.size() != items.size())
    throw ValidationError("adam_update: parameter/gradient/state size mismatch");
  ++state->step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state->step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state->step));
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    Mat& p = items[i].second;
    const Mat& g = grads[i];
    Mat& m = state->m[i];
    Mat& v = state->v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const Mat m_hat = m / bc1;
    const Mat v_hat = v / bc2;
    p -= lr * m_hat.cwiseQuotient(v_hat.cwiseSqrt().array().matrix() +
                                  Mat::Constant(p.rows(), p.cols(), cfg.epsilon));
  }
}

Var layer_loss(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
               int supervised_layer, Var layer_output,
               const std::vector<int>& targets, const MaskSpec& mask, Var* logits_out) {
  const Index t_len = tape.value(layer_output).rows();
  if (static_cast<Index>(targets.size()) != t_len)
    throw ValidationError("layer_loss: " + std::to_string(targets.size()) +
                          " targets for a " + std::to_string(t_len) + "-frame sequence");
  auto it = std::find(cfg.supervised_layers.begin(), cfg.supervised_layers.end(),
                      supervised_layer);
  if (it == cfg.supervised_layers.end())
    throw ValidationError("layer_loss: layer " + std::to_string(supervised_layer) +
                          " is not in the supervised set");
  const int codebook =
      cfg.codebook_sizes[static_cast<std::size_t>(it - cfg.supervised_layers.begin())];
  if (mask.masked.empty()) return tape.input(Mat::Zero(1, 1));

  std::vector<int> masked_targets;
  masked_targets.reserve(mask.masked.size());
  for (int t : mask.masked) {
    const int label = targets[static_cast<std::size_t>(t)];
    if (label < 0 || label >= codebook)
      throw ValidationError("layer_loss: target " + std::to_string(label) +
                            " outside codebook [0, " + std::to_string(codebook) +
                            ") at layer " + std::to_string(supervised_layer));
    masked_targets.push_back(label);
  }

  Var rows = gather_rows(tape, layer_output, mask.masked);
  Var logits = codeword_logits(tape, cfg, p, supervised_layer, rows);
  if (logits_out) *logits_out = logits;
  Var logp = log_softmax_rows(tape, logits);
  Var picked = pick_per_row(tape, logp, masked_targets);
  return scale(tape, sum_all(tape, picked), -1.0);
}

Var total_loss(Tape& tape, const std::vector<Var>& layer_losses) {
  if (layer_losses.empty()) throw ValidationError("total_loss: no layer losses");
  Var acc = layer_losses[0];
  for (std::size_t i = 1; i < layer_losses.size(); ++i)
    acc = add(tape, acc, layer_losses[i]);
  return acc;
}

SslForward build_ssl_forward(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                             const Waveform& waveform,
                             const std::map<int, std::vector<int>>& targets,
                             const MaskSpec& mask) {
  SslForward out;
  out.mask = mask;

  Var frames = conv_encode(tape, cfg, p, waveform);
  const Index t_len = tape.value(frames).rows();
  if (mask.t_len != static_cast<int>(t_len))
    throw ValidationError("build_ssl_forward: mask drawn for T=" +
                          std::to_string(mask.t_len) + " but encoder yields T=" +
                          std::to_string(t_len));

  Var corrupted = mask.masked.empty()
                      ? frames
                      : mask_rows(tape, frames, p["mask_embed"], mask.masked);
  Var with_pos =
      add(tape, corrupted, tape.input(sinusoidal_positions(t_len, cfg.model_dim)));

  const AttentionMaskPlan plan = build_attention_masks(static_cast<int>(t_len), cfg);
  out.encoder = encoder_forward(tape, cfg, p, with_pos, plan);

  if (mask.masked.empty()) return out;  // loss stays invalid; treated as zero

  std::vector<Var> losses;
  for (int layer : cfg.supervised_layers) {
    const auto it = targets.find(layer);
    if (it == targets.end())
      throw ValidationError("build_ssl_forward: no targets for supervised layer " +
                            std::to_string(layer));
    Var o_l = out.encoder.layers[static_cast<std::size_t>(layer - 1)];
    Var logits;
    Var loss = layer_loss(tape, cfg, p, layer, o_l, it->second, mask, &logits);
    out.layer_logits[layer] = logits;
    out.layer_losses[layer] = loss;
    losses.push_back(loss);
  }
  out.loss = total_loss(tape, losses);
  return out;
}

StepMetrics pretrain_step(Model* model, AdamState* state,
                          const std::vector<PretrainItem>& batch,
                          const SslTrainConfig& cfg, long step) {
  if (batch.empty()) throw ValidationError("pretrain_step: empty batch");
  const ModelConfig& mc = model->config;

  StepMetrics metrics;
  metrics.step = step;
  metrics.lr = lr_at(step, cfg.schedule);
  for (int l : mc.supervised_layers) {
    metrics.layer_loss[l] = 0.0;
    metrics.layer_accuracy[l] = 0.0;
  }

  // Batch elements run on independent tapes (possibly concurrently); the
  // reduction below walks them in index order so results are bit-stable for
  // any worker count.
  struct ItemResult {
    std::vector<Mat> grads;
    long masked = 0;
    std::map<int, double> layer_loss;
    std::map<int, long> correct;
    std::exception_ptr error;
  };
  std::vector<ItemResult> results(batch.size());

  parallel_for_ordered(batch.size(), cfg.threads, [&](std::size_t bi) {
    ItemResult& res = results[bi];
    try {
      const PretrainItem& item = batch[bi];
      Tape tape;
      BoundParams p(&tape, model->params);
      const Index t_len = conv_output_length(mc, item.waveform.samples.size());
      if (t_len < 1)
        throw StageError("pretrain step " + std::to_string(step) + ": utterance " +
                         item.utt_id + " is too short for the conv encoder");
      const MaskSpec mask = sample_mask(
          static_cast<int>(t_len), cfg.mask,
          derive_seed(derive_seed(cfg.mask_seed, static_cast<std::uint64_t>(step)), bi));
      SslForward fwd = build_ssl_forward(tape, mc, p, item.waveform, item.targets, mask);
      if (!fwd.loss.valid()) return;  // nothing masked in this utterance

      const double loss_value = tape.value(fwd.loss)(0, 0);
      if (!std::isfinite(loss_value))
        throw StageError("pretrain step " + std::to_string(step) +
                         ": non-finite loss on utterance " + item.utt_id);

      tape.backward(fwd.loss);
      const std::vector<Var>& vars = p.vars();
      res.grads.reserve(vars.size());
      for (Var v : vars) res.grads.push_back(tape.grad(v));

      res.masked = static_cast<long>(mask.masked.size());
      for (const auto& [layer, loss_var] : fwd.layer_losses)
        res.layer_loss[layer] = tape.value(loss_var)(0, 0);
      for (const auto& [layer, logits_var] : fwd.layer_logits) {
        const Mat& logits = tape.value(logits_var);
        const auto& layer_targets = item.targets.at(layer);
        for (std::size_t r = 0; r < mask.masked.size(); ++r) {
          Index argmax = 0;
          logits.row(static_cast<Index>(r)).maxCoeff(&argmax);
          if (static_cast<int>(argmax) ==
              layer_targets[static_cast<std::size_t>(mask.masked[r])])
            ++res.correct[layer];
        }
      }
    } catch (...) {
      res.error = std::current_exception();
    }
  });

  std::vector<Mat> grad_acc;
  grad_acc.reserve(model->params.size());
  for (const auto& [name, value] : model->params.items())
    grad_acc.push_back(Mat::Zero(value.rows(), value.cols()));

  long total_masked = 0;
  std::map<int, long> correct;
  for (const ItemResult& res : results) {
    if (res.error) std::rethrow_exception(res.error);
    if (res.grads.empty()) continue;
    for (std::size_t i = 0; i < grad_acc.size(); ++i) grad_acc[i] += res.grads[i];
    total_masked += res.masked;
    for (const auto& [layer, value] : res.layer_loss) metrics.layer_loss[layer] += value;
    for (const auto& [layer, count] : res.correct) correct[layer] += count;
  }

  metrics.masked_frames = total_masked;
  if (total_masked > 0) {
    // Normalize by the batch's masked-frame count so the step size is
    // insensitive to batch composition.
    const double inv = 1.0 / static_cast<double>(total_masked);
    for (Mat& g : grad_acc) g *= inv;
    for (auto& [layer, value] : metrics.layer_loss) {
      value *= inv;
      metrics.total_loss += value;
      metrics.layer_accuracy[layer] =
          static_cast<double>(correct[layer]) * inv;
    }
    adam_update(&model->params, grad_acc, state, metrics.lr, cfg.adam);
  }
  return metrics;
}

std::string format_metrics_line(const StepMetrics& m, const std::string& stage) {
  std::ostringstream os;
  os << "stage=" << stage << " step=" << m.step << " lr=" << m.lr
     << " loss=" << m.total_loss << " masked=" << m.masked_frames;
  for (const auto& [layer, value] : m.layer_loss) os << " loss_l" << layer << "=" << value;
  for (const auto& [layer, value] : m.layer_accuracy)
    os << " acc_l" << layer << "=" << value;
  return os.str();
}

}  // namespace pms
