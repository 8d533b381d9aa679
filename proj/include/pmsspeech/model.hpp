// include/pmsspeech/model.hpp
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

#ifndef PMSSPEECH_MODEL_HPP_
#define PMSSPEECH_MODEL_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pmsspeech/autodiff.hpp"
#include "pmsspeech/types.hpp"
#include "pmsspeech/wave.hpp"

namespace pms {

struct ConvLayerSpec {
  int channels = 0;
  int kernel = 0;
  int stride = 0;
};

enum class Nonlinearity { kGelu, kRelu };

// Window sentinel for layers whose designated heads stay global.
constexpr int kUnboundedWindow = -1;

struct ModelConfig {
  int num_layers = 4;
  int num_heads = 4;
  int model_dim = 64;
  int ffn_dim = 256;
  int embed_dim = 32;  // codeword embedding width
  std::vector<ConvLayerSpec> conv_spec;
  // One window per layer, non-decreasing bottom to top; the two designated
  // heads of a layer are restricted to [j-w, j] and [j, j+w].
  std::vector<int> window_schedule;
  // Supervised layer set K (1-based, strictly increasing, includes the top
  // layer) and one codebook size per element, non-decreasing with depth.
  std::vector<int> supervised_layers;
  std::vector<int> codebook_sizes;
  double temperature = 0.1;
  Nonlinearity nonlinearity = Nonlinearity::kGelu;
  int sample_rate = 16000;

  int head_dim() const { return model_dim / num_heads; }
  // The restricted heads are fixed so checkpoints stay reproducible: the
  // last-but-one head looks back, the last head looks ahead.
  int history_head() const { return num_heads - 2; }
  int future_head() const { return num_heads - 1; }
};

// Small configuration used by the test suite and the toy pipeline.
ModelConfig desk_model_config();
// Full-size configuration (12 layers, 768 dims, 80/160 windows, K={6,12});
// shipped for reference runs, far too heavy for the test suite.
ModelConfig full_scale_model_config();

void validate_config(const ModelConfig& cfg);
std::string serialize_config(const ModelConfig& cfg);  // canonical key-sorted text
ModelConfig parse_config_text(const std::string& text);

// ---- Parameters ------------------------------------------------------------

// Named parameters in a fixed registration order; the order defines the
// deterministic gradient reduction and the checkpoint layout.
class ParamSet {
 public:
  void add(const std::string& name, Mat value);
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return items_.size(); }
  std::vector<std::pair<std::string, Mat>>& items() { return items_; }
  const std::vector<std::pair<std::string, Mat>>& items() const { return items_; }

 private:
  std::vector<std::pair<std::string, Mat>> items_;
};

struct Model {
  ModelConfig config;
  ParamSet params;
};

// Xavier-uniform initialization of all encoder and codebook-head parameters.
Model init_model(const ModelConfig& cfg, std::uint64_t seed);

// Binds every parameter of a ParamSet to tape leaves, preserving order.
class BoundParams {
 public:
  BoundParams(Tape* tape, const ParamSet& params);
  Var operator[](const std::string& name) const;
  const std::vector<Var>& vars() const { return vars_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
};

// ---- Attention mask plan ---------------------------------------------------

struct AttentionMaskPlan {
  int t_len = 0;
  std::shared_ptr<const BoolMat> full;
  std::vector<std::shared_ptr<const BoolMat>> history;  // per layer (0-based)
  std::vector<std::shared_ptr<const BoolMat>> future;

  const std::shared_ptr<const BoolMat>& mask(int layer, int head,
                                             const ModelConfig& cfg) const;
};

AttentionMaskPlan build_attention_masks(int t_len, const ModelConfig& cfg);

// ---- Forward computation ---------------------------------------------------

// Frames produced per second by the conv stack (sample_rate / stride product).
double conv_frame_rate(const ModelConfig& cfg);
// Output frame count for a waveform of `num_samples`, or -1 if too short.
Index conv_output_length(const ModelConfig& cfg, Index num_samples);
Index conv_min_samples(const ModelConfig& cfg);

// Conv stack -> linear projection -> layer norm; returns T x model_dim.
Var conv_encode(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                const Waveform& w);

// Fixed sinusoidal positional encoding, added to the (masked) frames before
// the first transformer block.
Mat sinusoidal_positions(Index t_len, int dim);

// One layer of multi-head self-attention under the mask plan (Q K^T / sqrt(d),
// additive window mask, concat heads, output projection).
Var multi_scale_attention(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                          int layer, Var x, const AttentionMaskPlan& plan);

struct EncoderForward {
  Var input;                // the frames the first block consumed
  std::vector<Var> layers;  // O^l for l = 1..L
  Var top() const { return layers.empty() ? input : layers.back(); }
};

// Pre-norm transformer stack; returns every layer's output so supervised
// layers and feature extraction share one pass.
EncoderForward encoder_forward(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                               Var frames, const AttentionMaskPlan& plan);

// Temperature-scaled cosine logits of hidden-state rows against the codebook
// of the given supervised layer (1-based); softmax of these is the codeword
// distribution.
Var codeword_logits(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                    int supervised_layer, Var rows);
Var codeword_distribution(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                          int supervised_layer, Var rows);

// ---- Checkpoints -----------------------------------------------------------

// "PMSC" | u32 version | config text | named parameter matrices.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace pms

#endif  // PMSSPEECH_MODEL_HPP_
