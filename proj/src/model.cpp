// src/model.cpp
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

#include "pmsspeech/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "pmsspeech/features.hpp"
#include "pmsspeech/rng.hpp"

namespace pms {

ModelConfig desk_model_config() {
  ModelConfig cfg;
  cfg.num_layers = 4;
  cfg.num_heads = 4;
  cfg.model_dim = 64;
  cfg.ffn_dim = 256;
  cfg.embed_dim = 32;
  // Non-overlapping kernels (kernel == stride), total stride 320: exactly
  // 50 frames/s at 16 kHz and frame count N/320 for sample counts that divide.
  cfg.conv_spec = {{32, 8, 8}, {64, 5, 5}, {64, 4, 4}, {64, 2, 2}};
  cfg.window_schedule = {4, 4, 8, 8};
  cfg.supervised_layers = {2, 4};
  cfg.codebook_sizes = {50, 100};
  cfg.temperature = 0.1;
  cfg.sample_rate = 16000;
  return cfg;
}

ModelConfig full_scale_model_config() {
  ModelConfig cfg;
  cfg.num_layers = 12;
  cfg.num_heads = 12;
  cfg.model_dim = 768;
  cfg.ffn_dim = 3072;
  cfg.embed_dim = 256;
  cfg.conv_spec = {{512, 10, 5}, {512, 3, 2}, {512, 3, 2}, {512, 3, 2},
                   {512, 3, 2},  {512, 2, 2}, {512, 2, 2}};  // stride 320
  cfg.window_schedule = {80, 80, 80, 80, 80, 80, 160, 160, 160, 160, 160, 160};
  cfg.supervised_layers = {6, 12};
  cfg.codebook_sizes = {300, 500};
  cfg.temperature = 0.1;
  cfg.sample_rate = 16000;
  return cfg;
}

void validate_config(const ModelConfig& cfg) {
  if (cfg.num_layers < 0) throw ValidationError("config: num_layers must be >= 0");
  if (cfg.num_heads < 2) throw ValidationError("config: need at least 2 heads");
  if (cfg.model_dim < 1 || cfg.ffn_dim < 1 || cfg.embed_dim < 1)
    throw ValidationError("config: dimensions must be positive");
  if (cfg.model_dim % cfg.num_heads != 0)
    throw ValidationError("config: model_dim " + std::to_string(cfg.model_dim) +
                          " is not divisible by num_heads " + std::to_string(cfg.num_heads));
  if (cfg.conv_spec.empty()) throw ValidationError("config: conv_spec is empty");
  for (const ConvLayerSpec& c : cfg.conv_spec)
    if (c.channels < 1 || c.kernel < 1 || c.stride < 1)
      throw ValidationError("config: conv layers need positive channels/kernel/stride");
  if (static_cast<int>(cfg.window_schedule.size()) != cfg.num_layers)
    throw ValidationError("config: window_schedule needs one entry per layer");
  // Non-decreasing windows, unbounded counting as infinity.
  for (std::size_t i = 1; i < cfg.window_schedule.size(); ++i) {
    const int prev = cfg.window_schedule[i - 1];
    const int cur = cfg.window_schedule[i];
    if (prev == kUnboundedWindow && cur != kUnboundedWindow)
      throw ValidationError("config: window_schedule must be non-decreasing (layer " +
                            std::to_string(i + 1) + " is bounded below an unbounded layer)");
    if (prev != kUnboundedWindow && cur != kUnboundedWindow && cur < prev)
      throw ValidationError("config: window_schedule must be non-decreasing");
    if (cur < kUnboundedWindow)
      throw ValidationError("config: window sizes must be >= 0 (or unbounded)");
  }
  if (cfg.num_layers > 0) {
    if (cfg.supervised_layers.empty())
      throw ValidationError("config: supervised_layers is empty");
    for (std::size_t i = 0; i < cfg.supervised_layers.size(); ++i) {
      const int l = cfg.supervised_layers[i];
      if (l < 1 || l > cfg.num_layers)
        throw ValidationError("config: supervised layer " + std::to_string(l) +
                              " outside [1, " + std::to_string(cfg.num_layers) + "]");
      if (i > 0 && l <= cfg.supervised_layers[i - 1])
        throw ValidationError("config: supervised_layers must be strictly increasing");
    }
    if (cfg.supervised_layers.back() != cfg.num_layers)
      throw ValidationError("config: supervised_layers must contain the top layer " +
                            std::to_string(cfg.num_layers));
    if (cfg.codebook_sizes.size() != cfg.supervised_layers.size())
      throw ValidationError("config: need one codebook size per supervised layer");
    for (std::size_t i = 0; i < cfg.codebook_sizes.size(); ++i) {
      if (cfg.codebook_sizes[i] < 2)
        throw ValidationError("config: codebook sizes must be >= 2");
      if (i > 0 && cfg.codebook_sizes[i] < cfg.codebook_sizes[i - 1])
        throw ValidationError("config: codebook sizes must be non-decreasing from lower "
                              "to higher supervised layers");
    }
  }
  if (!(cfg.temperature > 0.0)) throw ValidationError("config: temperature must be positive");
  if (cfg.sample_rate < 1) throw ValidationError("config: sample_rate must be positive");
}

namespace {

std::string join_ints(const std::vector<int>& v, bool windows = false) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    if (windows && v[i] == kUnboundedWindow)
      os << "inf";
    else
      os << v[i];
  }
  return os.str();
}

std::vector<int> split_ints(const std::string& s, bool windows = false) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (item.empty()) continue;
    if (windows && item == "inf")
      out.push_back(kUnboundedWindow);
    else
      out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace

std::string serialize_config(const ModelConfig& cfg) {
  std::map<std::string, std::string> kv;
  {
    std::ostringstream os;
    for (std::size_t i = 0; i < cfg.conv_spec.size(); ++i) {
      if (i) os << ',';
      os << cfg.conv_spec[i].channels << ':' << cfg.conv_spec[i].kernel << ':'
         << cfg.conv_spec[i].stride;
    }
    kv["conv_spec"] = os.str();
  }
  kv["codebook_sizes"] = join_ints(cfg.codebook_sizes);
  kv["embed_dim"] = std::to_string(cfg.embed_dim);
  kv["ffn_dim"] = std::to_string(cfg.ffn_dim);
  kv["model_dim"] = std::to_string(cfg.model_dim);
  kv["nonlinearity"] = cfg.nonlinearity == Nonlinearity::kGelu ? "gelu" : "relu";
  kv["num_heads"] = std::to_string(cfg.num_heads);
  kv["num_layers"] = std::to_string(cfg.num_layers);
  kv["sample_rate"] = std::to_string(cfg.sample_rate);
  kv["supervised_layers"] = join_ints(cfg.supervised_layers);
  {
    std::ostringstream os;
    os << std::setprecision(17) << cfg.temperature;
    kv["temperature"] = os.str();
  }
  kv["window_schedule"] = join_ints(cfg.window_schedule, true);

  std::ostringstream out;
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  return out.str();
}

ModelConfig parse_config_text(const std::string& text) {
  ModelConfig cfg;
  cfg.conv_spec.clear();
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "conv_spec") {
      std::istringstream cs(val);
      std::string item;
      while (std::getline(cs, item, ',')) {
        ConvLayerSpec spec;
        if (std::sscanf(item.c_str(), "%d:%d:%d", &spec.channels, &spec.kernel,
                        &spec.stride) != 3)
          throw ValidationError("config: bad conv_spec entry '" + item + "'");
        cfg.conv_spec.push_back(spec);
      }
    } else if (key == "codebook_sizes") {
      cfg.codebook_sizes = split_ints(val);
    } else if (key == "embed_dim") {
      cfg.embed_dim = std::stoi(val);
    } else if (key == "ffn_dim") {
      cfg.ffn_dim = std::stoi(val);
    } else if (key == "model_dim") {
      cfg.model_dim = std::stoi(val);
    } else if (key == "nonlinearity") {
      if (val == "gelu")
        cfg.nonlinearity = Nonlinearity::kGelu;
      else if (val == "relu")
        cfg.nonlinearity = Nonlinearity::kRelu;
      else
        throw ValidationError("config: unknown nonlinearity '" + val + "'");
    } else if (key == "num_heads") {
      cfg.num_heads = std::stoi(val);
    } else if (key == "num_layers") {
      cfg.num_layers = std::stoi(val);
    } else if (key == "sample_rate") {
      cfg.sample_rate = std::stoi(val);
    } else if (key == "supervised_layers") {
      cfg.supervised_layers = split_ints(val);
    } else if (key == "temperature") {
      cfg.temperature = std::stod(val);
    } else if (key == "window_schedule") {
      cfg.window_schedule = split_ints(val, true);
    } else {
      throw ValidationError("config: unknown key '" + key + "'");
    }
  }
  validate_config(cfg);
  return cfg;
}

// ---- ParamSet ---------------------------------------------------------------

void ParamSet::add(const std::string& name, Mat value) {
  if (contains(name)) throw ValidationError("ParamSet: duplicate parameter " + name);
  items_.emplace_back(name, std::move(value));
}

Mat& ParamSet::at(const std::string& name) {
  for (auto& [n, v] : items_)
    if (n == name) return v;
  throw ValidationError("ParamSet: unknown parameter " + name);
}

const Mat& ParamSet::at(const std::string& name) const {
  for (const auto& [n, v] : items_)
    if (n == name) return v;
  throw ValidationError("ParamSet: unknown parameter " + name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& [n, v] : items_)
    if (n == name) return true;
  return false;
}

// ---- Initialization ---------------------------------------------------------

namespace {

Mat xavier(Rng* rng, Index fan_in, Index fan_out, Index rows, Index cols) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng->uniform_matrix(rows, cols, -a, a);
}

std::string enc_name(int layer, const char* field) {
  return "enc" + std::to_string(layer) + "." + field;
}

std::string head_name(int layer, const char* field) {
  return "head" + std::to_string(layer) + "." + field;
}

}  // namespace

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  Rng rng(seed);
  Model m;
  m.config = cfg;
  ParamSet& p = m.params;

  int in_channels = 1;
  for (std::size_t i = 0; i < cfg.conv_spec.size(); ++i) {
    const ConvLayerSpec& c = cfg.conv_spec[i];
    const Index fan_in = static_cast<Index>(c.kernel) * in_channels;
    p.add("conv" + std::to_string(i) + ".w",
          xavier(&rng, fan_in, c.channels, c.channels, fan_in));
    p.add("conv" + std::to_string(i) + ".b", Mat::Zero(1, c.channels));
    in_channels = c.channels;
  }
  p.add("conv_proj.w", xavier(&rng, in_channels, cfg.model_dim, in_channels, cfg.model_dim));
  p.add("conv_proj.b", Mat::Zero(1, cfg.model_dim));
  p.add("conv_norm.gain", Mat::Ones(1, cfg.model_dim));
  p.add("conv_norm.bias", Mat::Zero(1, cfg.model_dim));
  p.add("mask_embed", rng.uniform_matrix(1, cfg.model_dim, -0.1, 0.1));

  for (int l = 1; l <= cfg.num_layers; ++l) {
    p.add(enc_name(l, "ln1.gain"), Mat::Ones(1, cfg.model_dim));
    p.add(enc_name(l, "ln1.bias"), Mat::Zero(1, cfg.model_dim));
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      p.add(enc_name(l, w),
            xavier(&rng, cfg.model_dim, cfg.model_dim, cfg.model_dim, cfg.model_dim));
    p.add(enc_name(l, "ln2.gain"), Mat::Ones(1, cfg.model_dim));
    p.add(enc_name(l, "ln2.bias"), Mat::Zero(1, cfg.model_dim));
    p.add(enc_name(l, "ffn.w1"),
          xavier(&rng, cfg.model_dim, cfg.ffn_dim, cfg.model_dim, cfg.ffn_dim));
    p.add(enc_name(l, "ffn.b1"), Mat::Zero(1, cfg.ffn_dim));
    p.add(enc_name(l, "ffn.w2"),
          xavier(&rng, cfg.ffn_dim, cfg.model_dim, cfg.ffn_dim, cfg.model_dim));
    p.add(enc_name(l, "ffn.b2"), Mat::Zero(1, cfg.model_dim));
  }

  for (std::size_t i = 0; i < cfg.supervised_layers.size(); ++i) {
    const int l = cfg.supervised_layers[i];
    const int c = cfg.codebook_sizes[i];
    p.add(head_name(l, "proj"),
          xavier(&rng, cfg.model_dim, cfg.embed_dim, cfg.model_dim, cfg.embed_dim));
    p.add(head_name(l, "embed"), xavier(&rng, c, cfg.embed_dim, c, cfg.embed_dim));
  }
  return m;
}

BoundParams::BoundParams(Tape* tape, const ParamSet& params) {
  names_.reserve(params.size());
  vars_.reserve(params.size());
  for (const auto& [name, value] : params.items()) {
    names_.push_back(name);
    vars_.push_back(tape->input(value));
  }
}

Var BoundParams::operator[](const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return vars_[i];
  throw ValidationError("BoundParams: unknown parameter " + name);
}

// ---- Attention masks --------------------------------------------------------

AttentionMaskPlan build_attention_masks(int t_len, const ModelConfig& cfg) {
  if (t_len < 1) throw ValidationError("build_attention_masks: T must be >= 1");
  AttentionMaskPlan plan;
  plan.t_len = t_len;
  auto full = std::make_shared<BoolMat>(t_len, t_len);
  full->setConstant(true);
  plan.full = full;
  plan.history.resize(cfg.window_schedule.size());
  plan.future.resize(cfg.window_schedule.size());
  for (std::size_t l = 0; l < cfg.window_schedule.size(); ++l) {
    const int w = cfg.window_schedule[l];
    if (w == kUnboundedWindow) {
      // Only the unbounded sentinel degenerates to the full mask; a finite
      // w >= T-1 still clips the history head to [0, j] and the future head
      // to [j, T-1].
      plan.history[l] = plan.full;
      plan.future[l] = plan.full;
      continue;
    }
    auto hist = std::make_shared<BoolMat>(t_len, t_len);
    auto fut = std::make_shared<BoolMat>(t_len, t_len);
    hist->setConstant(false);
    fut->setConstant(false);
    for (int j = 0; j < t_len; ++j) {
      for (int k = std::max(0, j - w); k <= j; ++k) (*hist)(j, k) = true;
      for (int k = j; k <= std::min(t_len - 1, j + w); ++k) (*fut)(j, k) = true;
    }
    plan.history[l] = hist;
    plan.future[l] = fut;
  }
  return plan;
}

const std::shared_ptr<const BoolMat>& AttentionMaskPlan::mask(int layer, int head,
                                                              const ModelConfig& cfg) const {
  if (layer < 0 || layer >= static_cast<int>(history.size()))
    throw ValidationError("AttentionMaskPlan: layer out of range");
  if (head == cfg.history_head()) return history[static_cast<std::size_t>(layer)];
  if (head == cfg.future_head()) return future[static_cast<std::size_t>(layer)];
  return full;
}

// ---- Forward ----------------------------------------------------------------

double conv_frame_rate(const ModelConfig& cfg) {
  double stride = 1.0;
  for (const ConvLayerSpec& c : cfg.conv_spec) stride *= c.stride;
  return cfg.sample_rate / stride;
}

Index conv_output_length(const ModelConfig& cfg, Index num_samples) {
  Index t = num_samples;
  for (const ConvLayerSpec& c : cfg.conv_spec) {
    if (t < c.kernel) return -1;
    t = (t - c.kernel) / c.stride + 1;
  }
  return t;
}

Index conv_min_samples(const ModelConfig& cfg) {
  Index need = 1;
  for (auto it = cfg.conv_spec.rbegin(); it != cfg.conv_spec.rend(); ++it)
    need = it->kernel + (need - 1) * it->stride;
  return need;
}

namespace {

Var apply_nonlinearity(Tape& tape, const ModelConfig& cfg, Var x) {
  return cfg.nonlinearity == Nonlinearity::kGelu ? gelu(tape, x) : relu(tape, x);
}

}  // namespace

Var conv_encode(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                const Waveform& w) {
  if (conv_output_length(cfg, w.samples.size()) < 1)
    throw ValidationError("conv_encode: waveform of " + std::to_string(w.samples.size()) +
                          " samples is too short; need at least " +
                          std::to_string(conv_min_samples(cfg)));
  Mat x0(w.samples.size(), 1);
  x0.col(0) = w.samples;
  Var x = tape.input(std::move(x0));
  for (std::size_t i = 0; i < cfg.conv_spec.size(); ++i) {
    const ConvLayerSpec& c = cfg.conv_spec[i];
    x = conv1d(tape, x, p["conv" + std::to_string(i) + ".w"], c.kernel, c.stride);
    x = add_rowwise(tape, x, p["conv" + std::to_string(i) + ".b"]);
    x = apply_nonlinearity(tape, cfg, x);
  }
  x = add_rowwise(tape, matmul(tape, x, p["conv_proj.w"]), p["conv_proj.b"]);
  return layer_norm_rows(tape, x, p["conv_norm.gain"], p["conv_norm.bias"]);
}

Mat sinusoidal_positions(Index t_len, int dim) {
  Mat pe = Mat::Zero(t_len, dim);
  for (Index t = 0; t < t_len; ++t) {
    for (int i = 0; 2 * i < dim; ++i) {
      const double rate = std::pow(10000.0, -2.0 * i / static_cast<double>(dim));
      pe(t, 2 * i) = std::sin(static_cast<double>(t) * rate);
      if (2 * i + 1 < dim) pe(t, 2 * i + 1) = std::cos(static_cast<double>(t) * rate);
    }
  }
  return pe;
}

Var multi_scale_attention(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                          int layer, Var x, const AttentionMaskPlan& plan) {
  const Index t_len = tape.value(x).rows();
  if (plan.t_len != t_len)
    throw ValidationError("multi_scale_attention: plan built for T=" +
                          std::to_string(plan.t_len) + " but sequence has T=" +
                          std::to_string(t_len));
  const int d = cfg.head_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Var q = matmul(tape, x, p[enc_name(layer + 1, "attn.wq")]);
  Var k = matmul(tape, x, p[enc_name(layer + 1, "attn.wk")]);
  Var v = matmul(tape, x, p[enc_name(layer + 1, "attn.wv")]);
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg.num_heads));
  for (int h = 0; h < cfg.num_heads; ++h) {
    Var qh = slice_cols(tape, q, h * d, d);
    Var kh = slice_cols(tape, k, h * d, d);
    Var vh = slice_cols(tape, v, h * d, d);
    Var scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt_d);
    Var attn = masked_softmax_rows(tape, scores, plan.mask(layer, h, cfg));
    heads.push_back(matmul(tape, attn, vh));
  }
  return matmul(tape, concat_cols(tape, heads), p[enc_name(layer + 1, "attn.wo")]);
}

EncoderForward encoder_forward(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                               Var frames, const AttentionMaskPlan& plan) {
  EncoderForward out;
  out.input = frames;
  Var x = frames;
  for (int l = 0; l < cfg.num_layers; ++l) {
    Var normed = layer_norm_rows(tape, x, p[enc_name(l + 1, "ln1.gain")],
                                 p[enc_name(l + 1, "ln1.bias")]);
    Var attn = multi_scale_attention(tape, cfg, p, l, normed, plan);
    Var x1 = add(tape, x, attn);
    Var normed2 = layer_norm_rows(tape, x1, p[enc_name(l + 1, "ln2.gain")],
                                  p[enc_name(l + 1, "ln2.bias")]);
    Var h = add_rowwise(tape, matmul(tape, normed2, p[enc_name(l + 1, "ffn.w1")]),
                        p[enc_name(l + 1, "ffn.b1")]);
    h = apply_nonlinearity(tape, cfg, h);
    Var f = add_rowwise(tape, matmul(tape, h, p[enc_name(l + 1, "ffn.w2")]),
                        p[enc_name(l + 1, "ffn.b2")]);
    x = add(tape, x1, f);
    out.layers.push_back(x);
  }
  return out;
}

Var codeword_logits(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                    int supervised_layer, Var rows) {
  Var proj = matmul(tape, rows, p[head_name(supervised_layer, "proj")]);
  Var sims = cosine_rows(tape, proj, p[head_name(supervised_layer, "embed")]);
  return scale(tape, sims, 1.0 / cfg.temperature);
}

Var codeword_distribution(Tape& tape, const ModelConfig& cfg, const BoundParams& p,
                          int supervised_layer, Var rows) {
  return softmax_rows(tape, codeword_logits(tape, cfg, p, supervised_layer, rows));
}

// ---- Checkpoints -------------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
T read_le(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write checkpoint: " + path);
  out.write("PMSC", 4);
  write_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = serialize_config(model.config);
  write_le<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.params.size()));
  for (const auto& [name, value] : model.params.items()) {
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pmsf_stream(out, value, kSourceRaw);
  }
  if (!out) throw StageError("short write to checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PMSC", 4) != 0)
    throw ValidationError("bad checkpoint magic in " + path);
  const std::uint32_t version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t cfg_len = read_le<std::uint64_t>(in);
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) throw ValidationError("truncated checkpoint config in " + path);

  Model model;
  model.config = parse_config_text(cfg_text);

  const std::uint32_t count = read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = read_le<std::uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint8_t tag = 0;
    Mat value = read_pmsf_stream(in, &tag);
    if (!value.allFinite())
      throw ValidationError("checkpoint parameter " + name + " has non-finite values");
    model.params.add(name, std::move(value));
  }

  // Every parameter the architecture requires must be present with the right
  // shape; extra parameters (e.g. a fine-tuning head) are allowed.
  const Model expected = init_model(model.config, 0);
  for (const auto& [name, value] : expected.params.items()) {
    if (!model.params.contains(name))
      throw ValidationError("checkpoint " + path + " is missing parameter " + name);
    const Mat& got = model.params.at(name);
    if (got.rows() != value.rows() || got.cols() != value.cols())
      throw ValidationError("checkpoint parameter " + name + " has shape " +
                            shape_string(got) + ", config requires " + shape_string(value));
  }
  return model;
}

}  // namespace pms
