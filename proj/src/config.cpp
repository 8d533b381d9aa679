// src/config.cpp
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

#include "pmsspeech/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "pmsspeech/finetune.hpp"

namespace pms {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

class IniReader {
 public:
  explicit IniReader(const IniData& data) : data_(data) {}

  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) {
    mark(section, key);
    const auto sec = data_.find(section);
    if (sec == data_.end()) return fallback;
    const auto it = sec->second.find(key);
    return it == sec->second.end() ? fallback : it->second;
  }

  long get_long(const std::string& section, const std::string& key, long fallback) {
    const std::string v = get(section, key, "");
    if (v.empty()) return fallback;
    try {
      return std::stol(v);
    } catch (const std::exception&) {
      throw ValidationError("config [" + section + "] " + key + ": bad integer '" + v + "'");
    }
  }

  int get_int(const std::string& section, const std::string& key, int fallback) {
    return static_cast<int>(get_long(section, key, fallback));
  }

  double get_double(const std::string& section, const std::string& key, double fallback) {
    const std::string v = get(section, key, "");
    if (v.empty()) return fallback;
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      throw ValidationError("config [" + section + "] " + key + ": bad number '" + v + "'");
    }
  }

  std::vector<int> get_ints(const std::string& section, const std::string& key,
                            std::vector<int> fallback, bool windows = false) {
    const std::string v = get(section, key, "");
    if (v.empty()) return fallback;
    std::vector<int> out;
    std::istringstream is(v);
    std::string item;
    while (std::getline(is, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      if (windows && item == "inf") {
        out.push_back(kUnboundedWindow);
      } else {
        try {
          out.push_back(std::stoi(item));
        } catch (const std::exception&) {
          throw ValidationError("config [" + section + "] " + key + ": bad entry '" +
                                item + "'");
        }
      }
    }
    return out;
  }

  // Flags any key the schema never consumed; catches typos early.
  void check_consumed() const {
    for (const auto& [section, kv] : data_)
      for (const auto& [key, value] : kv)
        if (!seen_.count(section + "\n" + key))
          throw ValidationError("config: unknown key '" + key + "' in section [" +
                                section + "]");
  }

 private:
  void mark(const std::string& section, const std::string& key) {
    seen_.insert(section + "\n" + key);
  }
  const IniData& data_;
  std::set<std::string> seen_;
};

}  // namespace

IniData parse_ini(const std::string& text) {
  IniData data;
  std::istringstream is(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ValidationError("config line " + std::to_string(line_no) +
                              ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      data[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(line_no) +
                            ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ValidationError("config line " + std::to_string(line_no) + ": empty key");
    data[section][key] = value;
  }
  return data;
}

IniData load_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_ini(buffer.str());
}

namespace {

TrainStageConfig parse_stage(IniReader* r, const std::string& section,
                             const TrainStageConfig& defaults) {
  TrainStageConfig s = defaults;
  s.steps = r->get_long(section, "steps", defaults.steps);
  s.peak_lr = r->get_double(section, "peak_lr", defaults.peak_lr);
  s.warmup_fraction = r->get_double(section, "warmup_fraction", defaults.warmup_fraction);
  s.batch_seconds = r->get_double(section, "batch_seconds", defaults.batch_seconds);
  s.adam.beta1 = r->get_double(section, "adam_beta1", defaults.adam.beta1);
  s.adam.beta2 = r->get_double(section, "adam_beta2", defaults.adam.beta2);
  s.adam.epsilon = r->get_double(section, "adam_epsilon", defaults.adam.epsilon);
  return s;
}

}  // namespace

ExperimentConfig parse_experiment_config(const IniData& ini) {
  IniReader r(ini);
  ExperimentConfig cfg;
  cfg.model = desk_model_config();

  cfg.seed = static_cast<std::uint64_t>(r.get_long("", "seed", 1));
  cfg.output_dir = r.get("", "output_dir", cfg.output_dir);
  cfg.threads = r.get_int("", "threads", 0);

  cfg.unlabeled_dir = r.get("corpus", "unlabeled_dir", "");
  cfg.labeled_dir = r.get("corpus", "labeled_dir", "");
  cfg.transcripts = r.get("corpus", "transcripts", "");

  ModelConfig& m = cfg.model;
  m.num_layers = r.get_int("model", "num_layers", m.num_layers);
  m.num_heads = r.get_int("model", "num_heads", m.num_heads);
  m.model_dim = r.get_int("model", "model_dim", m.model_dim);
  m.ffn_dim = r.get_int("model", "ffn_dim", m.ffn_dim);
  m.embed_dim = r.get_int("model", "embed_dim", m.embed_dim);
  m.temperature = r.get_double("model", "temperature", m.temperature);
  m.sample_rate = r.get_int("model", "sample_rate", m.sample_rate);
  {
    const std::string conv = r.get("model", "conv_spec", "");
    if (!conv.empty()) {
      m.conv_spec.clear();
      std::istringstream cs(conv);
      std::string item;
      while (std::getline(cs, item, ',')) {
        ConvLayerSpec spec;
        if (std::sscanf(item.c_str(), "%d:%d:%d", &spec.channels, &spec.kernel,
                        &spec.stride) != 3)
          throw ValidationError("config [model] conv_spec: bad entry '" + item + "'");
        m.conv_spec.push_back(spec);
      }
    }
    const std::string act = r.get("model", "nonlinearity", "gelu");
    if (act == "gelu")
      m.nonlinearity = Nonlinearity::kGelu;
    else if (act == "relu")
      m.nonlinearity = Nonlinearity::kRelu;
    else
      throw ValidationError("config [model] nonlinearity: expected gelu or relu");
  }
  m.window_schedule = r.get_ints("model", "window_schedule", m.window_schedule, true);
  m.supervised_layers = r.get_ints("model", "supervised_layers", m.supervised_layers);
  m.codebook_sizes = r.get_ints("model", "codebook_sizes", m.codebook_sizes);

  cfg.mask.start_probability = r.get_double("mask", "p", cfg.mask.start_probability);
  cfg.mask.span_length = r.get_int("mask", "l", cfg.mask.span_length);

  cfg.cluster1_k = r.get_int("cluster1", "k", cfg.cluster1_k);
  cfg.cluster1_subsample =
      r.get_double("cluster1", "subsample_fraction", cfg.cluster1_subsample);
  cfg.cluster1_max_iters = r.get_int("cluster1", "max_iters", cfg.cluster1_max_iters);

  cfg.cluster2_sizes = r.get_ints("cluster2", "sizes", cfg.cluster2_sizes);
  cfg.cluster2_subsample =
      r.get_double("cluster2", "subsample_fraction", cfg.cluster2_subsample);
  cfg.cluster2_max_iters = r.get_int("cluster2", "max_iters", cfg.cluster2_max_iters);

  cfg.extract_layer = r.get_int("extract", "layer", cfg.extract_layer);

  TrainStageConfig pre_defaults;
  pre_defaults.steps = 2000;
  cfg.pretrain1 = parse_stage(&r, "pretrain1", pre_defaults);
  pre_defaults.steps = 3000;
  cfg.pretrain2 = parse_stage(&r, "pretrain2", pre_defaults);
  {
    const std::string warm = r.get("pretrain2", "warm_start", "fresh");
    if (warm == "fresh")
      cfg.iter2_warm_start = false;
    else if (warm == "iter1")
      cfg.iter2_warm_start = true;
    else
      throw ValidationError("config [pretrain2] warm_start: expected fresh or iter1");
  }

  TrainStageConfig ft_defaults;
  ft_defaults.steps = 2000;
  ft_defaults.peak_lr = 2e-3;
  ft_defaults.batch_seconds = 20.0;
  cfg.finetune = parse_stage(&r, "finetune", ft_defaults);
  cfg.freeze_policy = r.get("finetune", "policy", cfg.freeze_policy);

  cfg.beam_width = r.get_int("decode", "beam", cfg.beam_width);
  cfg.lm_weight = r.get_double("decode", "lm_weight", cfg.lm_weight);
  cfg.length_bonus = r.get_double("decode", "length_bonus", cfg.length_bonus);
  cfg.lm_order = r.get_int("decode", "lm_order", cfg.lm_order);

  r.check_consumed();
  validate_experiment_config(cfg);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(load_ini(path));
}

namespace {

void emit_stage(std::ostringstream& os, const std::string& section,
                const TrainStageConfig& s, const std::string& extra = "") {
  os << "[" << section << "]\n";
  os << "adam_beta1=" << fmt(s.adam.beta1) << "\n";
  os << "adam_beta2=" << fmt(s.adam.beta2) << "\n";
  os << "adam_epsilon=" << fmt(s.adam.epsilon) << "\n";
  os << "batch_seconds=" << fmt(s.batch_seconds) << "\n";
  os << "peak_lr=" << fmt(s.peak_lr) << "\n";
  os << "steps=" << s.steps << "\n";
  os << "warmup_fraction=" << fmt(s.warmup_fraction) << "\n";
  if (!extra.empty()) os << extra;
}

}  // namespace

std::string serialize_experiment_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "output_dir=" << cfg.output_dir << "\n";
  os << "seed=" << cfg.seed << "\n";
  os << "threads=" << cfg.threads << "\n";
  os << "[cluster1]\n";
  os << "k=" << cfg.cluster1_k << "\n";
  os << "max_iters=" << cfg.cluster1_max_iters << "\n";
  os << "subsample_fraction=" << fmt(cfg.cluster1_subsample) << "\n";
  os << "[cluster2]\n";
  os << "max_iters=" << cfg.cluster2_max_iters << "\n";
  os << "sizes=" << join_ints(cfg.cluster2_sizes) << "\n";
  os << "subsample_fraction=" << fmt(cfg.cluster2_subsample) << "\n";
  os << "[corpus]\n";
  os << "labeled_dir=" << cfg.labeled_dir << "\n";
  os << "transcripts=" << cfg.transcripts << "\n";
  os << "unlabeled_dir=" << cfg.unlabeled_dir << "\n";
  os << "[decode]\n";
  os << "beam=" << cfg.beam_width << "\n";
  os << "length_bonus=" << fmt(cfg.length_bonus) << "\n";
  os << "lm_order=" << cfg.lm_order << "\n";
  os << "lm_weight=" << fmt(cfg.lm_weight) << "\n";
  os << "[extract]\n";
  os << "layer=" << cfg.extract_layer << "\n";
  emit_stage(os, "finetune", cfg.finetune, "policy=" + cfg.freeze_policy + "\n");
  os << "[mask]\n";
  os << "l=" << cfg.mask.span_length << "\n";
  os << "p=" << fmt(cfg.mask.start_probability) << "\n";
  os << "[model]\n" << serialize_config(cfg.model);
  emit_stage(os, "pretrain1", cfg.pretrain1);
  emit_stage(os, "pretrain2", cfg.pretrain2,
             std::string("warm_start=") + (cfg.iter2_warm_start ? "iter1" : "fresh") + "\n");
  return os.str();
}

std::string annotated_config_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "# pmsspeech experiment configuration (desk-scale defaults).\n";
  os << "# Full-scale reference values are noted beside the keys they apply to.\n\n";
  os << "seed = " << cfg.seed << "\n";
  os << "output_dir = " << cfg.output_dir << "\n";
  os << "threads = " << cfg.threads << "          # 0 = auto\n\n";
  os << "[corpus]\n";
  os << "unlabeled_dir = " << cfg.unlabeled_dir << "\n";
  os << "labeled_dir = " << cfg.labeled_dir << "\n";
  os << "transcripts = " << cfg.transcripts << "\n\n";
  os << "[model]\n";
  os << "num_layers = " << cfg.model.num_layers << "        # full-scale: 12\n";
  os << "num_heads = " << cfg.model.num_heads << "         # full-scale: 12\n";
  os << "model_dim = " << cfg.model.model_dim << "        # full-scale: 768\n";
  os << "ffn_dim = " << cfg.model.ffn_dim << "         # full-scale: 3072\n";
  os << "embed_dim = " << cfg.model.embed_dim << "        # full-scale: 256\n";
  {
    std::ostringstream conv;
    for (std::size_t i = 0; i < cfg.model.conv_spec.size(); ++i) {
      if (i) conv << ',';
      conv << cfg.model.conv_spec[i].channels << ':' << cfg.model.conv_spec[i].kernel
           << ':' << cfg.model.conv_spec[i].stride;
    }
    os << "conv_spec = " << conv.str() << "   # stride product 320 -> 20 ms frames\n";
  }
  {
    std::ostringstream ws;
    for (std::size_t i = 0; i < cfg.model.window_schedule.size(); ++i) {
      if (i) ws << ',';
      if (cfg.model.window_schedule[i] == kUnboundedWindow)
        ws << "inf";
      else
        ws << cfg.model.window_schedule[i];
    }
    os << "window_schedule = " << ws.str()
       << "   # full-scale: 80 at layers 1-6, 160 at layers 7-12\n";
  }
  os << "supervised_layers = " << join_ints(cfg.model.supervised_layers)
     << "   # full-scale: 6,12\n";
  os << "codebook_sizes = " << join_ints(cfg.model.codebook_sizes)
     << "   # full-scale: 300,500\n";
  os << "temperature = " << fmt(cfg.model.temperature) << "\n";
  os << "nonlinearity = "
     << (cfg.model.nonlinearity == Nonlinearity::kGelu ? "gelu" : "relu") << "\n";
  os << "sample_rate = " << cfg.model.sample_rate << "\n\n";
  os << "[mask]\n";
  os << "p = " << fmt(cfg.mask.start_probability) << "          # mask-start fraction\n";
  os << "l = " << cfg.mask.span_length << "            # span length in frames\n\n";
  os << "[cluster1]\n";
  os << "k = " << cfg.cluster1_k << "          # MFCC clusters\n";
  os << "subsample_fraction = " << fmt(cfg.cluster1_subsample) << "\n";
  os << "max_iters = " << cfg.cluster1_max_iters << "\n\n";
  os << "[cluster2]\n";
  os << "sizes = " << join_ints(cfg.cluster2_sizes) << "     # full-scale: 100,300,500\n";
  os << "subsample_fraction = " << fmt(cfg.cluster2_subsample)
     << "   # fraction of extracted frames clustered\n";
  os << "max_iters = " << cfg.cluster2_max_iters << "\n\n";
  os << "[extract]\n";
  os << "layer = " << cfg.extract_layer << "          # full-scale: 6\n\n";
  os << "[pretrain1]\n";
  os << "steps = " << cfg.pretrain1.steps << "        # full-scale: 250000\n";
  os << "peak_lr = " << fmt(cfg.pretrain1.peak_lr) << "   # full-scale: 0.0005\n";
  os << "warmup_fraction = " << fmt(cfg.pretrain1.warmup_fraction) << "\n";
  os << "batch_seconds = " << fmt(cfg.pretrain1.batch_seconds)
     << "   # full-scale: 87.5 per GPU\n";
  os << "adam_beta1 = " << fmt(cfg.pretrain1.adam.beta1) << "\n";
  os << "adam_beta2 = " << fmt(cfg.pretrain1.adam.beta2) << "\n\n";
  os << "[pretrain2]\n";
  os << "steps = " << cfg.pretrain2.steps << "        # full-scale: 400000\n";
  os << "peak_lr = " << fmt(cfg.pretrain2.peak_lr) << "   # full-scale: 0.0005\n";
  os << "warmup_fraction = " << fmt(cfg.pretrain2.warmup_fraction) << "\n";
  os << "batch_seconds = " << fmt(cfg.pretrain2.batch_seconds) << "\n";
  os << "warm_start = " << (cfg.iter2_warm_start ? "iter1" : "fresh") << "\n\n";
  os << "[finetune]\n";
  os << "steps = " << cfg.finetune.steps << "\n";
  os << "peak_lr = " << fmt(cfg.finetune.peak_lr) << "\n";
  os << "warmup_fraction = " << fmt(cfg.finetune.warmup_fraction) << "\n";
  os << "batch_seconds = " << fmt(cfg.finetune.batch_seconds)
     << "   # full-scale: 200 per GPU\n";
  os << "policy = " << cfg.freeze_policy
     << "   # freeze-conv | head-only | all\n\n";
  os << "[decode]\n";
  os << "beam = " << cfg.beam_width << "           # full-scale decoder: 1500\n";
  os << "lm_weight = " << fmt(cfg.lm_weight) << "\n";
  os << "length_bonus = " << fmt(cfg.length_bonus) << "\n";
  os << "lm_order = " << cfg.lm_order << "       # n-gram order, up to 4\n";
  return os.str();
}

void validate_experiment_config(const ExperimentConfig& cfg) {
  validate_config(cfg.model);
  if (cfg.extract_layer < 1 || cfg.extract_layer > cfg.model.num_layers)
    throw ValidationError("config: extract layer " + std::to_string(cfg.extract_layer) +
                          " outside [1, " + std::to_string(cfg.model.num_layers) + "]");
  for (int size : cfg.model.codebook_sizes) {
    if (std::find(cfg.cluster2_sizes.begin(), cfg.cluster2_sizes.end(), size) ==
        cfg.cluster2_sizes.end())
      throw ValidationError("config: codebook size " + std::to_string(size) +
                            " has no matching clustering in [cluster2] sizes");
  }
  if (cfg.mask.start_probability < 0.0 || cfg.mask.start_probability > 1.0)
    throw ValidationError("config: mask p outside [0, 1]");
  if (cfg.mask.span_length < 1) throw ValidationError("config: mask l must be >= 1");
  if (cfg.cluster1_k < 1) throw ValidationError("config: cluster1 k must be >= 1");
  for (int s : cfg.cluster2_sizes)
    if (s < 1) throw ValidationError("config: cluster2 sizes must be >= 1");
  for (double f : {cfg.cluster1_subsample, cfg.cluster2_subsample})
    if (!(f > 0.0) || f > 1.0)
      throw ValidationError("config: subsample fractions must lie in (0, 1]");
  for (const TrainStageConfig* s : {&cfg.pretrain1, &cfg.pretrain2, &cfg.finetune}) {
    if (s->steps < 1) throw ValidationError("config: training steps must be >= 1");
    if (s->warmup_fraction < 0.0 || s->warmup_fraction >= 1.0)
      throw ValidationError("config: warmup fraction outside [0, 1)");
    if (!(s->batch_seconds > 0.0))
      throw ValidationError("config: batch_seconds must be positive");
    if (s->peak_lr < 0.0) throw ValidationError("config: peak_lr must be >= 0");
  }
  parse_freeze_policy(cfg.freeze_policy);
  if (cfg.beam_width < 1) throw ValidationError("config: beam width must be >= 1");
  if (cfg.lm_order < 1 || cfg.lm_order > 4)
    throw ValidationError("config: lm_order must lie in [1, 4]");
  if (!std::isfinite(cfg.lm_weight) || !std::isfinite(cfg.length_bonus))
    throw ValidationError("config: decode weights must be finite");
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0')
     << fnv1a64(serialize_experiment_config(cfg));
  return os.str();
}

}  // namespace pms
