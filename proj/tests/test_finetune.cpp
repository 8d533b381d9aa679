// tests/test_finetune.cpp
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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "pmsspeech/ctc.hpp"
#include "pmsspeech/finetune.hpp"
#include "pmsspeech/wer.hpp"
#include "pmsspeech/rng.hpp"

using namespace pms;

namespace {

ModelConfig small_config() {
  ModelConfig cfg = desk_model_config();
  cfg.num_layers = 2;
  cfg.num_heads = 4;
  cfg.model_dim = 32;
  cfg.ffn_dim = 64;
  cfg.embed_dim = 16;
  cfg.window_schedule = {4, 8};
  cfg.supervised_layers = {1, 2};
  cfg.codebook_sizes = {6, 10};
  return cfg;
}

// Tones at distinct frequencies per symbol; enough structure to overfit.
Waveform symbol_tone_waveform(const std::vector<int>& symbols, Rng* rng) {
  const int samples_per_symbol = 1600;  // 0.1 s -> 5 encoder frames
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(static_cast<Index>(symbols.size()) * samples_per_symbol);
  Index at = 0;
  for (int s : symbols) {
    const double freq = 250.0 + 170.0 * s;
    for (int i = 0; i < samples_per_symbol; ++i, ++at)
      w.samples(at) = 0.5 * std::sin(2.0 * M_PI * freq * i / 16000.0) +
                      0.01 * rng->uniform(-1.0, 1.0);
  }
  return w;
}

std::vector<FinetuneItem> toy_labeled_set(int count, int vocab, Rng* rng) {
  std::vector<FinetuneItem> items;
  for (int u = 0; u < count; ++u) {
    FinetuneItem item;
    item.utt_id = "utt" + std::to_string(u);
    const std::size_t len = 3 + rng->uniform_index(3);
    for (std::size_t i = 0; i < len; ++i)
      item.labels.push_back(1 + static_cast<int>(rng->uniform_index(
                                    static_cast<std::uint64_t>(vocab))));
    item.waveform = symbol_tone_waveform(item.labels, rng);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace

TEST_CASE("freeze policy parsing round-trips") {
  CHECK(freeze_policy_name(parse_freeze_policy("freeze-conv")) == "freeze-conv");
  CHECK(freeze_policy_name(parse_freeze_policy("head-only")) == "head-only");
  CHECK(freeze_policy_name(parse_freeze_policy("all")) == "all");
  CHECK_THROWS_AS(parse_freeze_policy("bogus"), ValidationError);
  CHECK(parse_freeze_policy("head-only").conv_frozen());
  CHECK(parse_freeze_policy("head-only").transformer_frozen());
}

TEST_CASE("ctc head creation and vocab introspection") {
  Model model = init_model(small_config(), 3);
  CHECK_THROWS_AS(ctc_vocab_size(model), ValidationError);
  add_ctc_head(&model, 5, 7);
  CHECK(ctc_vocab_size(model) == 5);
  CHECK(model.params.at("ctc.w").rows() == 32);
  CHECK(model.params.at("ctc.w").cols() == 6);
  CHECK_THROWS_AS(add_ctc_head(&model, 5, 7), ValidationError);
}

TEST_CASE("frozen parameters stay bit-identical across steps") {
  Rng rng(41);
  Model model = init_model(small_config(), 41);
  add_ctc_head(&model, 4, 42);
  std::vector<FinetuneItem> batch = toy_labeled_set(3, 4, &rng);

  for (const char* policy_name : {"freeze-conv", "head-only"}) {
    Model trained = model;
    const FreezePolicy policy = parse_freeze_policy(policy_name);
    AdamState state;
    state.init_for(trained.params);
    FrozenForwardCache cache;
    LrSchedule schedule;
    schedule.peak = 1e-3;
    schedule.total_steps = 20;
    AdamConfig adam;
    for (long step = 0; step < 8; ++step)
      finetune_step(&trained, &state, batch, policy, schedule, adam, step, &cache);

    const std::vector<bool> trainable = trainable_mask(trained.params, policy);
    bool any_trained = false, any_frozen_moved = false;
    for (std::size_t i = 0; i < trained.params.items().size(); ++i) {
      const Mat& after = trained.params.items()[i].second;
      const Mat& before = model.params.at(trained.params.items()[i].first);
      const bool identical =
          std::memcmp(after.data(), before.data(),
                      sizeof(double) * static_cast<std::size_t>(after.size())) == 0;
      if (trainable[i]) {
        any_trained = any_trained || !identical;
      } else {
        any_frozen_moved = any_frozen_moved || !identical;
      }
    }
    CHECK(any_trained);
    CHECK(!any_frozen_moved);
  }
}

TEST_CASE("zero learning rate leaves every parameter unchanged") {
  Rng rng(43);
  Model model = init_model(small_config(), 43);
  add_ctc_head(&model, 4, 44);
  std::vector<FinetuneItem> batch = toy_labeled_set(2, 4, &rng);
  const Model before = model;
  AdamState state;
  state.init_for(model.params);
  FrozenForwardCache cache;
  LrSchedule schedule;
  schedule.peak = 0.0;
  schedule.total_steps = 4;
  finetune_step(&model, &state, batch, parse_freeze_policy("all"), schedule, AdamConfig{},
                1, &cache);
  for (std::size_t i = 0; i < model.params.items().size(); ++i) {
    const Mat& a = model.params.items()[i].second;
    const Mat& b = before.params.items()[i].second;
    CHECK(std::memcmp(a.data(), b.data(),
                      sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
  }
}

TEST_CASE("conv cache does not change the training trajectory") {
  Rng rng(47);
  Model base = init_model(small_config(), 47);
  add_ctc_head(&base, 4, 48);
  std::vector<FinetuneItem> batch = toy_labeled_set(2, 4, &rng);
  const FreezePolicy policy = parse_freeze_policy("freeze-conv");
  LrSchedule schedule;
  schedule.peak = 1e-3;
  schedule.total_steps = 10;

  auto run = [&](bool with_cache) {
    Model model = base;
    AdamState state;
    state.init_for(model.params);
    FrozenForwardCache cache;
    for (long step = 0; step < 4; ++step)
      finetune_step(&model, &state, batch, policy, schedule, AdamConfig{}, step,
                    with_cache ? &cache : nullptr);
    return model;
  };
  Model cached = run(true);
  Model uncached = run(false);
  for (std::size_t i = 0; i < cached.params.items().size(); ++i) {
    const Mat& a = cached.params.items()[i].second;
    const Mat& b = uncached.params.items()[i].second;
    CHECK(std::memcmp(a.data(), b.data(),
                      sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
  }
}

TEST_CASE("a tiny labeled set is learnable: loss falls and greedy CER improves") {
  Rng rng(53);
  Model model = init_model(small_config(), 53);
  add_ctc_head(&model, 4, 54);
  std::vector<FinetuneItem> batch = toy_labeled_set(3, 4, &rng);

  AdamState state;
  state.init_for(model.params);
  FrozenForwardCache cache;
  LrSchedule schedule;
  schedule.peak = 4e-3;
  schedule.warmup_fraction = 0.1;
  schedule.total_steps = 160;
  const FreezePolicy policy = parse_freeze_policy("freeze-conv");

  double first_loss = 0.0, last_loss = 0.0;
  for (long step = 0; step < 160; ++step) {
    FinetuneMetrics m =
        finetune_step(&model, &state, batch, policy, schedule, AdamConfig{}, step, &cache);
    if (step == 0) first_loss = m.loss;
    last_loss = m.loss;
  }
  CHECK(last_loss < 0.5 * first_loss);

  int distance = 0, length = 0;
  for (const FinetuneItem& item : batch) {
    const Mat lp = ctc_inference_log_probs(model, item.waveform);
    distance += edit_align(item.labels, greedy_decode(lp)).distance();
    length += static_cast<int>(item.labels.size());
  }
  CHECK(distance < length / 2);  // well below the all-wrong baseline
}
