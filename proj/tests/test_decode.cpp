// tests/test_decode.cpp
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
#include <cstdio>
#include <string>
#include <vector>

#include "pmsspeech/beam.hpp"
#include "pmsspeech/ctc.hpp"
#include "pmsspeech/ngram.hpp"
#include "pmsspeech/rng.hpp"

using namespace pms;

namespace {

Mat random_log_probs(Index t_len, int vocab, Rng* rng) {
  Mat logits = rng->uniform_matrix(t_len, vocab + 1, -2.0, 2.0);
  for (Index t = 0; t < t_len; ++t) {
    const double mx = logits.row(t).maxCoeff();
    double s = 0.0;
    for (Index k = 0; k < logits.cols(); ++k) s += std::exp(logits(t, k) - mx);
    logits.row(t).array() -= mx + std::log(s);
  }
  return logits;
}

// Exhaustive CTC-posterior argmax over every labeling emittable in T frames.
std::vector<int> exhaustive_argmax(const Mat& log_probs) {
  const int t_len = static_cast<int>(log_probs.rows());
  const int vocab = static_cast<int>(log_probs.cols()) - 1;
  std::vector<std::vector<int>> seqs{{}};
  for (int len = 1; len <= t_len; ++len) {
    std::vector<std::vector<int>> grown;
    for (const auto& s : seqs)
      if (static_cast<int>(s.size()) == len - 1)
        for (int v = 1; v <= vocab; ++v) {
          auto t = s;
          t.push_back(v);
          grown.push_back(t);
        }
    seqs.insert(seqs.end(), grown.begin(), grown.end());
  }
  std::vector<int> best;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (const auto& labels : seqs) {
    if (ctc_min_frames(labels) > t_len) continue;
    const double lp = -ctc_forward_backward(log_probs, labels).loss;
    if (lp > best_lp || (lp == best_lp && labels < best)) {
      best_lp = lp;
      best = labels;
    }
  }
  return best;
}

std::vector<std::vector<std::string>> toy_sentences() {
  return {
      {"a", "b", "a", "c"}, {"a", "b", "c"},      {"c", "b", "a"},
      {"a", "a", "b"},      {"b", "c", "a", "a"}, {"a", "c"},
  };
}

}  // namespace

TEST_CASE("beam search with no fusion matches the exhaustive posterior argmax") {
  Rng rng(23);
  DecodeConfig cfg;
  cfg.beam_width = 256;  // saturates every instance at T <= 4, V <= 3
  for (int trial = 0; trial < 40; ++trial) {
    const int t_len = 1 + static_cast<int>(rng.uniform_index(4));
    const int vocab = 1 + static_cast<int>(rng.uniform_index(3));
    Mat lp = random_log_probs(t_len, vocab, &rng);
    BeamHypothesis hyp = beam_decode(lp, cfg);
    CHECK(hyp.symbols == exhaustive_argmax(lp));
  }
}

TEST_CASE("single-frame decode picks the best symbol or stays empty") {
  DecodeConfig cfg;
  cfg.beam_width = 8;
  Mat blank_wins(1, 3);
  blank_wins << -0.1, -2.0, -3.0;
  CHECK(beam_decode(blank_wins, cfg).symbols.empty());
  Mat sym_wins(1, 3);
  sym_wins << -3.0, -0.1, -2.0;
  CHECK(beam_decode(sym_wins, cfg).symbols == std::vector<int>{1});
}

TEST_CASE("positive length bonus prefers the longer of two tied hypotheses") {
  // Two frames, two symbols with identical per-frame mass: "a" (via repeats
  // or blank) competes with "ab"/"ba"; a large w2 must push toward length 2.
  Mat lp(2, 3);
  const double third = std::log(1.0 / 3.0);
  lp << third, third, third, third, third, third;
  DecodeConfig plain;
  plain.beam_width = 64;
  const std::size_t plain_len = beam_decode(lp, plain).symbols.size();
  DecodeConfig bonused = plain;
  bonused.length_bonus = 5.0;
  const std::size_t bonused_len = beam_decode(lp, bonused).symbols.size();
  CHECK(bonused_len == 2);
  CHECK(plain_len < bonused_len);
}

TEST_CASE("witten-bell model normalizes over the vocabulary plus unk") {
  NgramLM lm = NgramLM::train(toy_sentences(), 3);
  std::vector<std::string> events = lm.vocab();
  events.push_back(NgramLM::kEos);
  events.push_back("zz-unseen");  // exercises the unk floor

  std::vector<std::vector<std::string>> contexts = {
      {}, {NgramLM::kBos}, {"a"}, {"b"}, {NgramLM::kBos, "a"}, {"a", "b"}, {"b", "c"}};
  for (const auto& ctx : contexts) {
    double total = 0.0;
    for (const auto& w : events) total += std::exp(lm.log_prob(ctx, w));
    CHECK(total <= 1.0 + 1e-6);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("higher-order context sharpens the prediction") {
  NgramLM lm = NgramLM::train(toy_sentences(), 3);
  // "a b" is always followed by a or c in the corpus, never by b.
  const double ab_a = lm.log_prob({"a", "b"}, "a");
  const double ab_b = lm.log_prob({"a", "b"}, "b");
  CHECK(ab_a > ab_b);
}

TEST_CASE("arpa round trip preserves scores") {
  NgramLM lm = NgramLM::train(toy_sentences(), 3);
  const std::string path = "/tmp/pmsspeech_test_lm.arpa";
  lm.save_arpa(path);
  NgramLM back = NgramLM::load_arpa(path);
  CHECK(back.order() == 3);
  std::vector<std::vector<std::string>> probes = {
      {"a"}, {"b", "c"}, {NgramLM::kBos}, {"c", "b"}};
  for (const auto& ctx : probes)
    for (const std::string& w : {"a", "b", "c", "zz"})
      CHECK(back.log_prob(ctx, w) == doctest::Approx(lm.log_prob(ctx, w)).epsilon(1e-6));
  CHECK(back.sentence_log_prob({"a", "b", "c"}) ==
        doctest::Approx(lm.sentence_log_prob({"a", "b", "c"})).epsilon(1e-6));
  std::remove(path.c_str());
}

TEST_CASE("unseen tokens hit the uniform floor") {
  NgramLM lm = NgramLM::train(toy_sentences(), 2);
  const double floor1 = lm.log_prob({}, "never-seen");
  const double floor2 = lm.log_prob({"a"}, "also-never-seen");
  CHECK(std::isfinite(floor1));
  CHECK(floor2 <= floor1 + 1e-12);  // backoff weight only shrinks it
  CHECK(lm.log_prob({}, "a") > floor1);
}

TEST_CASE("language-model fusion can flip the decoded hypothesis") {
  // Acoustics slightly prefer "b"; an LM trained on a-heavy text flips it.
  Mat lp(1, 3);
  lp << -3.0, std::log(0.45), std::log(0.50);
  std::vector<std::vector<std::string>> a_heavy(20, std::vector<std::string>{"a"});
  a_heavy.push_back({"b"});
  NgramLM lm = NgramLM::train(a_heavy, 2);

  LmFusion fusion;
  fusion.lm = &lm;
  fusion.symbol_tokens = {"", "a", "b"};

  DecodeConfig plain;
  plain.beam_width = 16;
  CHECK(beam_decode(lp, plain).symbols == std::vector<int>{2});

  DecodeConfig fused = plain;
  fused.lm_weight = 1.5;
  CHECK(beam_decode(lp, fused, &fusion).symbols == std::vector<int>{1});
}
