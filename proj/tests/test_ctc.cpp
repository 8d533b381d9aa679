// tests/test_ctc.cpp
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
#include <vector>

#include "pmsspeech/autodiff.hpp"
#include "pmsspeech/ctc.hpp"
#include "pmsspeech/grad_check.hpp"
#include "pmsspeech/rng.hpp"

using namespace pms;

namespace {

// Brute-force CTC: enumerate every alignment path in [0, V]^T, keep those
// whose collapse equals the labels, and sum their probabilities.
double brute_force_ctc_loss(const Mat& log_probs, const std::vector<int>& labels) {
  const Index t_len = log_probs.rows();
  const int symbols = static_cast<int>(log_probs.cols());
  std::vector<int> path(static_cast<std::size_t>(t_len), 0);
  double total = 0.0;
  while (true) {
    // Collapse: drop repeats, then blanks.
    std::vector<int> collapsed;
    int prev = -1;
    for (int s : path) {
      if (s != prev && s != 0) collapsed.push_back(s);
      prev = s;
    }
    if (collapsed == labels) {
      double lp = 0.0;
      for (Index t = 0; t < t_len; ++t) lp += log_probs(t, path[static_cast<std::size_t>(t)]);
      total += std::exp(lp);
    }
    Index pos = 0;
    while (pos < t_len) {
      if (++path[static_cast<std::size_t>(pos)] < symbols) break;
      path[static_cast<std::size_t>(pos)] = 0;
      ++pos;
    }
    if (pos == t_len) break;
  }
  return -std::log(total);
}

Mat random_log_probs(Index t_len, int vocab, Rng* rng) {
  Mat logits = rng->uniform_matrix(t_len, vocab + 1, -2.0, 2.0);
  for (Index t = 0; t < t_len; ++t) {
    const double mx = logits.row(t).maxCoeff();
    double s = 0.0;
    for (Index k = 0; k < logits.cols(); ++k) s += std::exp(logits(t, k) - mx);
    const double lse = mx + std::log(s);
    logits.row(t).array() -= lse;
  }
  return logits;
}

}  // namespace

TEST_CASE("single-frame single-label loss is -log p_1(a)") {
  Rng rng(3);
  Mat lp = random_log_probs(1, 3, &rng);
  CtcForwardResult res = ctc_forward_backward(lp, {2});
  CHECK(res.loss == doctest::Approx(-lp(0, 2)).epsilon(1e-12));
}

TEST_CASE("two frames, one label: the three-alignment hand formula") {
  Rng rng(5);
  Mat lp = random_log_probs(2, 2, &rng);
  CtcForwardResult res = ctc_forward_backward(lp, {1});
  const double p = std::exp(lp(0, 1)) * std::exp(lp(1, 1)) +
                   std::exp(lp(0, 1)) * std::exp(lp(1, 0)) +
                   std::exp(lp(0, 0)) * std::exp(lp(1, 1));
  CHECK(res.loss == doctest::Approx(-std::log(p)).epsilon(1e-10));
}

TEST_CASE("empty labels: all-blank path") {
  Rng rng(7);
  Mat lp = random_log_probs(4, 3, &rng);
  CtcForwardResult res = ctc_forward_backward(lp, {});
  double expected = 0.0;
  for (Index t = 0; t < 4; ++t) expected -= lp(t, 0);
  CHECK(res.loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("forward loss equals brute-force alignment enumeration") {
  Rng rng(11);
  for (int t_len = 1; t_len <= 5; ++t_len) {
    for (int vocab = 1; vocab <= 4; ++vocab) {
      Mat lp = random_log_probs(t_len, vocab, &rng);
      // All label sequences of length 0..3 over [1, vocab].
      std::vector<std::vector<int>> seqs{{}};
      for (int len = 1; len <= 3; ++len) {
        std::vector<std::vector<int>> grown;
        for (const auto& s : seqs) {
          if (static_cast<int>(s.size()) != len - 1) continue;
          for (int v = 1; v <= vocab; ++v) {
            auto t = s;
            t.push_back(v);
            grown.push_back(t);
          }
        }
        seqs.insert(seqs.end(), grown.begin(), grown.end());
      }
      for (const auto& labels : seqs) {
        if (ctc_min_frames(labels) > t_len) continue;
        const double got = ctc_forward_backward(lp, labels).loss;
        const double want = brute_force_ctc_loss(lp, labels);
        CHECK(got == doctest::Approx(want).epsilon(1e-8));
      }
    }
  }
}

TEST_CASE("gradient matches finite differences on T=4, V=3") {
  Rng rng(13);
  Tape tape;
  Var logits = tape.input(rng.uniform_matrix(4, 4, -1.0, 1.0));
  Var lp = log_softmax_rows(tape, logits);
  Var loss = ctc_loss_op(tape, lp, {2, 1});
  GradCheckReport rep = grad_check(&tape, loss, {logits}, 1e-4);
  INFO("max rel err " << rep.max_rel_err);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("too-short input is rejected with the required minimum") {
  Rng rng(17);
  Mat lp = random_log_probs(2, 2, &rng);
  // "aa" needs 3 frames (repeat inserts a blank).
  CHECK(ctc_min_frames({1, 1}) == 3);
  CHECK_THROWS_AS(ctc_forward_backward(lp, {1, 1}), ValidationError);
  CHECK_THROWS_AS(ctc_forward_backward(lp, {1, 2, 1}), ValidationError);
  CHECK_THROWS_AS(ctc_forward_backward(lp, {5}), ValidationError);  // out of vocab
}

TEST_CASE("greedy decode collapses repeats and drops blanks") {
  auto logits_for = [](const std::vector<int>& argmaxes, int vocab) {
    Mat lp = Mat::Constant(static_cast<Index>(argmaxes.size()), vocab + 1, -10.0);
    for (std::size_t t = 0; t < argmaxes.size(); ++t)
      lp(static_cast<Index>(t), argmaxes[t]) = -0.1;
    return lp;
  };
  CHECK(greedy_decode(logits_for({1, 1, 0, 2}, 2)) == std::vector<int>{1, 2});
  CHECK(greedy_decode(logits_for({0, 0, 0}, 2)).empty());
  CHECK(greedy_decode(logits_for({1, 0, 1}, 2)) == std::vector<int>{1, 1});
}

TEST_CASE("greedy decode is invariant under per-frame monotone transforms") {
  Rng rng(19);
  for (int trial = 0; trial < 40; ++trial) {
    Mat lp = random_log_probs(6, 3, &rng);
    Mat warped = lp;
    for (Index t = 0; t < warped.rows(); ++t) {
      const double scale_factor = rng.uniform(0.5, 3.0);
      const double shift = rng.uniform(-2.0, 2.0);
      warped.row(t) = scale_factor * warped.row(t) +
                      Mat::Constant(1, warped.cols(), shift);
    }
    CHECK(greedy_decode(lp) == greedy_decode(warped));
  }
}

TEST_CASE("greedy decode breaks argmax ties toward the lowest symbol") {
  Mat lp(1, 3);
  lp << -1.0, -0.5, -0.5;  // symbols 1 and 2 tie
  CHECK(greedy_decode(lp) == std::vector<int>{1});
}
