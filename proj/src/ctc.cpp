// src/ctc.cpp
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

#include "pmsspeech/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pms {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

int ctc_min_frames(const std::vector<int>& labels) {
  int repeats = 0;
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++repeats;
  return static_cast<int>(labels.size()) + repeats;
}

void validate_ctc_instance(const Mat& log_probs, const std::vector<int>& labels) {
  if (log_probs.cols() < 2)
    throw ValidationError("ctc: log_probs needs at least blank plus one symbol, got " +
                          shape_string(log_probs));
  const int vocab = static_cast<int>(log_probs.cols()) - 1;
  for (int l : labels)
    if (l < 1 || l > vocab)
      throw ValidationError("ctc: label " + std::to_string(l) +
                            " outside vocabulary range [1, " + std::to_string(vocab) + "]");
  const int min_t = ctc_min_frames(labels);
  if (log_probs.rows() < min_t)
    throw ValidationError("ctc: label sequence needs at least " + std::to_string(min_t) +
                          " frames, got " + std::to_string(log_probs.rows()));
}

CtcForwardResult ctc_forward_backward(const Mat& log_probs, const std::vector<int>& labels) {
  validate_ctc_instance(log_probs, labels);
  const Index t_len = log_probs.rows();
  const Index s_len = 2 * static_cast<Index>(labels.size()) + 1;

  // Blank-augmented label sequence: blank, l1, blank, l2, ..., blank.
  std::vector<int> aug(static_cast<std::size_t>(s_len), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) aug[2 * i + 1] = labels[i];

  auto allows_skip = [&](Index s) {
    // Transition s-2 -> s skipping the blank between two distinct symbols.
    return s >= 2 && aug[static_cast<std::size_t>(s)] != 0 &&
           aug[static_cast<std::size_t>(s)] != aug[static_cast<std::size_t>(s - 2)];
  };

  Mat alpha = Mat::Constant(t_len, s_len, kNegInf);
  alpha(0, 0) = log_probs(0, aug[0]);
  if (s_len > 1) alpha(0, 1) = log_probs(0, aug[1]);
  for (Index t = 1; t < t_len; ++t) {
    for (Index s = 0; s < s_len; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (allows_skip(s)) acc = log_add(acc, alpha(t - 1, s - 2));
      if (acc != kNegInf) alpha(t, s) = acc + log_probs(t, aug[static_cast<std::size_t>(s)]);
    }
  }

  double log_p = alpha(t_len - 1, s_len - 1);
  if (s_len > 1) log_p = log_add(log_p, alpha(t_len - 1, s_len - 2));
  if (log_p == kNegInf)
    throw ValidationError("ctc: label sequence has zero probability under the input");

  // beta(t, s): log-prob of completing the sequence from state s after frame
  // t, excluding frame t's emission.  alpha + beta then counts every frame
  // emission exactly once.
  Mat beta = Mat::Constant(t_len, s_len, kNegInf);
  beta(t_len - 1, s_len - 1) = 0.0;
  if (s_len > 1) beta(t_len - 1, s_len - 2) = 0.0;
  for (Index t = t_len - 2; t >= 0; --t) {
    for (Index s = 0; s < s_len; ++s) {
      double acc = beta(t + 1, s) == kNegInf
                       ? kNegInf
                       : beta(t + 1, s) + log_probs(t + 1, aug[static_cast<std::size_t>(s)]);
      if (s + 1 < s_len && beta(t + 1, s + 1) != kNegInf)
        acc = log_add(acc, beta(t + 1, s + 1) +
                               log_probs(t + 1, aug[static_cast<std::size_t>(s + 1)]));
      if (s + 2 < s_len && allows_skip(s + 2) && beta(t + 1, s + 2) != kNegInf)
        acc = log_add(acc, beta(t + 1, s + 2) +
                               log_probs(t + 1, aug[static_cast<std::size_t>(s + 2)]));
      beta(t, s) = acc;
    }
  }

  CtcForwardResult res;
  res.loss = -log_p;
  res.grad_log_probs = Mat::Zero(t_len, log_probs.cols());
  for (Index t = 0; t < t_len; ++t) {
    for (Index s = 0; s < s_len; ++s) {
      const double joint = alpha(t, s) + beta(t, s);
      if (joint == kNegInf || std::isnan(joint)) continue;
      res.grad_log_probs(t, aug[static_cast<std::size_t>(s)]) -= std::exp(joint - log_p);
    }
  }
  return res;
}

std::vector<int> greedy_decode(const Mat& log_probs) {
  std::vector<int> out;
  int prev = 0;
  for (Index t = 0; t < log_probs.rows(); ++t) {
    int best = 0;
    for (Index k = 1; k < log_probs.cols(); ++k)
      if (log_probs(t, k) > log_probs(t, best)) best = static_cast<int>(k);
    if (best != 0 && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace pms
