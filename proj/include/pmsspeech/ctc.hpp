// include/pmsspeech/ctc.hpp
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

#ifndef PMSSPEECH_CTC_HPP_
#define PMSSPEECH_CTC_HPP_

#include <vector>

#include "pmsspeech/types.hpp"

namespace pms {

// Connectionist temporal classification over per-frame log-probabilities.
// Convention throughout: log_probs is T x (V+1) with the blank symbol at
// column 0 and real symbols at columns 1..V.

struct CtcForwardResult {
  double loss = 0.0;      // -log sum over all blank-augmented alignments
  Mat grad_log_probs;     // d loss / d log_probs, same shape as the input
};

// Log-space forward/backward recursion (alpha/beta over the blank-augmented
// label sequence).  The gradient is the negated state-occupancy posterior.
CtcForwardResult ctc_forward_backward(const Mat& log_probs, const std::vector<int>& labels);

// Minimum number of frames needed to emit `labels` (length plus one extra
// frame per adjacent repeat).
int ctc_min_frames(const std::vector<int>& labels);

// Throws ValidationError when labels are out of vocabulary range or the
// sequence is too long for the frame count.
void validate_ctc_instance(const Mat& log_probs, const std::vector<int>& labels);

// Per-frame argmax, collapse repeats, drop blanks.  Argmax ties take the
// lowest symbol index.
std::vector<int> greedy_decode(const Mat& log_probs);

// log(exp(a) + exp(b)) guarded against -inf operands.
double log_add(double a, double b);

}  // namespace pms

#endif  // PMSSPEECH_CTC_HPP_
