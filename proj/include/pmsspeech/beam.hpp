// include/pmsspeech/beam.hpp
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

#ifndef PMSSPEECH_BEAM_HPP_
#define PMSSPEECH_BEAM_HPP_

#include <string>
#include <vector>

#include "pmsspeech/ngram.hpp"
#include "pmsspeech/types.hpp"

namespace pms {

struct DecodeConfig {
  int beam_width = 8;
  double lm_weight = 0.0;     // w1
  double length_bonus = 0.0;  // w2
};

// Shallow-fusion context: maps CTC symbol ids (1-based) to LM tokens.
struct LmFusion {
  const NgramLM* lm = nullptr;
  std::vector<std::string> symbol_tokens;  // index 0 unused (blank)
};

struct BeamHypothesis {
  std::vector<int> symbols;
  double score = 0.0;  // log p_ctc + w1 * log p_lm + w2 * |y|
};

// CTC prefix beam search maintaining blank/non-blank log masses per prefix.
// Each symbol extension adds w1 * logP_LM + w2; ties break toward the
// lexicographically smaller prefix.
BeamHypothesis beam_decode(const Mat& log_probs, const DecodeConfig& cfg,
                           const LmFusion* fusion = nullptr);

}  // namespace pms

#endif  // PMSSPEECH_BEAM_HPP_
