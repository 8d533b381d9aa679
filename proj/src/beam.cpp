// src/beam.cpp
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

#include "pmsspeech/beam.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "pmsspeech/ctc.hpp"

namespace pms {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct PrefixState {
  double blank = kNegInf;      // log mass of paths ending in blank
  double non_blank = kNegInf;  // log mass of paths ending in the last symbol
  double fused = 0.0;          // w1 * lm + w2 * length, accumulated
  double total() const { return log_add(blank, non_blank); }
};

}  // namespace

BeamHypothesis beam_decode(const Mat& log_probs, const DecodeConfig& cfg,
                           const LmFusion* fusion) {
  if (cfg.beam_width < 1) throw ValidationError("beam_decode: beam width must be >= 1");
  if (log_probs.cols() < 2)
    throw ValidationError("beam_decode: need blank plus at least one symbol");
  const int vocab = static_cast<int>(log_probs.cols()) - 1;
  if (fusion && fusion->lm &&
      static_cast<int>(fusion->symbol_tokens.size()) != vocab + 1)
    throw ValidationError("beam_decode: fusion table needs one token per symbol");

  using Beams = std::map<std::vector<int>, PrefixState>;
  Beams beams;
  beams[{}].blank = 0.0;  // empty prefix, all mass on "nothing emitted yet"

  auto fused_extension = [&](const std::vector<int>& prefix, int symbol) {
    double add = cfg.length_bonus;
    if (fusion && fusion->lm) {
      std::vector<std::string> context;
      context.reserve(prefix.size() + 1);
      context.push_back(NgramLM::kBos);
      for (int s : prefix)
        context.push_back(fusion->symbol_tokens[static_cast<std::size_t>(s)]);
      add += cfg.lm_weight *
             fusion->lm->log_prob(context,
                                  fusion->symbol_tokens[static_cast<std::size_t>(symbol)]);
    }
    return add;
  };

  for (Index t = 0; t < log_probs.rows(); ++t) {
    Beams next;
    for (const auto& [prefix, state] : beams) {
      // Emit blank: the prefix is unchanged.
      {
        PrefixState& n = next[prefix];
        n.fused = state.fused;
        n.blank = log_add(n.blank, state.total() + log_probs(t, 0));
      }
      // Repeat the trailing symbol: collapses into the same prefix.
      if (!prefix.empty()) {
        PrefixState& n = next[prefix];
        n.fused = state.fused;
        n.non_blank =
            log_add(n.non_blank, state.non_blank + log_probs(t, prefix.back()));
      }
      // Extend with every symbol.
      for (int s = 1; s <= vocab; ++s) {
        // A repeated symbol needs a blank in between, so only the blank mass
        // extends; distinct symbols extend from both masses.
        const double source = (!prefix.empty() && prefix.back() == s)
                                  ? state.blank
                                  : state.total();
        if (source == kNegInf) continue;
        std::vector<int> extended = prefix;
        extended.push_back(s);
        const auto it = next.find(extended);
        if (it == next.end()) {
          PrefixState n;
          n.fused = state.fused + fused_extension(prefix, s);
          n.non_blank = source + log_probs(t, s);
          next.emplace(std::move(extended), n);
        } else {
          it->second.non_blank =
              log_add(it->second.non_blank, source + log_probs(t, s));
        }
      }
    }

    // Prune to the beam width; ties break toward the smaller prefix (the
    // map iterates prefixes in lexicographic order already).
    if (static_cast<int>(next.size()) > cfg.beam_width) {
      std::vector<std::pair<double, const std::vector<int>*>> ranked;
      ranked.reserve(next.size());
      for (const auto& [prefix, state] : next)
        ranked.emplace_back(state.total() + state.fused, &prefix);
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      Beams pruned;
      for (int i = 0; i < cfg.beam_width; ++i)
        pruned.emplace(*ranked[static_cast<std::size_t>(i)].second,
                       next.at(*ranked[static_cast<std::size_t>(i)].second));
      next = std::move(pruned);
    }
    beams = std::move(next);
  }

  BeamHypothesis best;
  double best_score = kNegInf;
  for (const auto& [prefix, state] : beams) {
    const double score = state.total() + state.fused;
    if (score > best_score) {  // map order makes ties pick the smaller prefix
      best_score = score;
      best.symbols = prefix;
    }
  }
  best.score = best_score;
  return best;
}

}  // namespace pms
