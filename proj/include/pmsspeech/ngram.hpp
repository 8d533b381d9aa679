// include/pmsspeech/ngram.hpp
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

#ifndef PMSSPEECH_NGRAM_HPP_
#define PMSSPEECH_NGRAM_HPP_

#include <map>
#include <string>
#include <vector>

#include "pmsspeech/types.hpp"

namespace pms {

// Backoff n-gram language model with Witten-Bell smoothing.  Stored in the
// usual ARPA arrangement: probability for seen n-grams, backoff weight per
// history; out-of-vocabulary tokens fall through to a uniform unigram floor.
// All in-memory log values are natural logs; ARPA files use log10.
class NgramLM {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kUnk = "<unk>";

  NgramLM() = default;

  static NgramLM train(const std::vector<std::vector<std::string>>& sentences, int order);

  int order() const { return order_; }
  // Observed tokens (sorted), excluding the sentinels.
  const std::vector<std::string>& vocab() const { return vocab_; }

  // log P(word | context); the context is clipped to the last order-1 tokens.
  double log_prob(const std::vector<std::string>& context, const std::string& word) const;

  // log P(w1..wn </s> | <s>), the standard sentence score.
  double sentence_log_prob(const std::vector<std::string>& words) const;

  void save_arpa(const std::string& path) const;
  static NgramLM load_arpa(const std::string& path);

  struct Entry {
    double logp = 0.0;
    double bow = 0.0;
    bool has_bow = false;
  };
  const std::map<std::vector<std::string>, Entry>& table() const { return table_; }
  double unk_log_prob() const { return unk_logp_; }

 private:
  int order_ = 0;
  std::map<std::vector<std::string>, Entry> table_;
  double unk_logp_ = -20.0;
  std::vector<std::string> vocab_;
};

}  // namespace pms

#endif  // PMSSPEECH_NGRAM_HPP_
