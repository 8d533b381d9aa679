// include/pmsspeech/wer.hpp
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

#ifndef PMSSPEECH_WER_HPP_
#define PMSSPEECH_WER_HPP_

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace pms {

struct EditCounts {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  int distance() const { return substitutions + insertions + deletions; }
};

// Unit-cost Levenshtein alignment with a deterministic backtrace (match or
// substitution preferred, then deletion, then insertion).
template <typename Token>
EditCounts edit_align(const std::vector<Token>& ref, const std::vector<Token>& hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::vector<int>> dp(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) dp[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) dp[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = dp[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const int del = dp[i - 1][j] + 1;
      const int ins = dp[i][j - 1] + 1;
      dp[i][j] = std::min(sub, std::min(del, ins));
    }

  EditCounts counts;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        dp[i][j] == dp[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (!(ref[i - 1] == hyp[j - 1])) ++counts.substitutions;
      --i;
      --j;
    } else if (i > 0 && dp[i][j] == dp[i - 1][j] + 1) {
      ++counts.deletions;
      --i;
    } else {
      ++counts.insertions;
      --j;
    }
  }
  return counts;
}

struct WerReport {
  EditCounts counts;
  double wer = 0.0;
  // False when the reference is empty: the rate is undefined and the counts
  // degrade to an insertions-only diagnostic.
  bool defined = true;
};

template <typename Token>
WerReport word_error_rate(const std::vector<Token>& ref, const std::vector<Token>& hyp) {
  WerReport report;
  if (ref.empty()) {
    report.defined = false;
    report.counts.insertions = static_cast<int>(hyp.size());
    report.wer = std::numeric_limits<double>::quiet_NaN();
    return report;
  }
  report.counts = edit_align(ref, hyp);
  report.wer = static_cast<double>(report.counts.distance()) /
               static_cast<double>(ref.size());
  return report;
}

// Whitespace tokenizer for transcript lines.
std::vector<std::string> split_tokens(const std::string& text);

}  // namespace pms

#endif  // PMSSPEECH_WER_HPP_
