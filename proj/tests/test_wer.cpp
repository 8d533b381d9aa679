// tests/test_wer.cpp
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
#include <string>
#include <vector>

#include "pmsspeech/rng.hpp"
#include "pmsspeech/wer.hpp"

using namespace pms;

namespace {

// Independent distance-only oracle (no backtrace, separate code path).
int oracle_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1), prev[j] + 1,
                         cur[j - 1] + 1});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<std::string> random_tokens(Rng* rng, std::size_t max_len) {
  const std::size_t len = rng->uniform_index(max_len + 1);
  std::vector<std::string> out;
  const char* alphabet = "abcde";
  for (std::size_t i = 0; i < len; ++i)
    out.push_back(std::string(1, alphabet[rng->uniform_index(5)]));
  return out;
}

}  // namespace

TEST_CASE("identical sequences have zero error") {
  const std::vector<std::string> ref{"a", "b", "c"};
  WerReport r = word_error_rate(ref, ref);
  CHECK(r.defined);
  CHECK(r.wer == 0.0);
  CHECK(r.counts.distance() == 0);
}

TEST_CASE("single substitution: a b c vs a x c") {
  WerReport r = word_error_rate<std::string>({"a", "b", "c"}, {"a", "x", "c"});
  CHECK(r.counts.substitutions == 1);
  CHECK(r.counts.insertions == 0);
  CHECK(r.counts.deletions == 0);
  CHECK(r.wer == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("empty hypothesis is all deletions") {
  WerReport r = word_error_rate<std::string>({"a", "b"}, {});
  CHECK(r.counts.deletions == 2);
  CHECK(r.wer == 1.0);
}

TEST_CASE("empty reference yields the insertions-only diagnostic") {
  WerReport r = word_error_rate<std::string>({}, {"x", "y"});
  CHECK(!r.defined);
  CHECK(std::isnan(r.wer));
  CHECK(r.counts.insertions == 2);
}

TEST_CASE("backtrace counts always sum to the oracle distance") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<std::string> ref = random_tokens(&rng, 8);
    const std::vector<std::string> hyp = random_tokens(&rng, 8);
    const EditCounts counts = edit_align(ref, hyp);
    CHECK(counts.distance() == oracle_distance(ref, hyp));
    // Structural identity: lengths reconcile through insert/delete counts.
    CHECK(static_cast<int>(ref.size()) - counts.deletions ==
          static_cast<int>(hyp.size()) - counts.insertions);
  }
}

TEST_CASE("edit_align also works over integer token sequences") {
  const EditCounts counts = edit_align<int>({1, 2, 3, 4}, {1, 3, 4, 5});
  CHECK(counts.distance() == 2);  // delete 2, insert 5
}

TEST_CASE("split_tokens splits on arbitrary whitespace") {
  CHECK(split_tokens("  a  b\tc \n") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_tokens("").empty());
}
