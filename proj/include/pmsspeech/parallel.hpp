// include/pmsspeech/parallel.hpp
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

#ifndef PMSSPEECH_PARALLEL_HPP_
#define PMSSPEECH_PARALLEL_HPP_

#include <algorithm>
#include <cstddef>
#include <future>
#include <thread>
#include <vector>

namespace pms {

inline int default_worker_count() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(hw == 0 ? 1u : hw, 4u));
}

// Runs fn(i) for i in [0, n) across `threads` workers.  Tasks must be
// independent; callers combine results afterwards in index order, which keeps
// every reduction deterministic regardless of the worker count.
template <typename Fn>
void parallel_for_ordered(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 0) threads = default_worker_count();
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::future<void>> futures;
  futures.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&fn, w, workers, n] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    }));
  }
  for (std::size_t i = 0; i < n; i += workers) fn(i);
  for (auto& f : futures) f.get();  // rethrows task exceptions
}

}  // namespace pms

#endif  // PMSSPEECH_PARALLEL_HPP_
