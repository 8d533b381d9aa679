// src/ngram.cpp
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

#include "pmsspeech/ngram.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace pms {

namespace {

using Gram = std::vector<std::string>;

constexpr double kLn10 = 2.302585092994046;
// Conventional placeholder for tokens that are contexts only (<s>).
constexpr double kNeverPredictedLog10 = -99.0;

}  // namespace

NgramLM NgramLM::train(const std::vector<std::vector<std::string>>& sentences, int order) {
  if (order < 1 || order > 4)
    throw ValidationError("NgramLM: order must lie in [1, 4], got " + std::to_string(order));
  if (sentences.empty()) throw ValidationError("NgramLM: no training sentences");

  // Raw k-gram counts over <s>-padded sentences; <s> itself is never a
  // predicted token.
  std::map<Gram, long> counts;
  for (const auto& sentence : sentences) {
    Gram padded;
    padded.push_back(kBos);
    padded.insert(padded.end(), sentence.begin(), sentence.end());
    padded.push_back(kEos);
    for (std::size_t i = 1; i < padded.size(); ++i) {
      for (int k = 1; k <= order && static_cast<std::size_t>(k) <= i + 1; ++k) {
        Gram g(padded.begin() + static_cast<long>(i) - k + 1,
               padded.begin() + static_cast<long>(i) + 1);
        ++counts[g];
      }
    }
  }

  // Per-history totals and distinct-successor counts.
  std::map<Gram, long> context_total;
  std::map<Gram, long> context_types;
  for (const auto& [gram, c] : counts) {
    Gram h(gram.begin(), gram.end() - 1);
    context_total[h] += c;
    context_types[h] += 1;
  }

  std::set<std::string> predicted;
  long unigram_total = 0;
  for (const auto& [gram, c] : counts) {
    if (gram.size() == 1) {
      predicted.insert(gram[0]);
      unigram_total += c;
    }
  }
  const double t1 = static_cast<double>(predicted.size());
  const double v_all = t1 + 1.0;  // observed vocabulary plus <unk>
  const double n_total = static_cast<double>(unigram_total);

  // Interpolated Witten-Bell probability, recursing to the uniform-floored
  // unigram level.
  std::function<double(const Gram&, const std::string&)> prob =
      [&](const Gram& h, const std::string& w) -> double {
    if (h.empty()) {
      const Gram uni{w};
      const auto it = counts.find(uni);
      const double c = it == counts.end() ? 0.0 : static_cast<double>(it->second);
      return c / (n_total + t1) + (t1 / (n_total + t1)) * (1.0 / v_all);
    }
    const auto total_it = context_total.find(h);
    Gram shorter(h.begin() + 1, h.end());
    if (total_it == context_total.end()) return prob(shorter, w);
    const double c_h = static_cast<double>(total_it->second);
    const double t_h = static_cast<double>(context_types.at(h));
    Gram hw = h;
    hw.push_back(w);
    const auto it = counts.find(hw);
    const double c_hw = it == counts.end() ? 0.0 : static_cast<double>(it->second);
    return (c_hw + t_h * prob(shorter, w)) / (c_h + t_h);
  };

  NgramLM lm;
  lm.order_ = order;
  lm.unk_logp_ = std::log((t1 / (n_total + t1)) * (1.0 / v_all));
  for (const std::string& w : predicted)
    if (w != kEos) lm.vocab_.push_back(w);

  for (const auto& [gram, c] : counts) {
    (void)c;
    Gram h(gram.begin(), gram.end() - 1);
    Entry& e = lm.table_[gram];
    e.logp = std::log(prob(h, gram.back()));
  }
  // <s> exists only as a context; give it the conventional placeholder.
  lm.table_[{kBos}].logp = kNeverPredictedLog10 * kLn10;

  // Backoff weight: for interpolated Witten-Bell the mass identity collapses
  // to bow(h) = T(h) / (c(h) + T(h)).
  for (const auto& [h, total] : context_total) {
    if (static_cast<int>(h.size()) >= order) continue;
    const double t_h = static_cast<double>(context_types.at(h));
    Entry& e = lm.table_[h];
    e.bow = std::log(t_h / (static_cast<double>(total) + t_h));
    e.has_bow = true;
  }
  return lm;
}

double NgramLM::log_prob(const std::vector<std::string>& context,
                         const std::string& word) const {
  Gram h;
  const std::size_t keep =
      std::min(context.size(), static_cast<std::size_t>(order_ > 0 ? order_ - 1 : 0));
  h.assign(context.end() - static_cast<long>(keep), context.end());
  double backoff = 0.0;
  while (true) {
    Gram hw = h;
    hw.push_back(word);
    const auto it = table_.find(hw);
    if (it != table_.end()) return backoff + it->second.logp;
    if (h.empty()) return backoff + unk_logp_;
    const auto ctx = table_.find(h);
    if (ctx != table_.end() && ctx->second.has_bow) backoff += ctx->second.bow;
    h.erase(h.begin());
  }
}

double NgramLM::sentence_log_prob(const std::vector<std::string>& words) const {
  Gram context{kBos};
  double total = 0.0;
  for (const std::string& w : words) {
    total += log_prob(context, w);
    context.push_back(w);
  }
  total += log_prob(context, kEos);
  return total;
}

void NgramLM::save_arpa(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw StageError("cannot write ARPA file: " + path);
  std::map<int, long> per_order;
  for (const auto& [gram, e] : table_) per_order[static_cast<int>(gram.size())] += 1;

  out << "\\data\\\n";
  for (int k = 1; k <= order_; ++k) out << "ngram " << k << "=" << per_order[k] << "\n";
  out << "\n";
  out.setf(std::ios::fixed);
  out.precision(7);
  for (int k = 1; k <= order_; ++k) {
    out << "\\" << k << "-grams:\n";
    for (const auto& [gram, e] : table_) {
      if (static_cast<int>(gram.size()) != k) continue;
      out << e.logp / kLn10;
      for (const std::string& w : gram) out << ' ' << w;
      if (e.has_bow) out << '\t' << e.bow / kLn10;
      out << '\n';
    }
    out << "\n";
  }
  out << "unk " << unk_logp_ / kLn10 << "\n";
  out << "\\end\\\n";
  if (!out) throw StageError("short write to ARPA file: " + path);
}

NgramLM NgramLM::load_arpa(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open ARPA file: " + path);
  NgramLM lm;
  std::string line;
  int section = 0;  // current k while inside a \k-grams: block
  std::set<std::string> vocab;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "\\data\\" || line == "\\end\\") {
      section = 0;
      continue;
    }
    if (line.rfind("ngram ", 0) == 0) continue;
    if (line.size() > 2 && line[0] == '\\' && line.find("-grams:") != std::string::npos) {
      section = std::stoi(line.substr(1));
      lm.order_ = std::max(lm.order_, section);
      continue;
    }
    if (line.rfind("unk ", 0) == 0) {
      lm.unk_logp_ = std::stod(line.substr(4)) * kLn10;
      continue;
    }
    if (section == 0) continue;
    // "<log10 p> w1 .. wk [<log10 bow>]" with the bow tab-separated.
    std::string head = line;
    std::string bow_part;
    const std::size_t tab = line.find('\t');
    if (tab != std::string::npos) {
      head = line.substr(0, tab);
      bow_part = line.substr(tab + 1);
    }
    std::istringstream hs(head);
    double logp10;
    hs >> logp10;
    Gram gram;
    std::string tok;
    while (hs >> tok) gram.push_back(tok);
    if (static_cast<int>(gram.size()) != section)
      throw ValidationError("ARPA: " + std::to_string(gram.size()) + "-gram in the " +
                            std::to_string(section) + "-gram section of " + path);
    Entry e;
    e.logp = logp10 * kLn10;
    if (!bow_part.empty()) {
      e.bow = std::stod(bow_part) * kLn10;
      e.has_bow = true;
    }
    if (section == 1 && gram[0] != kBos && gram[0] != kEos) vocab.insert(gram[0]);
    lm.table_[gram] = e;
  }
  if (lm.order_ == 0) throw ValidationError("ARPA file has no n-gram sections: " + path);
  lm.vocab_.assign(vocab.begin(), vocab.end());
  return lm;
}

}  // namespace pms
