// Copyright 2026 The Entriever Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ENTRIEVER_METRICS_HPP
#define ENTRIEVER_METRICS_HPP

#include <entriever/common.hpp>
#include <entriever/corpus.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

/**
 * \file
 * \brief Retrieval metrics (joint accuracy, Inform, micro P/R/F1) and generation metrics (BLEU-4, Success, Combined).
 */

namespace entriever {

namespace detail {

inline void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorKind::kDimension, std::string(what) + ": " + std::to_string(a) + " predictions for " +
                                           std::to_string(b) + " references");
  }
}

}  // namespace detail

/// Fraction of turns whose predicted mask equals the gold mask bit for bit.
inline double joint_acc(const std::vector<SubsetMask>& pred, const std::vector<SubsetMask>& gold) {
  detail::require_aligned(pred.size(), gold.size(), "joint_acc");
  if (pred.empty()) {
    return 0.0;
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    hits += pred[i] == gold[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/**
 * Fraction of sessions in which every turn's gold pieces are all retrieved at that turn.
 * `session_ids[i]` names the session of turn i.
 */
inline double inform(const std::vector<SubsetMask>& pred, const std::vector<SubsetMask>& gold,
                     const std::vector<std::string>& session_ids) {
  detail::require_aligned(pred.size(), gold.size(), "inform");
  detail::require_aligned(session_ids.size(), gold.size(), "inform sessions");
  std::map<std::string, bool> covered;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    detail::require_aligned(pred[i].width(), gold[i].width(), "inform mask width");
    auto [it, inserted] = covered.emplace(session_ids[i], true);
    it->second = it->second && gold[i].subset_of(pred[i]);
  }
  if (covered.empty()) {
    return 0.0;
  }
  std::size_t ok = 0;
  for (const auto& [id, c] : covered) {
    ok += c ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(covered.size());
}

struct PRF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Micro-averaged over all (turn, piece) decisions. Empty denominators give 0.
inline PRF1 prf1(const std::vector<SubsetMask>& pred, const std::vector<SubsetMask>& gold) {
  detail::require_aligned(pred.size(), gold.size(), "prf1");
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    detail::require_aligned(pred[i].width(), gold[i].width(), "prf1 mask width");
    const auto p = pred[i].bits();
    const auto g = gold[i].bits();
    tp += static_cast<std::size_t>(std::popcount(p & g));
    fp += static_cast<std::size_t>(std::popcount(p & ~g));
    fn += static_cast<std::size_t>(std::popcount(~p & g));
  }
  PRF1 out;
  out.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  out.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  out.f1 = out.precision + out.recall == 0.0 ? 0.0
                                             : 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

using Sentence = std::vector<std::string>;

/**
 * Corpus-level BLEU-4 with uniform weights and the standard brevity penalty. For n >= 2 a zero
 * clipped match count is replaced by add-one smoothing, (0 + 1) / (total + 1).
 */
inline double bleu4(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references) {
  detail::require_aligned(hypotheses.size(), references.size(), "bleu4");
  if (hypotheses.empty()) {
    throw Error(ErrorKind::kData, "BLEU needs a non-empty corpus");
  }
  constexpr std::size_t kOrder = 4;
  std::array<double, kOrder> matches{};
  std::array<double, kOrder> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    hyp_len += hyp.size();
    ref_len += ref.size();
    for (std::size_t n = 1; n <= kOrder; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) {
        ++ref_counts[std::vector<std::string>(ref.begin() + static_cast<std::ptrdiff_t>(i),
                                              ref.begin() + static_cast<std::ptrdiff_t>(i + n))];
      }
      std::map<std::vector<std::string>, std::size_t> hyp_counts;
      for (std::size_t i = 0; i + n <= hyp.size(); ++i) {
        ++hyp_counts[std::vector<std::string>(hyp.begin() + static_cast<std::ptrdiff_t>(i),
                                              hyp.begin() + static_cast<std::ptrdiff_t>(i + n))];
      }
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        matches[n - 1] += static_cast<double>(std::min(count, it == ref_counts.end() ? 0 : it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }
  if (matches[0] == 0.0) {
    return 0.0;
  }
  double log_precision = 0.0;
  for (std::size_t n = 0; n < kOrder; ++n) {
    const double p = matches[n] == 0.0 ? 1.0 / (totals[n] + 1.0) : matches[n] / totals[n];
    log_precision += std::log(p) / static_cast<double>(kOrder);
  }
  const double c = static_cast<double>(hyp_len);
  const double r = static_cast<double>(ref_len);
  const double log_bp = c > r ? 0.0 : 1.0 - r / c;
  return std::exp(log_bp + log_precision);
}

/// True iff `needle` occurs as a contiguous token run in `haystack`.
inline bool contains_tokens(const Sentence& haystack, const Sentence& needle) {
  if (needle.empty()) {
    return true;
  }
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

/**
 * Fraction of sessions whose generated responses mention every requested value (as a token run in
 * some response of that session). Sessions with no requested values are skipped.
 */
inline double success(const std::vector<std::vector<std::string>>& generated,
                      const std::vector<std::vector<std::string>>& requested) {
  detail::require_aligned(generated.size(), requested.size(), "success");
  std::size_t counted = 0;
  std::size_t ok = 0;
  for (std::size_t s = 0; s < generated.size(); ++s) {
    if (requested[s].empty()) {
      continue;
    }
    ++counted;
    std::vector<Sentence> responses;
    for (const auto& r : generated[s]) {
      responses.push_back(tokenize(r));
    }
    bool all = true;
    for (const auto& value : requested[s]) {
      const auto needle = tokenize(value);
      bool found = false;
      for (const auto& r : responses) {
        found = found || contains_tokens(r, needle);
      }
      all = all && found;
    }
    ok += all ? 1 : 0;
  }
  return counted == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(counted);
}

/// Success + 2 * BLEU, both in percentage points.
inline double combined(double success_pct, double bleu_pct) { return success_pct + 2.0 * bleu_pct; }

struct RetrievalReport {
  std::size_t turns = 0;
  std::size_t sessions = 0;
  double joint_acc = 0.0;
  double inform = 0.0;
  PRF1 prf;
};

inline RetrievalReport retrieval_report(const std::vector<SubsetMask>& pred, const std::vector<SubsetMask>& gold,
                                        const std::vector<std::string>& session_ids) {
  RetrievalReport r;
  r.turns = pred.size();
  r.sessions = std::set<std::string>(session_ids.begin(), session_ids.end()).size();
  r.joint_acc = joint_acc(pred, gold);
  r.inform = inform(pred, gold, session_ids);
  r.prf = prf1(pred, gold);
  return r;
}

inline nlohmann::ordered_json to_json(const RetrievalReport& r) {
  nlohmann::ordered_json j;
  j["turns"] = r.turns;
  j["sessions"] = r.sessions;
  j["joint_acc"] = r.joint_acc;
  j["inform"] = r.inform;
  j["precision"] = r.prf.precision;
  j["recall"] = r.prf.recall;
  j["f1"] = r.prf.f1;
  return j;
}

}  // namespace entriever

#endif
