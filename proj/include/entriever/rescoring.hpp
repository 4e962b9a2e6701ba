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

#ifndef ENTRIEVER_RESCORING_HPP
#define ENTRIEVER_RESCORING_HPP

#include <entriever/candidates.hpp>
#include <entriever/energy.hpp>
#include <entriever/proposal.hpp>

#include <vector>

namespace entriever {

inline constexpr std::size_t kDefaultTopK = 16;

/// Descending energy score, then descending proposal log-probability, then lexicographic mask.
inline bool rescored_before(const Candidate& a, const Candidate& b) {
  const double ea = a.energy_score.value_or(-std::numeric_limits<double>::infinity());
  const double eb = b.energy_score.value_or(-std::numeric_limits<double>::infinity());
  if (ea != eb) {
    return ea > eb;
  }
  return candidate_before(a, b);
}

struct Retrieval {
  SubsetMask mask;
  std::vector<Candidate> ranked;
};

/// Top-K proposal candidates re-ranked by the energy model's unnormalized log-score.
inline Retrieval rescore_retrieve(const TurnExample& turn, const FactoredRetriever& proposal,
                                  const EnergyModel& model, std::size_t k = kDefaultTopK) {
  auto candidates = top_k_subsets(proposal.piece_probs(turn), k);
  TurnEnergy scorer(model, turn);
  for (auto& c : candidates) {
    c.energy_score = scorer.unnorm_logp(c.mask);
  }
  std::stable_sort(candidates.begin(), candidates.end(), rescored_before);
  Retrieval out{candidates.front().mask, std::move(candidates)};
  return out;
}

/// Proposal-only decoding: the factored mode, equal to the top-1 candidate.
inline SubsetMask proposal_retrieve(const TurnExample& turn, const FactoredRetriever& proposal) {
  return top_k_subsets(proposal.piece_probs(turn), 1).front().mask;
}

/// Exact argmax of the unnormalized log-score over all 2^N masks; ties to the lexicographically smaller.
inline SubsetMask oracle_retrieve(const TurnExample& turn, const EnergyModel& model) {
  TurnEnergy scorer(model, turn);
  const auto scores = enumerate_unnorm_logp(scorer);
  const std::size_t n = scorer.num_pieces();
  SubsetMask best(n, 0);
  double best_score = scores[0];
  for (std::uint64_t bits = 1; bits < scores.size(); ++bits) {
    SubsetMask m(n, bits);
    if (scores[bits] > best_score || (scores[bits] == best_score && lex_less(m, best))) {
      best = m;
      best_score = scores[bits];
    }
  }
  return best;
}

}  // namespace entriever

#endif
