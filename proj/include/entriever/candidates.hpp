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

#ifndef ENTRIEVER_CANDIDATES_HPP
#define ENTRIEVER_CANDIDATES_HPP

#include <entriever/common.hpp>
#include <entriever/corpus.hpp>
#include <entriever/proposal.hpp>

#include <algorithm>
#include <optional>
#include <vector>

namespace entriever {

struct Candidate {
  SubsetMask mask;
  double proposal_logprob = 0.0;
  std::optional<double> energy_score;  ///< unnormalized log-score, filled by rescoring
};

/// Descending log-probability, ties by lexicographically smaller mask.
inline bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.proposal_logprob != b.proposal_logprob) {
    return a.proposal_logprob > b.proposal_logprob;
  }
  return lex_less(a.mask, b.mask);
}

/**
 * Top-K subsets of a factored Bernoulli distribution by beam search over the 2 x N
 * select/skip lattice. Log-probabilities are accumulated in piece order exactly as
 * subset_logprob does, so scores agree bit for bit with direct evaluation.
 */
inline std::vector<Candidate> top_k_subsets(const PieceProbs& probs, std::size_t k) {
  if (k == 0) {
    throw Error(ErrorKind::kConfig, "K must be at least 1");
  }
  const std::size_t n = probs.size();
  std::vector<Candidate> beam{Candidate{SubsetMask(n), 0.0, std::nullopt}};
  std::vector<Candidate> expanded;
  for (std::size_t i = 0; i < n; ++i) {
    expanded.clear();
    expanded.reserve(2 * beam.size());
    for (const auto& c : beam) {
      Candidate skip = c;
      skip.proposal_logprob += probs.log_not_p(i);
      expanded.push_back(skip);
      Candidate take = c;
      take.mask.set(i);
      take.proposal_logprob += probs.log_p(i);
      expanded.push_back(take);
    }
    const std::size_t keep = std::min(k, expanded.size());
    std::partial_sort(expanded.begin(), expanded.begin() + static_cast<std::ptrdiff_t>(keep), expanded.end(),
                      candidate_before);
    expanded.resize(keep);
    beam.swap(expanded);
  }
  std::sort(beam.begin(), beam.end(), candidate_before);
  return beam;
}

inline constexpr std::size_t kMaxEnumerationPieces = 16;

/// Brute-force reference for top_k_subsets; enumerates all 2^N masks.
inline std::vector<Candidate> exhaustive_top_k(const PieceProbs& probs, std::size_t k) {
  const std::size_t n = probs.size();
  if (n > kMaxEnumerationPieces) {
    throw Error(ErrorKind::kScale, "exhaustive enumeration limited to N <= 16");
  }
  if (k == 0) {
    throw Error(ErrorKind::kConfig, "K must be at least 1");
  }
  std::vector<Candidate> all;
  all.reserve(std::size_t{1} << n);
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << n); ++bits) {
    SubsetMask mask(n, bits);
    all.push_back(Candidate{mask, subset_logprob(mask, probs), std::nullopt});
  }
  std::sort(all.begin(), all.end(), candidate_before);
  all.resize(std::min(k, all.size()));
  return all;
}

}  // namespace entriever

#endif
