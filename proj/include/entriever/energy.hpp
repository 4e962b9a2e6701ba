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

#ifndef ENTRIEVER_ENERGY_HPP
#define ENTRIEVER_ENERGY_HPP

#include <entriever/candidates.hpp>
#include <entriever/common.hpp>
#include <entriever/corpus.hpp>
#include <entriever/proposal.hpp>
#include <entriever/scorer.hpp>

#include <memory>
#include <optional>
#include <vector>

/**
 * \file
 * \brief Subset energy U(c, u, xi) and the non-residual / residual unnormalized log-probabilities.
 *
 * The scored sequence is `c SEP u SEP xi` where xi is the selected pieces in KB order joined by SEP.
 * The energy is the negated scalar head of a sum-pooled encoder, so lower energy means a more
 * probable subset. In residual mode the log-score adds the frozen reference retriever's subset
 * log-probability.
 */

namespace entriever {

enum class EnergyForm { kNonResidual, kResidual };

inline const char* to_string(EnergyForm form) {
  return form == EnergyForm::kResidual ? "residual" : "nonresidual";
}

class EnergyMode {
 public:
  static EnergyMode non_residual() { return EnergyMode(EnergyForm::kNonResidual, nullptr); }

  static EnergyMode residual(std::shared_ptr<const FactoredRetriever> reference) {
    if (!reference) {
      throw Error(ErrorKind::kMode, "residual energy requires a reference retriever");
    }
    return EnergyMode(EnergyForm::kResidual, std::move(reference));
  }

  [[nodiscard]] EnergyForm form() const noexcept { return form_; }
  [[nodiscard]] bool is_residual() const noexcept { return form_ == EnergyForm::kResidual; }
  [[nodiscard]] const FactoredRetriever& reference() const { return *reference_; }
  [[nodiscard]] const std::shared_ptr<const FactoredRetriever>& reference_ptr() const { return reference_; }

 private:
  EnergyMode(EnergyForm form, std::shared_ptr<const FactoredRetriever> reference)
      : form_(form), reference_(std::move(reference)) {}

  EnergyForm form_ = EnergyForm::kNonResidual;
  std::shared_ptr<const FactoredRetriever> reference_;
};

class EnergyModel {
 public:
  EnergyModel() : mode_(EnergyMode::non_residual()) {}

  EnergyModel(std::size_t vocab, RetrieverShape shape, EnergyMode mode)
      : scorer_(ScorerShape{vocab, shape.d_emb, shape.hidden}), mode_(std::move(mode)) {}

  [[nodiscard]] PooledScorer& scorer() noexcept { return scorer_; }
  [[nodiscard]] const PooledScorer& scorer() const noexcept { return scorer_; }
  [[nodiscard]] const EnergyMode& mode() const noexcept { return mode_; }
  [[nodiscard]] std::size_t num_params() const noexcept { return scorer_.num_params(); }

 private:
  PooledScorer scorer_;
  EnergyMode mode_;
};

inline EnergyModel init_energy(std::size_t vocab, RetrieverShape shape, EnergyMode mode, std::uint64_t seed) {
  EnergyModel model(vocab, shape, std::move(mode));
  auto rng = derive_rng(seed, {0xe4e2ULL});
  model.scorer().init_uniform(rng);
  return model;
}

/// Serialized `c SEP u SEP xi` as token spans; xi pieces in KB order separated by SEP.
inline TokenSpans energy_spans(const TurnExample& turn, const SubsetMask& mask) {
  TokenSpans spans{turn.context, kSepArray, turn.user, kSepArray};
  if (mask.empty()) {
    return spans;
  }
  if (!turn.kb || mask.width() != turn.kb->size()) {
    throw Error(ErrorKind::kDimension, "mask width does not match the turn's knowledge base");
  }
  bool first = true;
  for (std::size_t i = 0; i < mask.width(); ++i) {
    if (!mask.test(i)) {
      continue;
    }
    if (!first) {
      spans.push_back(kSepArray);
    }
    spans.push_back(turn.kb->texts[i]);
    first = false;
  }
  return spans;
}

/**
 * Per-turn scoring cache: pooled context, per-piece pooled sums and, in residual mode, the
 * reference probabilities. Scoring a mask costs O(N d + h d).
 */
class TurnEnergy {
 public:
  TurnEnergy(const EnergyModel& model, const TurnExample& turn) : model_(&model), turn_(&turn) {
    const auto& scorer = model.scorer();
    const std::size_t d = scorer.shape().d_emb;
    if (model.mode().is_residual()) {
      if (!turn.kb) {
        throw Error(ErrorKind::kMode, "residual energy needs the knowledge base of turn " + turn.session_id +
                                          "/" + std::to_string(turn.turn_index));
      }
      reference_ = model.mode().reference().piece_probs(turn);
    }
    base_ = scorer.pool({turn.context, kSepArray, turn.user, kSepArray});
    sep_ = std::vector<double>(scorer.embedding(kSep).begin(), scorer.embedding(kSep).end());
    const std::size_t n = turn.num_pieces();
    piece_sums_.assign(n, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      scorer.accumulate(turn.kb->texts[i], piece_sums_[i]);
    }
    hidden_.resize(scorer.shape().hidden);
    pooled_.resize(d);
  }

  [[nodiscard]] std::size_t num_pieces() const noexcept { return piece_sums_.size(); }
  [[nodiscard]] const TurnExample& turn() const noexcept { return *turn_; }
  [[nodiscard]] const std::optional<PieceProbs>& reference() const noexcept { return reference_; }

  /// U(c, u, xi)
  double energy(const SubsetMask& mask) {
    pool_mask(mask);
    return -model_->scorer().head(pooled_, hidden_);
  }

  /// Non-residual: -U. Residual: log p_ref(xi) - U.
  double unnorm_logp(const SubsetMask& mask) {
    const double u = energy(mask);
    if (reference_) {
      return subset_logprob(mask, *reference_) - u;
    }
    return -u;
  }

  /// grad += scale * dU/dtheta at `mask`.
  void accumulate_energy_grad(const SubsetMask& mask, double scale, std::span<double> grad) {
    const auto& scorer = model_->scorer();
    pool_mask(mask);
    scorer.head(pooled_, hidden_);
    std::vector<double> d_pooled(pooled_.size());
    scorer.head_backward(pooled_, hidden_, -scale, grad, d_pooled);
    for (auto s : energy_spans(*turn_, mask)) {
      scorer.scatter(s, d_pooled, grad);
    }
  }

 private:
  void pool_mask(const SubsetMask& mask) {
    if (mask.width() != num_pieces()) {
      throw Error(ErrorKind::kDimension, "mask width " + std::to_string(mask.width()) +
                                             " does not match knowledge base of size " +
                                             std::to_string(num_pieces()));
    }
    pooled_ = base_;
    std::size_t selected = 0;
    for (std::size_t i = 0; i < num_pieces(); ++i) {
      if (mask.test(i)) {
        axpy(1.0, piece_sums_[i], pooled_);
        ++selected;
      }
    }
    if (selected > 1) {
      axpy(static_cast<double>(selected - 1), sep_, pooled_);
    }
  }

  const EnergyModel* model_;
  const TurnExample* turn_;
  std::optional<PieceProbs> reference_;
  std::vector<double> base_;
  std::vector<double> sep_;
  std::vector<std::vector<double>> piece_sums_;
  std::vector<double> hidden_;
  std::vector<double> pooled_;
};

inline double energy(const TurnExample& turn, const SubsetMask& mask, const EnergyModel& model) {
  return TurnEnergy(model, turn).energy(mask);
}

inline double unnorm_logp(const TurnExample& turn, const SubsetMask& mask, const EnergyModel& model) {
  return TurnEnergy(model, turn).unnorm_logp(mask);
}

/// Unnormalized log-scores of all 2^N masks, indexed by mask bits.
inline std::vector<double> enumerate_unnorm_logp(TurnEnergy& scorer, std::size_t max_pieces = kMaxEnumerationPieces) {
  const std::size_t n = scorer.num_pieces();
  if (n > max_pieces) {
    throw Error(ErrorKind::kScale, "exact enumeration over " + std::to_string(n) + " pieces exceeds limit " +
                                       std::to_string(max_pieces));
  }
  std::vector<double> out(std::size_t{1} << n);
  for (std::uint64_t bits = 0; bits < out.size(); ++bits) {
    out[bits] = scorer.unnorm_logp(SubsetMask(n, bits));
  }
  return out;
}

inline double exact_log_partition(const TurnExample& turn, const EnergyModel& model) {
  TurnEnergy scorer(model, turn);
  return log_sum_exp(enumerate_unnorm_logp(scorer));
}

/// Normalized probabilities of all 2^N masks, indexed by mask bits.
inline std::vector<double> exact_distribution(const TurnExample& turn, const EnergyModel& model) {
  TurnEnergy scorer(model, turn);
  auto scores = enumerate_unnorm_logp(scorer);
  const double log_z = log_sum_exp(scores);
  for (auto& s : scores) {
    s = std::exp(s - log_z);
  }
  return scores;
}

inline double exact_prob(const TurnExample& turn, const SubsetMask& mask, const EnergyModel& model) {
  TurnEnergy scorer(model, turn);
  if (mask.width() != scorer.num_pieces()) {
    throw Error(ErrorKind::kDimension, "mask width does not match the knowledge base");
  }
  const double log_z = log_sum_exp(enumerate_unnorm_logp(scorer));
  return std::exp(scorer.unnorm_logp(mask) - log_z);
}

}  // namespace entriever

#endif
