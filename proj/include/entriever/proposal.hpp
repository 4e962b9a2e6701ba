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

#ifndef ENTRIEVER_PROPOSAL_HPP
#define ENTRIEVER_PROPOSAL_HPP

#include <entriever/common.hpp>
#include <entriever/corpus.hpp>
#include <entriever/scorer.hpp>

#include <numeric>
#include <span>
#include <vector>

/**
 * \file
 * \brief Factored Bernoulli retriever: one independent relevance probability per knowledge piece.
 *
 * The same family serves as the proposal/reference retriever (input `c SEP u SEP piece`) and as the
 * subset inference model, which additionally pools the response (`c SEP u SEP r SEP piece`).
 */

namespace entriever {

/// Per-piece probabilities, clamped to [1e-6, 1-1e-6], with cached logs.
class PieceProbs {
 public:
  PieceProbs() = default;

  explicit PieceProbs(std::vector<double> probs) : probs_(std::move(probs)) {
    for (auto& p : probs_) {
      p = clamp_prob(p);
    }
    log_p_.resize(probs_.size());
    log_not_p_.resize(probs_.size());
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      log_p_[i] = std::log(probs_[i]);
      log_not_p_[i] = std::log(1.0 - probs_[i]);
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return probs_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return probs_[i]; }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return probs_; }
  [[nodiscard]] double log_p(std::size_t i) const { return log_p_[i]; }
  [[nodiscard]] double log_not_p(std::size_t i) const { return log_not_p_[i]; }

 private:
  std::vector<double> probs_;
  std::vector<double> log_p_;
  std::vector<double> log_not_p_;
};

/// Sum over pieces, in index order, of log p_i (selected) or log(1-p_i) (not selected).
inline double subset_logprob(const SubsetMask& mask, const PieceProbs& probs) {
  if (mask.width() != probs.size()) {
    throw Error(ErrorKind::kDimension, "mask width " + std::to_string(mask.width()) + " != " +
                                           std::to_string(probs.size()) + " piece probabilities");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    total += mask.test(i) ? probs.log_p(i) : probs.log_not_p(i);
  }
  return total;
}

inline SubsetMask threshold_decode(const PieceProbs& probs, double tau = 0.5) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw Error(ErrorKind::kConfig, "decode threshold must lie in [0,1]");
  }
  SubsetMask mask(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > tau) {
      mask.set(i);
    }
  }
  return mask;
}

/// One uniform draw per piece, in index order.
inline SubsetMask sample_subset(const PieceProbs& probs, Rng& rng) {
  SubsetMask mask(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (uniform01(rng) < probs[i]) {
      mask.set(i);
    }
  }
  return mask;
}

struct RetrieverShape {
  std::size_t d_emb = 32;
  std::size_t hidden = 32;
};

class FactoredRetriever {
 public:
  FactoredRetriever() = default;

  FactoredRetriever(std::size_t vocab, RetrieverShape shape, bool uses_response)
      : scorer_(ScorerShape{vocab, shape.d_emb, shape.hidden}), uses_response_(uses_response) {}

  [[nodiscard]] bool uses_response() const noexcept { return uses_response_; }
  [[nodiscard]] PooledScorer& scorer() noexcept { return scorer_; }
  [[nodiscard]] const PooledScorer& scorer() const noexcept { return scorer_; }
  [[nodiscard]] std::size_t num_params() const noexcept { return scorer_.num_params(); }

  /// Spans shared by every piece of a turn: c SEP u SEP [r SEP].
  [[nodiscard]] TokenSpans turn_spans(const TurnExample& turn) const {
    TokenSpans spans{turn.context, kSepArray, turn.user, kSepArray};
    if (uses_response_) {
      spans.push_back(turn.response);
      spans.push_back(kSepArray);
    }
    return spans;
  }

  [[nodiscard]] TokenSpans piece_spans(const TurnExample& turn, std::size_t i) const {
    auto spans = turn_spans(turn);
    spans.push_back(piece_text(turn, i));
    return spans;
  }

  [[nodiscard]] std::vector<double> logits(const TurnExample& turn) const {
    const std::size_t n = require_kb(turn);
    auto base = scorer_.pool(turn_spans(turn));
    std::vector<double> pooled(base.size());
    std::vector<double> hidden(scorer_.shape().hidden);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      pooled = base;
      scorer_.accumulate(turn.kb->texts[i], pooled);
      out[i] = scorer_.head(pooled, hidden);
    }
    return out;
  }

  [[nodiscard]] PieceProbs piece_probs(const TurnExample& turn) const {
    auto out = logits(turn);
    for (auto& v : out) {
      v = sigmoid(v);
    }
    return PieceProbs(std::move(out));
  }

  [[nodiscard]] double piece_prob(const TurnExample& turn, std::size_t i) const {
    return clamp_prob(sigmoid(scorer_.score(piece_spans(turn, i))));
  }

  /**
   * Per-piece binary cross-entropy summed over the turn's pieces. When `grad` is non-empty the
   * gradient of that sum is accumulated into it. Clamped probabilities have zero derivative.
   */
  double bce(const TurnExample& turn, const SubsetMask& target, std::span<double> grad = {}) const {
    const std::size_t n = require_kb(turn);
    if (target.width() != n) {
      throw Error(ErrorKind::kDimension, "target mask width does not match the knowledge base");
    }
    const auto spans = turn_spans(turn);
    auto base = scorer_.pool(spans);
    const std::size_t d = scorer_.shape().d_emb;
    std::vector<double> pooled(d);
    std::vector<double> hidden(scorer_.shape().hidden);
    std::vector<double> d_pooled(d);
    std::vector<double> d_base(d, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      pooled = base;
      scorer_.accumulate(turn.kb->texts[i], pooled);
      const double s = scorer_.head(pooled, hidden);
      const double raw = sigmoid(s);
      const double p = clamp_prob(raw);
      const bool y = target.test(i);
      loss -= y ? std::log(p) : std::log(1.0 - p);
      if (grad.empty()) {
        continue;
      }
      const double ds = (raw < kProbFloor || raw > kProbCeil) ? 0.0 : raw - (y ? 1.0 : 0.0);
      scorer_.head_backward(pooled, hidden, ds, grad, d_pooled);
      scorer_.scatter(turn.kb->texts[i], d_pooled, grad);
      axpy(1.0, d_pooled, d_base);
    }
    if (!grad.empty()) {
      for (auto s : spans) {
        scorer_.scatter(s, d_base, grad);
      }
    }
    return loss;
  }

  friend bool operator==(const FactoredRetriever&, const FactoredRetriever&) = default;

 private:
  static std::size_t require_kb(const TurnExample& turn) {
    if (!turn.kb) {
      throw Error(ErrorKind::kData, "turn " + turn.session_id + "/" + std::to_string(turn.turn_index) +
                                        " has no knowledge base");
    }
    return turn.kb->size();
  }

  static std::span<const Token> piece_text(const TurnExample& turn, std::size_t i) {
    require_kb(turn);
    return turn.kb->texts.at(i);
  }

  PooledScorer scorer_;
  bool uses_response_ = false;
};

struct SupervisedConfig {
  double lr = 0.05;
  std::size_t epochs = 100;
  std::size_t batch = 1;
  std::uint64_t seed = 1;
  RetrieverShape shape;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double loss = 0.0;
};

inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = derive_rng(seed, {0x5e55'0000ULL, epoch});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Fresh retriever with parameters uniform in [-0.1, 0.1] drawn from `seed`.
inline FactoredRetriever init_retriever(std::size_t vocab, RetrieverShape shape, bool uses_response,
                                        std::uint64_t seed) {
  FactoredRetriever model(vocab, shape, uses_response);
  auto rng = derive_rng(seed, {0x1417ULL, uses_response ? 1ULL : 0ULL});
  model.scorer().init_uniform(rng);
  return model;
}

/// Per-piece cross-entropy SGD over labeled turns. Each update averages over the pieces in a batch.
inline void fit_retriever(FactoredRetriever& model, const std::vector<TurnExample>& turns,
                          const SupervisedConfig& config, std::vector<EpochLoss>* log = nullptr) {
  for (const auto& t : turns) {
    if (!t.gold) {
      throw Error(ErrorKind::kData, "unlabeled turn " + t.session_id + "/" + std::to_string(t.turn_index) +
                                        " in supervised retriever training");
    }
  }
  const std::size_t batch = std::max<std::size_t>(1, config.batch);
  std::vector<double> grad(model.num_params());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(config.seed, epoch, turns.size());
    double epoch_loss = 0.0;
    std::size_t epoch_pieces = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::fill(grad.begin(), grad.end(), 0.0);
      std::size_t pieces = 0;
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
        const auto& t = turns[order[k]];
        epoch_loss += model.bce(t, *t.gold, grad);
        pieces += t.num_pieces();
      }
      epoch_pieces += pieces;
      if (pieces == 0 || config.lr == 0.0) {
        continue;
      }
      axpy(-config.lr / static_cast<double>(pieces), grad, model.scorer().params());
    }
    if (log != nullptr) {
      log->push_back({epoch, epoch_pieces == 0 ? 0.0 : epoch_loss / static_cast<double>(epoch_pieces)});
    }
  }
}

inline FactoredRetriever train_proposal(const std::vector<TurnExample>& turns, std::size_t vocab,
                                        const SupervisedConfig& config, std::vector<EpochLoss>* log = nullptr) {
  auto model = init_retriever(vocab, config.shape, false, config.seed);
  fit_retriever(model, turns, config, log);
  return model;
}

}  // namespace entriever

#endif
