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

#ifndef ENTRIEVER_GENERATION_HPP
#define ENTRIEVER_GENERATION_HPP

#include <entriever/common.hpp>
#include <entriever/corpus.hpp>
#include <entriever/energy.hpp>
#include <entriever/proposal.hpp>

#include <span>
#include <vector>

/**
 * \file
 * \brief Order-1 response generator p_gen(r | c, u, xi) and the response-aware inference model q(xi | c, u, r).
 *
 * The generator conditions every step on the sum-pooled embeddings of `c SEP u SEP xi` and on the
 * previous token:
 *
 *     logits_l = Out * tanh(Cond * cond + Prev * emb(r_{l-1})) + bias,   r_0 = BOS
 *
 * and the response is scored up to and including EOS.
 */

namespace entriever {

struct GenShape {
  std::size_t vocab = 0;
  std::size_t d_emb = 32;
  std::size_t hidden = 32;

  [[nodiscard]] std::size_t emb_offset() const noexcept { return 0; }
  [[nodiscard]] std::size_t cond_offset() const noexcept { return vocab * d_emb; }
  [[nodiscard]] std::size_t prev_offset() const noexcept { return cond_offset() + hidden * d_emb; }
  [[nodiscard]] std::size_t out_offset() const noexcept { return prev_offset() + hidden * d_emb; }
  [[nodiscard]] std::size_t bias_offset() const noexcept { return out_offset() + vocab * hidden; }
  [[nodiscard]] std::size_t num_params() const noexcept { return bias_offset() + vocab; }

  friend bool operator==(const GenShape&, const GenShape&) = default;
};

class GenModel {
 public:
  GenModel() = default;
  explicit GenModel(GenShape shape) : shape_(shape), params_(shape.num_params(), 0.0) {}

  [[nodiscard]] const GenShape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t num_params() const noexcept { return params_.size(); }
  [[nodiscard]] std::vector<double>& params() noexcept { return params_; }
  [[nodiscard]] const std::vector<double>& params() const noexcept { return params_; }

  [[nodiscard]] std::span<const double> embedding(Token t) const {
    check_token(t);
    return {params_.data() + static_cast<std::size_t>(t) * shape_.d_emb, shape_.d_emb};
  }

  /// Pooled condition vector for `c SEP u SEP xi`.
  [[nodiscard]] std::vector<double> condition(const TurnExample& turn, const SubsetMask& mask) const {
    std::vector<double> cond(shape_.d_emb, 0.0);
    for (auto s : energy_spans(turn, mask)) {
      for (Token t : s) {
        axpy(1.0, embedding(t), cond);
      }
    }
    return cond;
  }

  /// Step log-probabilities over the vocabulary given the condition and previous token.
  [[nodiscard]] std::vector<double> step_logprobs(std::span<const double> cond, Token prev) const {
    std::vector<double> hidden(shape_.hidden);
    std::vector<double> logits(shape_.vocab);
    forward_step(cond, prev, hidden, logits);
    const double lse = log_sum_exp(logits);
    for (auto& v : logits) {
      v -= lse;
    }
    return logits;
  }

  /**
   * Teacher-forced log-probability of `targets` (which should end with EOS). When `grad` is
   * non-empty, d(log p)/d(theta) * scale is accumulated into it; `d_cond` receives the
   * condition gradient (scaled) and is overwritten.
   */
  double sequence_logprob(std::span<const double> cond, std::span<const Token> targets, std::span<double> grad = {},
                          double scale = 1.0, std::vector<double>* d_cond = nullptr) const {
    const std::size_t d = shape_.d_emb;
    const std::size_t h = shape_.hidden;
    const std::size_t v = shape_.vocab;
    std::vector<double> hidden(h);
    std::vector<double> logits(v);
    std::vector<double> dh(h);
    if (d_cond != nullptr) {
      d_cond->assign(d, 0.0);
    }
    double total = 0.0;
    Token prev = kBos;
    for (Token y : targets) {
      check_token(y);
      forward_step(cond, prev, hidden, logits);
      const double lse = log_sum_exp(logits);
      total += logits[static_cast<std::size_t>(y)] - lse;
      if (!grad.empty()) {
        backward_step(cond, prev, y, hidden, logits, lse, scale, grad, dh, d_cond);
      }
      prev = y;
    }
    return total;
  }

  /// log p_gen(response + EOS | c, u, xi)
  [[nodiscard]] double logprob(const TurnExample& turn, const SubsetMask& mask) const {
    return sequence_logprob(condition(turn, mask), with_eos(turn.response));
  }

  /// Adds scale * d(log p_gen)/d(theta) to `grad` and returns log p_gen.
  double logprob_grad(const TurnExample& turn, const SubsetMask& mask, double scale, std::span<double> grad) const {
    const auto cond = condition(turn, mask);
    std::vector<double> d_cond;
    const double lp = sequence_logprob(cond, with_eos(turn.response), grad, scale, &d_cond);
    for (auto s : energy_spans(turn, mask)) {
      for (Token t : s) {
        double* row = grad.data() + static_cast<std::size_t>(t) * shape_.d_emb;
        for (std::size_t k = 0; k < shape_.d_emb; ++k) {
          row[k] += d_cond[k];
        }
      }
    }
    return lp;
  }

  static Tokens with_eos(const Tokens& response) {
    Tokens out = response;
    out.push_back(kEos);
    return out;
  }

  friend bool operator==(const GenModel&, const GenModel&) = default;

 private:
  void check_token(Token t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= shape_.vocab) {
      throw Error(ErrorKind::kData, "token id " + std::to_string(t) + " outside generator vocabulary");
    }
  }

  void forward_step(std::span<const double> cond, Token prev, std::span<double> hidden,
                    std::span<double> logits) const {
    const std::size_t d = shape_.d_emb;
    const std::size_t h = shape_.hidden;
    const double* cp = params_.data() + shape_.cond_offset();
    const double* pp = params_.data() + shape_.prev_offset();
    const double* out = params_.data() + shape_.out_offset();
    const double* bias = params_.data() + shape_.bias_offset();
    const auto e = embedding(prev);
    for (std::size_t j = 0; j < h; ++j) {
      double a = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        a += cp[j * d + k] * cond[k] + pp[j * d + k] * e[k];
      }
      hidden[j] = std::tanh(a);
    }
    for (std::size_t i = 0; i < shape_.vocab; ++i) {
      double z = bias[i];
      for (std::size_t j = 0; j < h; ++j) {
        z += out[i * h + j] * hidden[j];
      }
      logits[i] = z;
    }
  }

  void backward_step(std::span<const double> cond, Token prev, Token y, std::span<const double> hidden,
                     std::span<const double> logits, double lse, double scale, std::span<double> grad,
                     std::span<double> dh, std::vector<double>* d_cond) const {
    const std::size_t d = shape_.d_emb;
    const std::size_t h = shape_.hidden;
    const double* cp = params_.data() + shape_.cond_offset();
    const double* pp = params_.data() + shape_.prev_offset();
    const double* out = params_.data() + shape_.out_offset();
    double* g_cp = grad.data() + shape_.cond_offset();
    double* g_pp = grad.data() + shape_.prev_offset();
    double* g_out = grad.data() + shape_.out_offset();
    double* g_bias = grad.data() + shape_.bias_offset();
    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t i = 0; i < shape_.vocab; ++i) {
      const double dz = scale * ((static_cast<Token>(i) == y ? 1.0 : 0.0) - std::exp(logits[i] - lse));
      g_bias[i] += dz;
      for (std::size_t j = 0; j < h; ++j) {
        g_out[i * h + j] += dz * hidden[j];
        dh[j] += dz * out[i * h + j];
      }
    }
    const auto e = embedding(prev);
    double* g_prev = grad.data() + static_cast<std::size_t>(prev) * d;
    for (std::size_t j = 0; j < h; ++j) {
      const double da = dh[j] * (1.0 - hidden[j] * hidden[j]);
      if (da == 0.0) {
        continue;
      }
      for (std::size_t k = 0; k < d; ++k) {
        g_cp[j * d + k] += da * cond[k];
        g_pp[j * d + k] += da * e[k];
        g_prev[k] += da * pp[j * d + k];
        if (d_cond != nullptr) {
          (*d_cond)[k] += da * cp[j * d + k];
        }
      }
    }
  }

  GenShape shape_;
  std::vector<double> params_;
};

inline GenModel init_gen(std::size_t vocab, RetrieverShape shape, std::uint64_t seed) {
  GenModel model(GenShape{vocab, shape.d_emb, shape.hidden});
  auto rng = derive_rng(seed, {0x6e4ULL});
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (auto& p : model.params()) {
    p = dist(rng);
  }
  return model;
}

inline double gen_logprob(const TurnExample& turn, const SubsetMask& mask, const GenModel& model) {
  return model.logprob(turn, mask);
}

/// Ancestral sampling until EOS (excluded from the result) or `max_len` tokens.
inline Tokens gen_sample(const TurnExample& turn, const SubsetMask& mask, const GenModel& model, Rng& rng,
                         std::size_t max_len) {
  if (max_len == 0) {
    throw Error(ErrorKind::kConfig, "max_len must be at least 1");
  }
  const auto cond = model.condition(turn, mask);
  Tokens out;
  Token prev = kBos;
  while (out.size() < max_len) {
    const auto lp = model.step_logprobs(cond, prev);
    const double u = uniform01(rng);
    double acc = 0.0;
    Token next = static_cast<Token>(lp.size() - 1);
    for (std::size_t i = 0; i < lp.size(); ++i) {
      acc += std::exp(lp[i]);
      if (u < acc) {
        next = static_cast<Token>(i);
        break;
      }
    }
    if (next == kEos) {
      break;
    }
    out.push_back(next);
    prev = next;
  }
  return out;
}

/// Argmax decoding; ties go to the lower token id.
inline Tokens greedy_decode(const TurnExample& turn, const SubsetMask& mask, const GenModel& model,
                            std::size_t max_len) {
  const auto cond = model.condition(turn, mask);
  Tokens out;
  Token prev = kBos;
  while (out.size() < max_len) {
    const auto lp = model.step_logprobs(cond, prev);
    const auto next = static_cast<Token>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (next == kEos) {
      break;
    }
    out.push_back(next);
    prev = next;
  }
  return out;
}

struct Proposal {
  SubsetMask mask;
  double log_q = 0.0;
};

/// Draws xi ~ q(. | c, u, r) from the response-aware inference model.
inline Proposal inf_propose(const TurnExample& turn, const FactoredRetriever& inf, Rng& rng) {
  if (!turn.kb) {
    throw Error(ErrorKind::kData, "inference model needs the knowledge base of turn " + turn.session_id + "/" +
                                      std::to_string(turn.turn_index));
  }
  const auto probs = inf.piece_probs(turn);
  auto mask = sample_subset(probs, rng);
  return {mask, subset_logprob(mask, probs)};
}

// ---------------------------------------------------------------------------
// Supervised training

struct GenEpochLog {
  std::size_t epoch = 0;
  double nll_per_token = 0.0;
};

/// SGD on the token-averaged negative log-likelihood with gold subsets as conditions.
inline void fit_gen(GenModel& model, const std::vector<TurnExample>& turns, const SupervisedConfig& config,
                    std::vector<GenEpochLog>* log = nullptr) {
  for (const auto& t : turns) {
    if (!t.gold) {
      throw Error(ErrorKind::kData, "unlabeled turn " + t.session_id + "/" + std::to_string(t.turn_index) +
                                        " in supervised generator training");
    }
  }
  const std::size_t batch = std::max<std::size_t>(1, config.batch);
  std::vector<double> grad(model.num_params());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(config.seed, epoch, turns.size());
    double nll = 0.0;
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::fill(grad.begin(), grad.end(), 0.0);
      std::size_t batch_tokens = 0;
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
        const auto& t = turns[order[k]];
        nll -= model.logprob_grad(t, *t.gold, 1.0, grad);
        batch_tokens += t.response.size() + 1;
      }
      tokens += batch_tokens;
      if (config.lr != 0.0) {
        axpy(config.lr / static_cast<double>(batch_tokens), grad, model.params());
      }
    }
    if (log != nullptr) {
      log->push_back({epoch, tokens == 0 ? 0.0 : nll / static_cast<double>(tokens)});
    }
  }
}

inline GenModel train_gen(const std::vector<TurnExample>& turns, std::size_t vocab, const SupervisedConfig& config,
                          std::vector<GenEpochLog>* log = nullptr) {
  auto model = init_gen(vocab, config.shape, config.seed);
  fit_gen(model, turns, config, log);
  return model;
}

inline FactoredRetriever train_inf(const std::vector<TurnExample>& turns, std::size_t vocab,
                                   const SupervisedConfig& config, std::vector<EpochLoss>* log = nullptr) {
  auto model = init_retriever(vocab, config.shape, true, config.seed);
  fit_retriever(model, turns, config, log);
  return model;
}

}  // namespace entriever

#endif
