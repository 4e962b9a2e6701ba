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

#ifndef ENTRIEVER_SCORER_HPP
#define ENTRIEVER_SCORER_HPP

#include <entriever/common.hpp>
#include <entriever/corpus.hpp>

#include <cmath>
#include <span>
#include <vector>

/**
 * \file
 * \brief Sum-pooled token encoder with one tanh hidden layer and a scalar linear head.
 *
 * All parameters live in one flat vector laid out as
 * `[embedding V*d | W1 h*d | b1 h | w2 h | b2]`, so gradients are flat vectors of the same length.
 */

namespace entriever {

inline constexpr Token kSepArray[1] = {kSep};

/// Spans of tokens whose embeddings are summed. Order is irrelevant to the result.
using TokenSpans = std::vector<std::span<const Token>>;

struct ScorerShape {
  std::size_t vocab = 0;
  std::size_t d_emb = 32;
  std::size_t hidden = 32;

  [[nodiscard]] std::size_t emb_offset() const noexcept { return 0; }
  [[nodiscard]] std::size_t w1_offset() const noexcept { return vocab * d_emb; }
  [[nodiscard]] std::size_t b1_offset() const noexcept { return w1_offset() + hidden * d_emb; }
  [[nodiscard]] std::size_t w2_offset() const noexcept { return b1_offset() + hidden; }
  [[nodiscard]] std::size_t b2_offset() const noexcept { return w2_offset() + hidden; }
  [[nodiscard]] std::size_t num_params() const noexcept { return b2_offset() + 1; }

  friend bool operator==(const ScorerShape&, const ScorerShape&) = default;
};

class PooledScorer {
 public:
  PooledScorer() = default;
  explicit PooledScorer(ScorerShape shape) : shape_(shape), params_(shape.num_params(), 0.0) {}

  [[nodiscard]] const ScorerShape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t num_params() const noexcept { return params_.size(); }
  [[nodiscard]] std::vector<double>& params() noexcept { return params_; }
  [[nodiscard]] const std::vector<double>& params() const noexcept { return params_; }

  void init_uniform(Rng& rng, double scale = 0.1) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& p : params_) {
      p = dist(rng);
    }
  }

  [[nodiscard]] std::span<const double> embedding(Token t) const {
    check_token(t);
    return {params_.data() + shape_.emb_offset() + static_cast<std::size_t>(t) * shape_.d_emb, shape_.d_emb};
  }

  [[nodiscard]] double& head_bias() noexcept { return params_[shape_.b2_offset()]; }
  [[nodiscard]] double head_bias() const noexcept { return params_[shape_.b2_offset()]; }

  /// out += mult * sum of embeddings of `tokens`.
  void accumulate(std::span<const Token> tokens, std::span<double> out, double mult = 1.0) const {
    for (Token t : tokens) {
      axpy(mult, embedding(t), out);
    }
  }

  [[nodiscard]] std::vector<double> pool(const TokenSpans& spans) const {
    std::vector<double> pooled(shape_.d_emb, 0.0);
    for (auto s : spans) {
      accumulate(s, pooled);
    }
    return pooled;
  }

  /// Scalar head applied to a pooled vector; writes tanh activations to `hidden`.
  double head(std::span<const double> pooled, std::span<double> hidden) const {
    const std::size_t d = shape_.d_emb;
    const double* w1 = params_.data() + shape_.w1_offset();
    const double* b1 = params_.data() + shape_.b1_offset();
    const double* w2 = params_.data() + shape_.w2_offset();
    double out = params_[shape_.b2_offset()];
    for (std::size_t j = 0; j < shape_.hidden; ++j) {
      double a = b1[j];
      const double* row = w1 + j * d;
      for (std::size_t k = 0; k < d; ++k) {
        a += row[k] * pooled[k];
      }
      hidden[j] = std::tanh(a);
      out += w2[j] * hidden[j];
    }
    return out;
  }

  [[nodiscard]] double score(const TokenSpans& spans) const {
    auto pooled = pool(spans);
    std::vector<double> hidden(shape_.hidden);
    return head(pooled, hidden);
  }

  /// Accumulates d(score)/d(head params) * ds into `grad` and writes d(score)/d(pooled) * ds into
  /// `d_pooled` (overwritten). Embedding gradients are left to `scatter`.
  void head_backward(std::span<const double> pooled, std::span<const double> hidden, double ds,
                     std::span<double> grad, std::span<double> d_pooled) const {
    const std::size_t d = shape_.d_emb;
    const double* w1 = params_.data() + shape_.w1_offset();
    const double* w2 = params_.data() + shape_.w2_offset();
    double* g_w1 = grad.data() + shape_.w1_offset();
    double* g_b1 = grad.data() + shape_.b1_offset();
    double* g_w2 = grad.data() + shape_.w2_offset();
    grad[shape_.b2_offset()] += ds;
    std::fill(d_pooled.begin(), d_pooled.end(), 0.0);
    for (std::size_t j = 0; j < shape_.hidden; ++j) {
      g_w2[j] += ds * hidden[j];
      const double da = ds * w2[j] * (1.0 - hidden[j] * hidden[j]);
      if (da == 0.0) {
        continue;
      }
      g_b1[j] += da;
      const double* row = w1 + j * d;
      double* g_row = g_w1 + j * d;
      for (std::size_t k = 0; k < d; ++k) {
        g_row[k] += da * pooled[k];
        d_pooled[k] += da * row[k];
      }
    }
  }

  /// Embedding gradient: every occurrence of a pooled token receives `d_pooled * mult`.
  void scatter(std::span<const Token> tokens, std::span<const double> d_pooled, std::span<double> grad,
               double mult = 1.0) const {
    for (Token t : tokens) {
      check_token(t);
      double* row = grad.data() + shape_.emb_offset() + static_cast<std::size_t>(t) * shape_.d_emb;
      for (std::size_t k = 0; k < shape_.d_emb; ++k) {
        row[k] += mult * d_pooled[k];
      }
    }
  }

  /// grad += ds * d(score(spans))/d(params)
  void backward(const TokenSpans& spans, double ds, std::span<double> grad) const {
    auto pooled = pool(spans);
    std::vector<double> hidden(shape_.hidden);
    head(pooled, hidden);
    std::vector<double> d_pooled(shape_.d_emb);
    head_backward(pooled, hidden, ds, grad, d_pooled);
    for (auto s : spans) {
      scatter(s, d_pooled, grad);
    }
  }

  friend bool operator==(const PooledScorer&, const PooledScorer&) = default;

 private:
  void check_token(Token t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= shape_.vocab) {
      throw Error(ErrorKind::kData, "token id " + std::to_string(t) + " outside vocabulary");
    }
  }

  ScorerShape shape_;
  std::vector<double> params_;
};

}  // namespace entriever

#endif
