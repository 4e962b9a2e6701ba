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

#ifndef ENTRIEVER_JSA_HPP
#define ENTRIEVER_JSA_HPP

#include <entriever/common.hpp>
#include <entriever/corpus.hpp>
#include <entriever/energy.hpp>
#include <entriever/generation.hpp>
#include <entriever/proposal.hpp>
#include <entriever/trainer.hpp>

#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

/**
 * \file
 * \brief Semi-supervised training of the generator and inference model.
 *
 * Unlabeled turns get latent subsets from a per-turn Metropolis independence sampler whose
 * proposal is the inference model q(xi | c, u, r) and whose target is the posterior
 * p(xi | c, u, r) proportional to p_ret(xi | c, u) p_gen(r | c, u, xi). The retrieval factor comes
 * either from the factored retriever or from a non-residual energy model, whose normalizer cancels
 * in the acceptance ratio. Sampled subsets are then used as labels. Retrieval models stay frozen.
 */

namespace entriever {

enum class SemiMethod { kPseudoLabel, kJsa };
enum class WeightSource { kTraditional, kEntriever };

inline const char* to_string(SemiMethod m) { return m == SemiMethod::kJsa ? "jsa" : "pl"; }
inline const char* to_string(WeightSource w) { return w == WeightSource::kEntriever ? "entriever" : "traditional"; }

/// Cached latent subset of one unlabeled turn and its log importance weight.
struct ChainState {
  SubsetMask mask;
  double log_weight = 0.0;
};

using ChainKey = std::pair<std::string, std::size_t>;  ///< (session id, turn index)
using ChainCache = std::map<ChainKey, ChainState>;

using LogWeightFn = std::function<double(const SubsetMask&)>;

/// log p_ret(xi | c, u) + log p_gen(r | c, u, xi) - log q(xi | c, u, r)
inline double importance_logweight_traditional(const SubsetMask& mask, const TurnExample& turn,
                                               const FactoredRetriever& proposal, const GenModel& gen,
                                               const FactoredRetriever& inf) {
  if (!turn.kb) {
    throw Error(ErrorKind::kWeightSource, "traditional importance weight needs the knowledge base of turn " +
                                              turn.session_id + "/" + std::to_string(turn.turn_index));
  }
  return subset_logprob(mask, proposal.piece_probs(turn)) + gen.logprob(turn, mask) -
         subset_logprob(mask, inf.piece_probs(turn));
}

/// -U(c, u, xi) + log p_gen(r | c, u, xi) - log q(xi | c, u, r); correct up to the constant -log Z.
inline double importance_logweight_entriever(const SubsetMask& mask, const TurnExample& turn,
                                             const EnergyModel& energy_model, const GenModel& gen,
                                             const FactoredRetriever& inf) {
  if (energy_model.mode().is_residual()) {
    throw Error(ErrorKind::kConfig, "Entriever importance weights need a non-residual energy model");
  }
  return -energy(turn, mask, energy_model) + gen.logprob(turn, mask) - subset_logprob(mask, inf.piece_probs(turn));
}

struct TurnStep {
  SubsetMask mask;
  bool accepted = false;
};

/**
 * One Metropolis independence step for a turn. The proposal comes from the inference model; an
 * empty cache accepts it unconditionally. The cached weight is recomputed with `log_weight` so
 * that it reflects the current models.
 */
inline TurnStep mis_turn_step(const TurnExample& turn, std::optional<ChainState>& chain, const LogWeightFn& log_weight,
                              const FactoredRetriever& inf, Rng& rng) {
  auto proposal = inf_propose(turn, inf, rng);
  const double lw_new = log_weight(proposal.mask);
  if (!chain) {
    chain = ChainState{proposal.mask, lw_new};
    return {proposal.mask, true};
  }
  chain->log_weight = log_weight(chain->mask);
  const double eta = uniform01(rng);
  if (mis_accept(lw_new, chain->log_weight, eta)) {
    *chain = ChainState{proposal.mask, lw_new};
    return {proposal.mask, true};
  }
  return {chain->mask, false};
}

struct SemiConfig {
  SemiMethod method = SemiMethod::kJsa;
  WeightSource weight_source = WeightSource::kEntriever;
  double unlabeled_ratio = 1.0;  ///< unlabeled sessions drawn per labeled session each epoch
  double gen_lr = 0.05;
  double inf_lr = 0.05;
  std::size_t epochs = 10;
  std::size_t batch = 1;  ///< sessions per update
  std::uint64_t seed = 1;
  bool hide_kb_from_retriever = false;  ///< traditional weights then drop the p_ret factor
  std::size_t workers = 1;
};

struct SemiEpochLog {
  std::size_t epoch = 0;
  double gen_nll = 0.0;  ///< per token
  double inf_nll = 0.0;  ///< per piece
  std::optional<double> acceptance_rate;
  std::size_t labeled_seen = 0;
  std::size_t unlabeled_seen = 0;
  std::size_t weight_fallbacks = 0;
};

/// Frozen retrieval-side models used for importance weights.
struct FrozenRetrieval {
  const FactoredRetriever* proposal = nullptr;
  const EnergyModel* energy = nullptr;
};

namespace detail {

struct SessionWork {
  std::vector<double> gen_grad;
  std::vector<double> inf_grad;
  double gen_nll = 0.0;
  double inf_nll = 0.0;
  std::size_t tokens = 0;
  std::size_t pieces = 0;
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  std::size_t fallbacks = 0;
};

/// Gradient contribution of one session given the subset used as each turn's label.
inline void accumulate_session(const SessionExample& session, const std::vector<SubsetMask>& labels,
                               const GenModel& gen, const FactoredRetriever& inf, SessionWork& work) {
  for (std::size_t t = 0; t < session.turns.size(); ++t) {
    const auto& turn = session.turns[t];
    work.gen_nll -= gen.logprob_grad(turn, labels[t], 1.0, work.gen_grad);
    work.tokens += turn.response.size() + 1;
    work.inf_nll += inf.bce(turn, labels[t], work.inf_grad);
    work.pieces += turn.num_pieces();
  }
}

inline void apply_updates(std::vector<SessionWork>& works, GenModel& gen, FactoredRetriever& inf, double gen_lr,
                          double inf_lr, SemiEpochLog& entry, std::size_t& tokens, std::size_t& pieces) {
  std::vector<double> gen_step(gen.num_params(), 0.0);
  std::vector<double> inf_step(inf.num_params(), 0.0);
  std::size_t batch_tokens = 0;
  std::size_t batch_pieces = 0;
  for (auto& w : works) {
    axpy(1.0, w.gen_grad, gen_step);
    axpy(1.0, w.inf_grad, inf_step);
    batch_tokens += w.tokens;
    batch_pieces += w.pieces;
    entry.gen_nll += w.gen_nll;
    entry.inf_nll += w.inf_nll;
  }
  tokens += batch_tokens;
  pieces += batch_pieces;
  if (batch_tokens > 0 && gen_lr != 0.0) {
    axpy(gen_lr / static_cast<double>(batch_tokens), gen_step, gen.params());
  }
  if (batch_pieces > 0 && inf_lr != 0.0) {
    axpy(-inf_lr / static_cast<double>(batch_pieces), inf_step, inf.scorer().params());
  }
}

inline void require_labeled(const SessionExample& s) {
  for (const auto& t : s.turns) {
    if (!t.gold) {
      throw Error(ErrorKind::kData, "session " + s.session_id + " is in the labeled pool but turn " +
                                        std::to_string(t.turn_index) + " has no gold subset");
    }
  }
}

inline void finish_entry(SemiEpochLog& entry, std::size_t tokens, std::size_t pieces) {
  entry.gen_nll = tokens == 0 ? 0.0 : entry.gen_nll / static_cast<double>(tokens);
  entry.inf_nll = pieces == 0 ? 0.0 : entry.inf_nll / static_cast<double>(pieces);
}

}  // namespace detail

/// Supervised fine-tuning of generator and inference model on labeled sessions, batched by session.
inline void fit_joint_supervised(GenModel& gen, FactoredRetriever& inf, const std::vector<SessionExample>& labeled,
                                 const SemiConfig& config, std::vector<SemiEpochLog>* history = nullptr) {
  for (const auto& s : labeled) {
    detail::require_labeled(s);
  }
  const std::size_t batch = std::max<std::size_t>(1, config.batch);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(config.seed, epoch, labeled.size());
    SemiEpochLog entry;
    entry.epoch = epoch;
    std::size_t tokens = 0;
    std::size_t pieces = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<detail::SessionWork> works(end - start);
      for (std::size_t k = 0; k < works.size(); ++k) {
        const auto& s = labeled[order[start + k]];
        works[k].gen_grad.assign(gen.num_params(), 0.0);
        works[k].inf_grad.assign(inf.num_params(), 0.0);
        std::vector<SubsetMask> labels;
        for (const auto& t : s.turns) {
          labels.push_back(*t.gold);
        }
        detail::accumulate_session(s, labels, gen, inf, works[k]);
      }
      entry.labeled_seen += works.size();
      detail::apply_updates(works, gen, inf, config.gen_lr, config.inf_lr, entry, tokens, pieces);
    }
    detail::finish_entry(entry, tokens, pieces);
    if (history != nullptr) {
      history->push_back(entry);
    }
  }
}

/**
 * Epoch schedule: labeled sessions in the same shuffled order as supervised training, with the
 * unlabeled sessions drawn for this epoch inserted at random positions. Entries are
 * (is_unlabeled, index).
 */
inline std::vector<std::pair<bool, std::size_t>> semi_schedule(std::uint64_t seed, std::size_t epoch,
                                                               std::size_t num_labeled, std::size_t num_unlabeled,
                                                               double ratio) {
  if (!(ratio >= 0.0) || !std::isfinite(ratio)) {
    throw Error(ErrorKind::kConfig, "unlabeled ratio must be a non-negative number");
  }
  const auto labeled_order = epoch_order(seed, epoch, num_labeled);
  auto rng = derive_rng(seed, {0x0a1ULL, epoch});
  std::vector<std::size_t> pool(num_unlabeled);
  std::iota(pool.begin(), pool.end(), 0);
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto wanted = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(num_labeled)));
  pool.resize(std::min(pool.size(), wanted));
  std::vector<bool> slots(labeled_order.size() + pool.size(), false);
  std::fill(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(pool.size()), true);
  std::shuffle(slots.begin(), slots.end(), rng);
  std::vector<std::pair<bool, std::size_t>> out;
  out.reserve(slots.size());
  std::size_t li = 0;
  std::size_t ui = 0;
  for (bool unlabeled : slots) {
    out.emplace_back(unlabeled, unlabeled ? pool[ui++] : labeled_order[li++]);
  }
  return out;
}

/**
 * Semi-supervised training. Labeled sessions use their gold subsets; each turn of an unlabeled
 * session gets one sampler step per visit (PL: every proposal kept, no weights evaluated; JSA:
 * Metropolis independence step against the cached subset). Gen and inf ascend the log-likelihood
 * of the resulting labels. The cache persists across epochs in `cache`.
 */
inline void jsa_train(GenModel& gen, FactoredRetriever& inf, const std::vector<SessionExample>& labeled,
                      const std::vector<SessionExample>& unlabeled, const FrozenRetrieval& retrieval,
                      const SemiConfig& config, ChainCache& cache, std::vector<SemiEpochLog>* history = nullptr) {
  for (const auto& s : labeled) {
    detail::require_labeled(s);
  }
  for (const auto& s : unlabeled) {
    if (!s.kb) {
      throw Error(ErrorKind::kData, "unlabeled session " + s.session_id +
                                        " has no knowledge base; the inference model needs one to propose");
    }
  }
  const bool jsa = config.method == SemiMethod::kJsa;
  if (jsa && !unlabeled.empty()) {
    if (config.weight_source == WeightSource::kEntriever) {
      if (retrieval.energy == nullptr) {
        throw Error(ErrorKind::kConfig, "Entriever importance weights need an energy model");
      }
      if (retrieval.energy->mode().is_residual()) {
        throw Error(ErrorKind::kConfig, "Entriever importance weights need a non-residual energy model");
      }
    } else if (retrieval.proposal == nullptr) {
      throw Error(ErrorKind::kConfig, "traditional importance weights need the proposal retriever");
    }
  }
  const std::size_t batch = std::max<std::size_t>(1, config.batch);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto schedule = semi_schedule(config.seed, epoch, labeled.size(), unlabeled.size(), config.unlabeled_ratio);
    SemiEpochLog entry;
    entry.epoch = epoch;
    std::size_t tokens = 0;
    std::size_t pieces = 0;
    std::size_t proposals = 0;
    std::size_t accepted = 0;
    for (std::size_t start = 0; start < schedule.size(); start += batch) {
      const std::size_t end = std::min(schedule.size(), start + batch);
      std::vector<detail::SessionWork> works(end - start);
      // Cache slots are created up front so that workers only touch their own entries.
      std::vector<std::vector<std::optional<ChainState>*>> chains(works.size());
      std::map<ChainKey, std::optional<ChainState>> staged;
      for (std::size_t k = 0; k < works.size(); ++k) {
        const auto [is_unlabeled, index] = schedule[start + k];
        if (!is_unlabeled) {
          continue;
        }
        for (const auto& t : unlabeled[index].turns) {
          ChainKey key{t.session_id, t.turn_index};
          auto it = cache.find(key);
          staged[key] = it == cache.end() ? std::nullopt : std::optional<ChainState>(it->second);
        }
      }
      for (std::size_t k = 0; k < works.size(); ++k) {
        const auto [is_unlabeled, index] = schedule[start + k];
        if (is_unlabeled) {
          for (const auto& t : unlabeled[index].turns) {
            chains[k].push_back(&staged.at({t.session_id, t.turn_index}));
          }
        }
      }
      parallel_for(works.size(), config.workers, [&](std::size_t k) {
        const auto [is_unlabeled, index] = schedule[start + k];
        auto& work = works[k];
        work.gen_grad.assign(gen.num_params(), 0.0);
        work.inf_grad.assign(inf.num_params(), 0.0);
        const auto& session = is_unlabeled ? unlabeled[index] : labeled[index];
        std::vector<SubsetMask> labels;
        if (!is_unlabeled) {
          for (const auto& t : session.turns) {
            labels.push_back(*t.gold);
          }
        } else {
          auto rng = derive_rng(config.seed, {0x15aULL, index, epoch});
          for (std::size_t t = 0; t < session.turns.size(); ++t) {
            const auto& turn = session.turns[t];
            auto& chain = *chains[k][t];
            ++work.proposals;
            if (!jsa) {
              auto p = inf_propose(turn, inf, rng);
              chain = ChainState{p.mask, 0.0};
              labels.push_back(p.mask);
              ++work.accepted;
              continue;
            }
            LogWeightFn weight;
            if (config.weight_source == WeightSource::kEntriever) {
              weight = [&](const SubsetMask& m) {
                return importance_logweight_entriever(m, turn, *retrieval.energy, gen, inf);
              };
            } else if (config.hide_kb_from_retriever) {
              ++work.fallbacks;
              weight = [&](const SubsetMask& m) {
                return gen.logprob(turn, m) - subset_logprob(m, inf.piece_probs(turn));
              };
            } else {
              weight = [&](const SubsetMask& m) {
                return importance_logweight_traditional(m, turn, *retrieval.proposal, gen, inf);
              };
            }
            auto step = mis_turn_step(turn, chain, weight, inf, rng);
            work.accepted += step.accepted ? 1 : 0;
            labels.push_back(step.mask);
          }
        }
        detail::accumulate_session(session, labels, gen, inf, work);
      });
      for (auto& [key, state] : staged) {
        if (state) {
          cache[key] = *state;
        }
      }
      for (std::size_t k = 0; k < works.size(); ++k) {
        if (schedule[start + k].first) {
          ++entry.unlabeled_seen;
        } else {
          ++entry.labeled_seen;
        }
        proposals += works[k].proposals;
        accepted += works[k].accepted;
        entry.weight_fallbacks += works[k].fallbacks;
      }
      detail::apply_updates(works, gen, inf, config.gen_lr, config.inf_lr, entry, tokens, pieces);
    }
    detail::finish_entry(entry, tokens, pieces);
    if (proposals > 0) {
      entry.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(proposals);
    }
    if (history != nullptr) {
      history->push_back(entry);
    }
  }
}

/// Pseudo-labeling baseline: jsa_train with every proposal accepted.
inline void pl_train(GenModel& gen, FactoredRetriever& inf, const std::vector<SessionExample>& labeled,
                     const std::vector<SessionExample>& unlabeled, SemiConfig config, ChainCache& cache,
                     std::vector<SemiEpochLog>* history = nullptr) {
  config.method = SemiMethod::kPseudoLabel;
  jsa_train(gen, inf, labeled, unlabeled, FrozenRetrieval{}, config, cache, history);
}

/// Unnormalized log posterior log p_ret(xi|c,u) + log p_gen(r|c,u,xi) for every mask, by enumeration.
template <class RetrievalLogScore>
std::vector<double> enumerate_posterior(const TurnExample& turn, const GenModel& gen, RetrievalLogScore&& log_ret,
                                        std::size_t max_pieces = 12) {
  const std::size_t n = turn.num_pieces();
  if (n > max_pieces) {
    throw Error(ErrorKind::kScale, "posterior enumeration limited to N <= " + std::to_string(max_pieces));
  }
  std::vector<double> scores(std::size_t{1} << n);
  for (std::uint64_t bits = 0; bits < scores.size(); ++bits) {
    SubsetMask m(n, bits);
    scores[bits] = log_ret(m) + gen.logprob(turn, m);
  }
  const double lz = log_sum_exp(scores);
  for (auto& s : scores) {
    s = std::exp(s - lz);
  }
  return scores;
}

}  // namespace entriever

#endif
