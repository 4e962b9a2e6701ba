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

#ifndef ENTRIEVER_TRAINER_HPP
#define ENTRIEVER_TRAINER_HPP

#include <entriever/common.hpp>
#include <entriever/corpus.hpp>
#include <entriever/energy.hpp>
#include <entriever/proposal.hpp>

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

/**
 * \file
 * \brief Maximum-likelihood training of the subset energy.
 *
 * The loss is J = -log p(gold | c, u) = U(gold) + log Z, with gradient
 * dJ/dtheta = dU(gold)/dtheta - E_{xi ~ p}[dU(xi)/dtheta]. The model expectation is computed
 * exactly by enumeration, by self-normalized importance sampling, or by a Metropolis independence
 * chain; the latter two draw proposals from the factored retriever.
 */

namespace entriever {

enum class Estimator { kExact, kImportance, kMetropolis };

inline const char* to_string(Estimator e) {
  switch (e) {
    case Estimator::kExact:
      return "exact";
    case Estimator::kImportance:
      return "is";
    case Estimator::kMetropolis:
      return "mis";
  }
  return "unknown";
}

struct GradEstimate {
  std::vector<double> gradient;  ///< dJ/dtheta, aligned with the energy parameters
  double data_energy = 0.0;      ///< U(gold)
  std::optional<double> effective_sample_size;
  std::optional<double> acceptance_rate;
};

inline constexpr std::size_t kMaxExactGradientPieces = 12;

namespace detail {

inline const SubsetMask& require_gold(const TurnExample& turn) {
  if (!turn.gold) {
    throw Error(ErrorKind::kData, "turn " + turn.session_id + "/" + std::to_string(turn.turn_index) +
                                      " has no gold subset");
  }
  return *turn.gold;
}

}  // namespace detail

inline GradEstimate mle_grad_exact(const TurnExample& turn, const EnergyModel& model) {
  const auto& gold = detail::require_gold(turn);
  TurnEnergy scorer(model, turn);
  if (scorer.num_pieces() > kMaxExactGradientPieces) {
    throw Error(ErrorKind::kScale, "exact gradient limited to N <= 12");
  }
  auto scores = enumerate_unnorm_logp(scorer, kMaxExactGradientPieces);
  const double log_z = log_sum_exp(scores);
  GradEstimate out;
  out.gradient.assign(model.num_params(), 0.0);
  out.data_energy = scorer.energy(gold);
  scorer.accumulate_energy_grad(gold, 1.0, out.gradient);
  const std::size_t n = scorer.num_pieces();
  for (std::uint64_t bits = 0; bits < scores.size(); ++bits) {
    const double p = std::exp(scores[bits] - log_z);
    if (p > 0.0) {
      scorer.accumulate_energy_grad(SubsetMask(n, bits), -p, out.gradient);
    }
  }
  return out;
}

/// dU/dtheta at one mask.
inline std::vector<double> energy_grad_at(const TurnExample& turn, const SubsetMask& mask, const EnergyModel& model) {
  TurnEnergy scorer(model, turn);
  std::vector<double> grad(model.num_params(), 0.0);
  scorer.accumulate_energy_grad(mask, 1.0, grad);
  return grad;
}

/// Model-expectation term E[dU/dtheta] recovered from a gradient estimate: dU(gold) - dJ.
inline std::vector<double> expectation_term(const GradEstimate& estimate, const TurnExample& turn,
                                            const EnergyModel& model) {
  auto out = energy_grad_at(turn, detail::require_gold(turn), model);
  axpy(-1.0, estimate.gradient, out);
  return out;
}

/// -log p(gold | c, u) by enumeration.
inline double exact_nll(const TurnExample& turn, const EnergyModel& model) {
  const auto& gold = detail::require_gold(turn);
  TurnEnergy scorer(model, turn);
  const double log_z = log_sum_exp(enumerate_unnorm_logp(scorer));
  return log_z - scorer.unnorm_logp(gold);
}

/// Log importance weight log p~(xi) - log q(xi). When the proposal is the residual reference this
/// reduces to -U and is computed that way.
class ImportanceWeigher {
 public:
  ImportanceWeigher(TurnEnergy& scorer, const PieceProbs& proposal, bool proposal_is_reference)
      : scorer_(&scorer), proposal_(&proposal), proposal_is_reference_(proposal_is_reference) {}

  double operator()(const SubsetMask& mask) {
    if (proposal_is_reference_) {
      return -scorer_->energy(mask);
    }
    return scorer_->unnorm_logp(mask) - subset_logprob(mask, *proposal_);
  }

 private:
  TurnEnergy* scorer_;
  const PieceProbs* proposal_;
  bool proposal_is_reference_;
};

inline bool is_reference_of(const EnergyModel& model, const FactoredRetriever& proposal) {
  return model.mode().is_residual() &&
         (&model.mode().reference() == &proposal || model.mode().reference() == proposal);
}

struct ImportanceDraws {
  std::vector<SubsetMask> masks;
  std::vector<double> log_weights;
  std::vector<double> weights;  ///< self-normalized
  double effective_sample_size = 0.0;
};

/// Draws S proposals and self-normalizes their weights with max subtraction.
inline ImportanceDraws importance_draws(TurnEnergy& scorer, const PieceProbs& proposal, bool proposal_is_reference,
                                        std::size_t samples, Rng& rng) {
  if (samples == 0) {
    throw Error(ErrorKind::kConfig, "sample size must be at least 1");
  }
  ImportanceWeigher weigh(scorer, proposal, proposal_is_reference);
  ImportanceDraws out;
  out.masks.reserve(samples);
  out.log_weights.reserve(samples);
  for (std::size_t j = 0; j < samples; ++j) {
    out.masks.push_back(sample_subset(proposal, rng));
    out.log_weights.push_back(weigh(out.masks.back()));
  }
  double max_lw = -std::numeric_limits<double>::infinity();
  for (double lw : out.log_weights) {
    max_lw = std::max(max_lw, lw);
  }
  if (!std::isfinite(max_lw)) {
    throw Error(ErrorKind::kEstimator, "importance weights are not finite");
  }
  out.weights.resize(samples);
  double total = 0.0;
  for (std::size_t j = 0; j < samples; ++j) {
    out.weights[j] = std::exp(out.log_weights[j] - max_lw);
    total += out.weights[j];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(ErrorKind::kEstimator, "importance weights underflow");
  }
  double sum_sq = 0.0;
  for (auto& w : out.weights) {
    w /= total;
    sum_sq += w * w;
  }
  out.effective_sample_size = 1.0 / sum_sq;
  return out;
}

inline GradEstimate is_grad_estimate(const TurnExample& turn, const EnergyModel& model,
                                     const FactoredRetriever& proposal, std::size_t samples, Rng& rng) {
  const auto& gold = detail::require_gold(turn);
  TurnEnergy scorer(model, turn);
  const auto q = proposal.piece_probs(turn);
  auto draws = importance_draws(scorer, q, is_reference_of(model, proposal), samples, rng);
  // Repeated masks share one backward pass.
  std::map<std::uint64_t, double> mass;
  for (std::size_t j = 0; j < draws.masks.size(); ++j) {
    mass[draws.masks[j].bits()] += draws.weights[j];
  }
  GradEstimate out;
  out.gradient.assign(model.num_params(), 0.0);
  out.data_energy = scorer.energy(gold);
  scorer.accumulate_energy_grad(gold, 1.0, out.gradient);
  for (const auto& [bits, w] : mass) {
    scorer.accumulate_energy_grad(SubsetMask(scorer.num_pieces(), bits), -w, out.gradient);
  }
  out.effective_sample_size = draws.effective_sample_size;
  return out;
}

/// Metropolis independence acceptance test: accept iff eta <= min(1, exp(lw_new - lw_old)).
inline bool mis_accept(double lw_new, double lw_old, double eta) {
  return eta <= std::exp(std::min(0.0, lw_new - lw_old));
}

struct MisTrajectory {
  SubsetMask initial;
  std::vector<SubsetMask> states;  ///< xi^(1..T)
  std::size_t accepted = 0;

  [[nodiscard]] double acceptance_rate() const {
    return states.empty() ? 0.0 : static_cast<double>(accepted) / static_cast<double>(states.size());
  }
};

/**
 * Metropolis independence chain targeting p(xi | c, u). The initial state is a proposal draw;
 * each step draws a proposal, then eta ~ U[0,1], and accepts iff eta <= min(1, w'/w).
 */
template <class LogWeight>
MisTrajectory run_mis_chain(const PieceProbs& proposal, LogWeight&& log_weight, std::size_t steps, Rng& rng) {
  if (steps == 0) {
    throw Error(ErrorKind::kConfig, "chain length must be at least 1");
  }
  MisTrajectory out;
  out.initial = sample_subset(proposal, rng);
  SubsetMask current = out.initial;
  double current_lw = log_weight(current);
  out.states.reserve(steps);
  for (std::size_t tau = 0; tau < steps; ++tau) {
    SubsetMask candidate = sample_subset(proposal, rng);
    const double candidate_lw = log_weight(candidate);
    const double eta = uniform01(rng);
    if (mis_accept(candidate_lw, current_lw, eta)) {
      current = candidate;
      current_lw = candidate_lw;
      ++out.accepted;
    }
    out.states.push_back(current);
  }
  return out;
}

inline GradEstimate mis_grad_estimate(const TurnExample& turn, const EnergyModel& model,
                                      const FactoredRetriever& proposal, std::size_t steps, Rng& rng) {
  const auto& gold = detail::require_gold(turn);
  TurnEnergy scorer(model, turn);
  const auto q = proposal.piece_probs(turn);
  ImportanceWeigher weigh(scorer, q, is_reference_of(model, proposal));
  std::map<std::uint64_t, double> cache;
  auto cached = [&](const SubsetMask& m) {
    auto it = cache.find(m.bits());
    if (it != cache.end()) {
      return it->second;
    }
    const double lw = weigh(m);
    cache.emplace(m.bits(), lw);
    return lw;
  };
  auto chain = run_mis_chain(q, cached, steps, rng);
  std::map<std::uint64_t, std::size_t> visits;
  for (const auto& s : chain.states) {
    ++visits[s.bits()];
  }
  GradEstimate out;
  out.gradient.assign(model.num_params(), 0.0);
  out.data_energy = scorer.energy(gold);
  scorer.accumulate_energy_grad(gold, 1.0, out.gradient);
  const double inv_t = 1.0 / static_cast<double>(steps);
  for (const auto& [bits, count] : visits) {
    scorer.accumulate_energy_grad(SubsetMask(scorer.num_pieces(), bits), -static_cast<double>(count) * inv_t,
                                  out.gradient);
  }
  out.acceptance_rate = chain.acceptance_rate();
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference verification

/// |a - b| / max(|a|, |b|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares an analytic gradient against central differences of `loss` over every coordinate.
template <class Loss>
FiniteDiffReport compare_finite_differences(std::vector<double>& params, std::span<const double> analytic,
                                            Loss&& loss, double epsilon, double floor = 1e-3) {
  FiniteDiffReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + epsilon;
    const double up = loss();
    params[i] = saved - epsilon;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double err = relative_error(analytic[i], numeric, floor);
    if (err > report.max_relative_error || i == 0) {
      report = {std::max(err, report.max_relative_error), i, analytic[i], numeric};
    }
  }
  return report;
}

inline FiniteDiffReport finite_diff_check(EnergyModel model, const TurnExample& turn, double epsilon) {
  if (turn.num_pieces() > 10) {
    throw Error(ErrorKind::kScale, "finite-difference check limited to N <= 10");
  }
  const auto grad = mle_grad_exact(turn, model).gradient;
  return compare_finite_differences(model.scorer().params(), grad, [&] { return exact_nll(turn, model); }, epsilon);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainerConfig {
  Estimator estimator = Estimator::kImportance;
  std::size_t samples = 12;  ///< S for importance sampling, chain steps T for MIS
  double lr = 0.02;
  std::size_t epochs = 10;
  std::size_t batch = 8;
  std::uint64_t seed = 1;
  EnergyForm form = EnergyForm::kResidual;
  RetrieverShape shape;
  std::size_t workers = 1;
};

struct EnergyEpochLog {
  std::size_t epoch = 0;
  double mean_data_energy = 0.0;
  double mean_acceptance_or_ess = 0.0;
  double wall_ms = 0.0;
  std::size_t estimator_errors = 0;
};

template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t count = std::min(workers, n);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += count) {
        fn(i);
      }
    });
  }
  for (auto& t : pool) {
    t.join();
  }
}

inline GradEstimate estimate_gradient(const TurnExample& turn, const EnergyModel& model,
                                      const FactoredRetriever& proposal, const TrainerConfig& config, Rng& rng) {
  switch (config.estimator) {
    case Estimator::kExact:
      return mle_grad_exact(turn, model);
    case Estimator::kImportance:
      return is_grad_estimate(turn, model, proposal, config.samples, rng);
    case Estimator::kMetropolis:
      return mis_grad_estimate(turn, model, proposal, config.samples, rng);
  }
  throw Error(ErrorKind::kConfig, "unknown estimator");
}

/// SGD on the MLE gradient. Continues from `model`'s current parameters.
inline void fit_energy(EnergyModel& model, const std::vector<TurnExample>& turns, const FactoredRetriever& proposal,
                       const TrainerConfig& config, std::vector<EnergyEpochLog>* log = nullptr) {
  if (config.samples == 0) {
    throw Error(ErrorKind::kConfig, "samples must be at least 1");
  }
  for (const auto& t : turns) {
    detail::require_gold(t);
  }
  const std::size_t batch = std::max<std::size_t>(1, config.batch);
  std::vector<double> step(model.num_params());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto order = epoch_order(config.seed, epoch, turns.size());
    EnergyEpochLog entry;
    entry.epoch = epoch;
    std::size_t ok = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<std::optional<GradEstimate>> results(end - start);
      parallel_for(end - start, config.workers, [&](std::size_t k) {
        const std::size_t id = order[start + k];
        auto rng = derive_rng(config.seed, {id, epoch});
        try {
          results[k] = estimate_gradient(turns[id], model, proposal, config, rng);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kEstimator) {
            throw;
          }
        }
      });
      std::fill(step.begin(), step.end(), 0.0);
      std::size_t used = 0;
      for (auto& r : results) {
        if (!r) {
          ++entry.estimator_errors;
          continue;
        }
        axpy(1.0, r->gradient, step);
        entry.mean_data_energy += r->data_energy;
        if (r->acceptance_rate) {
          entry.mean_acceptance_or_ess += *r->acceptance_rate;
        } else if (r->effective_sample_size) {
          entry.mean_acceptance_or_ess += *r->effective_sample_size;
        }
        ++used;
      }
      ok += used;
      if (used > 0 && config.lr != 0.0) {
        axpy(-config.lr / static_cast<double>(used), step, model.scorer().params());
      }
    }
    if (!turns.empty() && 2 * entry.estimator_errors > turns.size()) {
      throw Error(ErrorKind::kEstimator, "estimator failed on " + std::to_string(entry.estimator_errors) + " of " +
                                             std::to_string(turns.size()) + " turns in epoch " +
                                             std::to_string(epoch));
    }
    if (ok > 0) {
      entry.mean_data_energy /= static_cast<double>(ok);
      entry.mean_acceptance_or_ess /= static_cast<double>(ok);
    }
    entry.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    if (log != nullptr) {
      log->push_back(entry);
    }
  }
}

inline EnergyModel train_energy(const std::vector<TurnExample>& turns,
                                const std::shared_ptr<const FactoredRetriever>& proposal, std::size_t vocab,
                                const TrainerConfig& config, std::vector<EnergyEpochLog>* log = nullptr) {
  if (!proposal) {
    throw Error(ErrorKind::kConfig, "energy training requires a proposal retriever");
  }
  auto mode = config.form == EnergyForm::kResidual ? EnergyMode::residual(proposal) : EnergyMode::non_residual();
  auto model = init_energy(vocab, config.shape, std::move(mode), config.seed);
  fit_energy(model, turns, *proposal, config, log);
  return model;
}

}  // namespace entriever

#endif
