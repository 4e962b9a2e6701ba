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

#ifndef ENTRIEVER_VERIFY_HPP
#define ENTRIEVER_VERIFY_HPP

#include <entriever/candidates.hpp>
#include <entriever/energy.hpp>
#include <entriever/generation.hpp>
#include <entriever/jsa.hpp>
#include <entriever/proposal.hpp>
#include <entriever/trainer.hpp>

#include <sstream>
#include <string>
#include <vector>

/**
 * \file
 * \brief Self-checks against enumeration, finite differences and long sampler runs on small random fixtures.
 */

namespace entriever {

/// Random turn over token ids [kNumReserved, vocab) with `n` pieces of three tokens each.
inline TurnExample make_fixture_turn(std::size_t vocab, std::size_t n, Rng& rng, std::size_t context_len = 4,
                                     std::size_t user_len = 4, std::size_t response_len = 4) {
  if (vocab <= kNumReserved) {
    throw Error(ErrorKind::kConfig, "fixture vocabulary must exceed the reserved ids");
  }
  std::uniform_int_distribution<Token> word(static_cast<Token>(kNumReserved), static_cast<Token>(vocab - 1));
  auto draw = [&](std::size_t len) {
    Tokens t(len);
    for (auto& x : t) {
      x = word(rng);
    }
    return t;
  };
  TurnExample turn;
  turn.session_id = "fixture";
  turn.context = draw(context_len);
  turn.user = draw(user_len);
  turn.response = draw(response_len);
  auto kb = std::make_shared<EncodedKb>();
  for (std::size_t i = 0; i < n; ++i) {
    kb->pieces.push_back({"p" + std::to_string(i), "e", "s", "v"});
    Tokens text = draw(1);
    text.push_back(kSep);
    text.push_back(word(rng));
    text.push_back(kSep);
    text.push_back(word(rng));
    kb->texts.push_back(std::move(text));
  }
  turn.kb = std::move(kb);
  SubsetMask gold(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (uniform01(rng) < 0.3) {
      gold.set(i);
    }
  }
  turn.gold = gold;
  return turn;
}

/// Random piece probabilities, occasionally snapped to 0.5 or the clamp bounds to exercise ties.
inline PieceProbs random_piece_probs(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  for (auto& v : p) {
    const double u = uniform01(rng);
    if (u < 0.1) {
      v = 0.5;
    } else if (u < 0.15) {
      v = 0.0;
    } else {
      v = uniform01(rng);
    }
  }
  return PieceProbs(std::move(p));
}

inline void scale_params(std::vector<double>& params, double factor) {
  for (auto& p : params) {
    p *= factor;
  }
}

/// Total variation distance between two distributions over the same support.
inline double total_variation(std::span<const double> a, std::span<const double> b) {
  double tv = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    tv += std::abs(a[i] - b[i]);
  }
  return 0.5 * tv;
}

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

}  // namespace detail

inline std::vector<CheckResult> verify_oracles(std::uint64_t seed = 1) {
  std::vector<CheckResult> out;
  auto rng = derive_rng(seed, {0x0c1ULL});
  {
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 10)(rng);
      const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
      const auto probs = random_piece_probs(n, rng);
      const auto beam = top_k_subsets(probs, k);
      const auto full = exhaustive_top_k(probs, k);
      bool same = beam.size() == full.size();
      for (std::size_t i = 0; same && i < beam.size(); ++i) {
        same = beam[i].mask == full[i].mask && beam[i].proposal_logprob == full[i].proposal_logprob;
      }
      mismatches += same ? 0 : 1;
    }
    out.push_back({"top-k beam equals exhaustive", mismatches == 0, std::to_string(mismatches) + " mismatches"});
  }
  {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 8)(rng);
      auto turn = make_fixture_turn(20, n, rng);
      auto ref = std::make_shared<FactoredRetriever>(init_retriever(20, {6, 5}, false, seed + trial));
      scale_params(ref->scorer().params(), 8.0);
      for (int residual = 0; residual < 2; ++residual) {
        auto model = init_energy(20, {6, 5}, residual ? EnergyMode::residual(ref) : EnergyMode::non_residual(),
                                 seed * 31 + trial);
        scale_params(model.scorer().params(), 8.0);
        const auto dist = exact_distribution(turn, model);
        double total = 0.0;
        for (double p : dist) {
          total += p;
        }
        worst = std::max(worst, std::abs(total - 1.0));
      }
    }
    out.push_back({"exact distribution sums to one", worst <= 1e-9, "max deviation " + detail::fmt(worst)});
  }
  {
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      auto turn = make_fixture_turn(20, 6, rng);
      auto ref = std::make_shared<FactoredRetriever>(init_retriever(20, {6, 5}, false, seed + 100 + trial));
      scale_params(ref->scorer().params(), 8.0);
      EnergyModel zero(20, {6, 5}, EnergyMode::residual(ref));
      const auto dist = exact_distribution(turn, zero);
      const auto probs = ref->piece_probs(turn);
      for (std::uint64_t bits = 0; bits < dist.size(); ++bits) {
        worst = std::max(worst, std::abs(dist[bits] - std::exp(subset_logprob(SubsetMask(6, bits), probs))));
      }
    }
    out.push_back({"residual with zero energy reproduces the reference", worst <= 1e-12,
                   "max deviation " + detail::fmt(worst)});
  }
  return out;
}

inline std::vector<CheckResult> verify_gradients(std::uint64_t seed = 1) {
  std::vector<CheckResult> out;
  auto rng = derive_rng(seed, {0x9e4ULL});
  {
    double worst = 0.0;
    for (int trial = 0; trial < 6; ++trial) {
      const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
      auto turn = make_fixture_turn(16, n, rng);
      auto ref = std::make_shared<FactoredRetriever>(init_retriever(16, {5, 4}, false, seed + trial));
      scale_params(ref->scorer().params(), 5.0);
      auto model = init_energy(16, {5, 4}, trial % 2 ? EnergyMode::residual(ref) : EnergyMode::non_residual(),
                               seed * 7 + trial);
      scale_params(model.scorer().params(), 5.0);
      worst = std::max(worst, finite_diff_check(model, turn, 1e-4).max_relative_error);
    }
    out.push_back({"energy gradient matches finite differences", worst < 1e-4, "max rel error " + detail::fmt(worst)});
  }
  {
    auto turn = make_fixture_turn(16, 4, rng);
    auto gen = init_gen(16, {5, 4}, seed);
    scale_params(gen.params(), 5.0);
    const SubsetMask mask = *turn.gold;
    std::vector<double> grad(gen.num_params(), 0.0);
    gen.logprob_grad(turn, mask, 1.0, grad);
    auto report = compare_finite_differences(gen.params(), grad, [&] { return gen.logprob(turn, mask); }, 1e-4);
    out.push_back({"generator gradient matches finite differences", report.max_relative_error < 1e-4,
                   "max rel error " + detail::fmt(report.max_relative_error)});
  }
  {
    auto turn = make_fixture_turn(16, 5, rng);
    auto inf = init_retriever(16, {5, 4}, true, seed);
    scale_params(inf.scorer().params(), 5.0);
    std::vector<double> grad(inf.num_params(), 0.0);
    inf.bce(turn, *turn.gold, grad);
    auto report = compare_finite_differences(inf.scorer().params(), grad, [&] { return inf.bce(turn, *turn.gold); },
                                             1e-4);
    out.push_back({"retriever gradient matches finite differences", report.max_relative_error < 1e-4,
                   "max rel error " + detail::fmt(report.max_relative_error)});
  }
  return out;
}

inline std::vector<CheckResult> verify_samplers(std::uint64_t seed = 1) {
  std::vector<CheckResult> out;
  auto rng = derive_rng(seed, {0x5a3ULL});
  auto turn = make_fixture_turn(16, 5, rng);
  auto ref = std::make_shared<FactoredRetriever>(init_retriever(16, {6, 5}, false, seed));
  scale_params(ref->scorer().params(), 6.0);
  auto model = init_energy(16, {6, 5}, EnergyMode::residual(ref), seed + 1);
  scale_params(model.scorer().params(), 6.0);
  const auto exact = exact_distribution(turn, model);
  {
    TurnEnergy scorer(model, turn);
    const auto q = ref->piece_probs(turn);
    ImportanceWeigher weigh(scorer, q, true);
    auto chain_rng = derive_rng(seed, {0x5a4ULL});
    const std::size_t steps = 100000;
    auto chain = run_mis_chain(q, weigh, steps, chain_rng);
    std::vector<double> freq(exact.size(), 0.0);
    for (const auto& s : chain.states) {
      freq[s.bits()] += 1.0 / static_cast<double>(steps);
    }
    const double tv = total_variation(freq, exact);
    out.push_back({"independence chain is stationary at the exact distribution", tv <= 0.02,
                   "total variation " + detail::fmt(tv)});
  }
  {
    const auto reference = expectation_term(mle_grad_exact(turn, model), turn, model);
    auto is_rng = derive_rng(seed, {0x5a5ULL});
    const auto estimate = expectation_term(is_grad_estimate(turn, model, *ref, 100000, is_rng), turn, model);
    std::vector<double> diff(reference.size());
    for (std::size_t i = 0; i < diff.size(); ++i) {
      diff[i] = estimate[i] - reference[i];
    }
    const double rel = l2_norm(diff) / std::max(l2_norm(reference), 1e-12);
    out.push_back({"importance-sampled expectation approaches the exact one", rel <= 0.05,
                   "relative L2 error " + detail::fmt(rel)});
  }
  return out;
}

}  // namespace entriever

#endif
