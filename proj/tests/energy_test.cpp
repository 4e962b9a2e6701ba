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

#include <entriever/energy.hpp>
#include <entriever/verify.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace entriever {
namespace {

// Straight-line reference: serialize, sum embeddings, MLP, negate.
double reference_energy(const EnergyModel& model, const TurnExample& turn, const SubsetMask& mask) {
  Tokens seq = turn.context;
  seq.push_back(kSep);
  seq.insert(seq.end(), turn.user.begin(), turn.user.end());
  seq.push_back(kSep);
  bool first = true;
  for (std::size_t i = 0; i < mask.width(); ++i) {
    if (!mask.test(i)) {
      continue;
    }
    if (!first) {
      seq.push_back(kSep);
    }
    seq.insert(seq.end(), turn.kb->texts[i].begin(), turn.kb->texts[i].end());
    first = false;
  }
  const auto& shape = model.scorer().shape();
  const auto& p = model.scorer().params();
  std::vector<double> pooled(shape.d_emb, 0.0);
  for (Token t : seq) {
    for (std::size_t k = 0; k < shape.d_emb; ++k) {
      pooled[k] += p[shape.emb_offset() + t * shape.d_emb + k];
    }
  }
  double out = p[shape.b2_offset()];
  for (std::size_t j = 0; j < shape.hidden; ++j) {
    double a = p[shape.b1_offset() + j];
    for (std::size_t k = 0; k < shape.d_emb; ++k) {
      a += p[shape.w1_offset() + j * shape.d_emb + k] * pooled[k];
    }
    out += p[shape.w2_offset() + j] * std::tanh(a);
  }
  return -out;
}

TEST(Energy, ZeroWeightsGiveNegativeBias) {
  auto rng = derive_rng(31);
  const auto turn = make_fixture_turn(20, 4, rng);
  EnergyModel model(20, {4, 3}, EnergyMode::non_residual());
  model.scorer().head_bias() = 1.25;
  for (std::uint64_t bits = 0; bits < 16; ++bits) {
    EXPECT_DOUBLE_EQ(energy(turn, SubsetMask(4, bits), model), -1.25);
  }
}

TEST(Energy, MatchesSerializedReference) {
  auto rng = derive_rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    const auto turn = make_fixture_turn(25, 5, rng);
    auto model = init_energy(25, {5, 4}, EnergyMode::non_residual(), 100 + trial);
    scale_params(model.scorer().params(), 5.0);
    TurnEnergy scorer(model, turn);
    for (std::uint64_t bits = 0; bits < 32; ++bits) {
      const SubsetMask m(5, bits);
      EXPECT_NEAR(scorer.energy(m), reference_energy(model, turn, m), 1e-12);
    }
  }
}

TEST(Energy, TwoPieceHandExample) {
  // d = 1, h = 1: embedding of token t is 0.1 * t, W1 = 1, b1 = 0, w = 2, b = 0.5.
  TurnExample turn;
  turn.context = {};
  turn.user = {5};
  auto kb = std::make_shared<EncodedKb>();
  kb->pieces = {{"a", "e", "s", "v"}, {"b", "e", "s", "v"}};
  kb->texts = {{6}, {7}};
  turn.kb = kb;
  EnergyModel model(8, {1, 1}, EnergyMode::non_residual());
  auto& p = model.scorer().params();
  const auto& shape = model.scorer().shape();
  for (std::size_t t = 0; t < 8; ++t) {
    p[t] = 0.1 * static_cast<double>(t);
  }
  p[shape.w1_offset()] = 1.0;
  p[shape.w2_offset()] = 2.0;
  p[shape.b2_offset()] = 0.5;
  // Sequences: [SEP 5 SEP], [SEP 5 SEP 6], [SEP 5 SEP 7], [SEP 5 SEP 6 SEP 7].
  EXPECT_NEAR(energy(turn, SubsetMask(2, 0b00), model), -(2.0 * std::tanh(0.7) + 0.5), 1e-12);
  EXPECT_NEAR(energy(turn, SubsetMask(2, 0b01), model), -(2.0 * std::tanh(1.3) + 0.5), 1e-12);
  EXPECT_NEAR(energy(turn, SubsetMask(2, 0b10), model), -(2.0 * std::tanh(1.4) + 0.5), 1e-12);
  EXPECT_NEAR(energy(turn, SubsetMask(2, 0b11), model), -(2.0 * std::tanh(2.1) + 0.5), 1e-12);
}

TEST(Energy, EmptyMaskAndEmptyKbAreFinite) {
  auto rng = derive_rng(33);
  auto turn = make_fixture_turn(20, 3, rng);
  const auto model = init_energy(20, {4, 3}, EnergyMode::non_residual(), 1);
  EXPECT_TRUE(std::isfinite(energy(turn, SubsetMask(3), model)));
  turn.kb = std::make_shared<EncodedKb>();
  EXPECT_TRUE(std::isfinite(energy(turn, SubsetMask(0), model)));
  EXPECT_NEAR(exact_log_partition(turn, model), unnorm_logp(turn, SubsetMask(0), model), 1e-15);
}

TEST(Energy, PoolingIgnoresTokenOrderWithinSpans) {
  auto rng = derive_rng(34);
  auto turn = make_fixture_turn(20, 4, rng, 6, 5);
  const auto model = init_energy(20, {5, 4}, EnergyMode::non_residual(), 2);
  std::vector<double> before;
  for (std::uint64_t bits = 0; bits < 16; ++bits) {
    before.push_back(energy(turn, SubsetMask(4, bits), model));
  }
  std::reverse(turn.context.begin(), turn.context.end());
  std::reverse(turn.user.begin(), turn.user.end());
  for (std::uint64_t bits = 0; bits < 16; ++bits) {
    EXPECT_NEAR(energy(turn, SubsetMask(4, bits), model), before[bits], 1e-13);
  }
}

TEST(Energy, WidthMismatchIsDimensionError) {
  auto rng = derive_rng(35);
  const auto turn = make_fixture_turn(20, 3, rng);
  const auto model = init_energy(20, {4, 3}, EnergyMode::non_residual(), 1);
  try {
    (void)energy(turn, SubsetMask(4, 1), model);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(Energy, ResidualWithZeroEnergyIsTheReference) {
  auto rng = derive_rng(36);
  const auto turn = make_fixture_turn(20, 5, rng);
  auto ref = std::make_shared<FactoredRetriever>(init_retriever(20, {4, 3}, false, 7));
  scale_params(ref->scorer().params(), 6.0);
  const EnergyModel model(20, {4, 3}, EnergyMode::residual(ref));
  const auto probs = ref->piece_probs(turn);
  const auto dist = exact_distribution(turn, model);
  for (std::uint64_t bits = 0; bits < 32; ++bits) {
    const SubsetMask m(5, bits);
    EXPECT_NEAR(unnorm_logp(turn, m, model), subset_logprob(m, probs), 1e-12);
    EXPECT_NEAR(dist[bits], std::exp(subset_logprob(m, probs)), 1e-12);
  }
  EXPECT_NEAR(exact_log_partition(turn, model), 0.0, 1e-12);
}

TEST(Energy, ConstantNonResidualEnergyIsUniform) {
  auto rng = derive_rng(37);
  for (std::size_t n = 0; n <= 8; ++n) {
    const auto turn = make_fixture_turn(20, n, rng);
    EnergyModel model(20, {4, 3}, EnergyMode::non_residual());
    model.scorer().head_bias() = -0.3;
    EXPECT_NEAR(exact_log_partition(turn, model), static_cast<double>(n) * std::log(2.0) - 0.3, 1e-12);
    for (double p : exact_distribution(turn, model)) {
      EXPECT_NEAR(p, std::ldexp(1.0, -static_cast<int>(n)), 1e-14);
    }
  }
}

TEST(Energy, SinglePieceWorkedExample) {
  // U({}) = 0 and U({x}) = log 2 give p({}) = 2/3.
  TurnExample turn;
  turn.user = {5};
  auto kb = std::make_shared<EncodedKb>();
  kb->pieces = {{"a", "e", "s", "v"}};
  kb->texts = {{6}};
  turn.kb = kb;
  EnergyModel model(8, {1, 1}, EnergyMode::non_residual());
  auto& p = model.scorer().params();
  const auto& shape = model.scorer().shape();
  // Only token 6 has a non-zero embedding, so the empty mask pools to 0.
  p[6] = 1.0;
  p[shape.w1_offset()] = 1.0;
  p[shape.w2_offset()] = -std::log(2.0) / std::tanh(1.0);
  EXPECT_NEAR(energy(turn, SubsetMask(1, 0), model), 0.0, 1e-15);
  EXPECT_NEAR(energy(turn, SubsetMask(1, 1), model), std::log(2.0), 1e-12);
  EXPECT_NEAR(exact_prob(turn, SubsetMask(1, 0), model), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(exact_prob(turn, SubsetMask(1, 1), model), 1.0 / 3.0, 1e-12);
}

TEST(Energy, DistributionInvariantToEnergyShift) {
  auto rng = derive_rng(38);
  const auto turn = make_fixture_turn(20, 6, rng);
  auto ref = std::make_shared<FactoredRetriever>(init_retriever(20, {4, 3}, false, 9));
  for (int residual = 0; residual < 2; ++residual) {
    auto model = init_energy(20, {4, 3}, residual ? EnergyMode::residual(ref) : EnergyMode::non_residual(), 11);
    scale_params(model.scorer().params(), 4.0);
    const auto before = exact_distribution(turn, model);
    const double log_z = exact_log_partition(turn, model);
    model.scorer().head_bias() += 3.0;
    const auto after = exact_distribution(turn, model);
    for (std::size_t i = 0; i < before.size(); ++i) {
      EXPECT_NEAR(before[i], after[i], 1e-12);
    }
    EXPECT_NEAR(exact_log_partition(turn, model), log_z + 3.0, 1e-12);
  }
}

TEST(Energy, EnumerationRefusesLargeKb) {
  auto rng = derive_rng(39);
  const auto turn = make_fixture_turn(20, 17, rng);
  const auto model = init_energy(20, {4, 3}, EnergyMode::non_residual(), 1);
  try {
    (void)exact_log_partition(turn, model);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kScale);
  }
  EXPECT_TRUE(std::isfinite(energy(turn, SubsetMask(17, 0x1F0F1), model)));
}

TEST(Energy, ResidualModeErrors) {
  EXPECT_THROW(EnergyMode::residual(nullptr), Error);
  auto ref = std::make_shared<FactoredRetriever>(init_retriever(20, {4, 3}, false, 1));
  const EnergyModel model(20, {4, 3}, EnergyMode::residual(ref));
  auto rng = derive_rng(40);
  auto turn = make_fixture_turn(20, 2, rng);
  turn.kb.reset();
  try {
    TurnEnergy scorer(model, turn);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMode);
  }
}

TEST(Energy, GradientMatchesFiniteDifferences) {
  auto rng = derive_rng(41);
  const auto turn = make_fixture_turn(20, 4, rng);
  auto model = init_energy(20, {4, 3}, EnergyMode::non_residual(), 5);
  scale_params(model.scorer().params(), 4.0);
  const SubsetMask mask(4, 0b1011);
  std::vector<double> grad(model.num_params(), 0.0);
  TurnEnergy(model, turn).accumulate_energy_grad(mask, 1.0, grad);
  const auto report = compare_finite_differences(model.scorer().params(), grad,
                                                 [&] { return energy(turn, mask, model); }, 1e-5);
  EXPECT_LT(report.max_relative_error, 1e-5);
}

}  // namespace
}  // namespace entriever
