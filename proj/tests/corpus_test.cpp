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

#include <entriever/corpus.hpp>

#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

namespace entriever {
namespace {

std::string dump(const Corpus& corpus) {
  std::ostringstream out;
  write_jsonl(corpus, out);
  return out.str();
}

Corpus parse(const std::string& text) {
  std::istringstream in(text);
  return read_jsonl(in);
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::kConfig;
}

TEST(SubsetMask, BitsBeyondWidthAreRejected) {
  EXPECT_THROW(SubsetMask(3, 0b1000), Error);
  EXPECT_NO_THROW(SubsetMask(3, 0b111));
  EXPECT_EQ(kind_of([] { SubsetMask(64); }), ErrorKind::kScale);
  SubsetMask m(4);
  EXPECT_EQ(kind_of([&] { m.set(4); }), ErrorKind::kDimension);
}

TEST(SubsetMask, EqualityIsBitwiseAndWidthAware) {
  EXPECT_EQ(SubsetMask::from_indices(5, {0, 3}), SubsetMask(5, 0b01001));
  EXPECT_NE(SubsetMask(5, 1), SubsetMask(6, 1));
  EXPECT_EQ(SubsetMask(5, 0b00110).to_string(), "01100");
}

TEST(SubsetMask, LexOrderDecidedAtFirstPiece) {
  // Piece 0 unselected sorts before piece 0 selected, whatever follows.
  EXPECT_TRUE(lex_less(SubsetMask(3, 0b110), SubsetMask(3, 0b001)));
  EXPECT_FALSE(lex_less(SubsetMask(3, 0b001), SubsetMask(3, 0b110)));
  EXPECT_TRUE(lex_less(SubsetMask(3, 0b000), SubsetMask(3, 0b100)));
  EXPECT_FALSE(lex_less(SubsetMask(3, 0b101), SubsetMask(3, 0b101)));
}

TEST(SubsetMask, LexOrderMatchesStringComparison) {
  for (std::uint64_t a = 0; a < 64; ++a) {
    for (std::uint64_t b = 0; b < 64; ++b) {
      const SubsetMask ma(6, a);
      const SubsetMask mb(6, b);
      EXPECT_EQ(lex_less(ma, mb), ma.to_string() < mb.to_string()) << a << " " << b;
    }
  }
}

TEST(Tokenize, SplitsWhitespaceAndPunctuation) {
  EXPECT_EQ(tokenize("  hello, world!  "), (std::vector<std::string>{"hello", ",", "world", "!"}));
  EXPECT_TRUE(tokenize("   ").empty());
}

TEST(Synthetic, SameSeedIsByteIdentical) {
  SyntheticConfig c;
  c.num_sessions = 30;
  c.turns_per_session = 3;
  EXPECT_EQ(dump(generate_synthetic(c)), dump(generate_synthetic(c)));
  auto other = c;
  other.seed = 2;
  EXPECT_NE(dump(generate_synthetic(c)), dump(generate_synthetic(other)));
}

TEST(Synthetic, ZeroCorrelationNeverSharesValues) {
  SyntheticConfig c;
  c.num_sessions = 200;
  c.correlation_strength = 0.0;
  for (const auto& s : generate_synthetic(c)) {
    std::map<std::string, std::set<std::string>> owners;
    for (const auto& p : s.kb->pieces) {
      owners[p.value].insert(p.entity);
    }
    for (const auto& [value, entities] : owners) {
      EXPECT_EQ(entities.size(), 1U) << value;
    }
  }
}

TEST(Synthetic, PositiveCorrelationSharesValues) {
  SyntheticConfig c;
  c.num_sessions = 50;
  c.correlation_strength = 0.8;
  std::size_t shared = 0;
  for (const auto& s : generate_synthetic(c)) {
    std::map<std::string, std::set<std::string>> owners;
    for (const auto& p : s.kb->pieces) {
      owners[p.value].insert(p.entity);
    }
    for (const auto& [value, entities] : owners) {
      shared += entities.size() > 1 ? 1 : 0;
    }
  }
  EXPECT_GT(shared, 0U);
}

TEST(Synthetic, KbWidthIsEntitiesTimesSlots) {
  SyntheticConfig c;
  c.entities = 2;
  c.slots = 3;
  c.num_sessions = 20;
  c.turns_per_session = 2;
  for (const auto& s : generate_synthetic(c)) {
    ASSERT_TRUE(s.kb);
    EXPECT_EQ(s.kb->size(), 6U);
    for (const auto& t : s.turns) {
      ASSERT_TRUE(t.gold_mask);
      EXPECT_EQ(t.gold_mask->width(), 6U);
    }
  }
}

TEST(Synthetic, GoldSubsetIsTheUniqueMatchAndResponseCarriesItsValues) {
  SyntheticConfig c;
  c.num_sessions = 100;
  c.correlation_strength = 0.9;
  for (const auto& s : generate_synthetic(c)) {
    for (const auto& t : s.turns) {
      const auto& gold = *t.gold_mask;
      ASSERT_FALSE(gold.empty());
      std::set<std::string> entities;
      for (std::size_t i = 0; i < gold.width(); ++i) {
        if (gold.test(i)) {
          const auto& p = s.kb->pieces[i];
          entities.insert(p.entity);
          EXPECT_NE(t.response.find(p.value), std::string::npos);
        }
      }
      ASSERT_EQ(entities.size(), 1U);
      EXPECT_NE(t.response.find(*entities.begin()), std::string::npos);
      ASSERT_TRUE(t.requested_values);
      EXPECT_EQ(*t.requested_values, std::vector<std::string>{*entities.begin()});
      // No other entity matches every constraint value of the group.
      std::size_t matches = 0;
      for (std::size_t e = 0; e < c.entities; ++e) {
        bool all = true;
        for (std::size_t i = 0; i < gold.width(); ++i) {
          if (gold.test(i)) {
            const auto slot = i % c.slots;
            all = all && s.kb->pieces[e * c.slots + slot].value == s.kb->pieces[i].value;
          }
        }
        matches += all ? 1 : 0;
      }
      EXPECT_EQ(matches, 1U);
    }
  }
}

TEST(Synthetic, ConfigBoundsAreEnforced) {
  SyntheticConfig c;
  c.entities = 8;
  c.slots = 8;
  c.vocab_size = 64;
  EXPECT_EQ(kind_of([&] { generate_synthetic(c); }), ErrorKind::kConfig);
  c = {};
  c.vocab_size = 15;
  EXPECT_EQ(kind_of([&] { generate_synthetic(c); }), ErrorKind::kConfig);
  c = {};
  c.correlation_strength = 1.5;
  EXPECT_EQ(kind_of([&] { generate_synthetic(c); }), ErrorKind::kConfig);
  c = {};
  c.entities = 4;
  c.slots = 5;
  c.vocab_size = 16;
  EXPECT_EQ(kind_of([&] { generate_synthetic(c); }), ErrorKind::kConfig);
}

TEST(Jsonl, RoundTripIsIdentity) {
  SyntheticConfig c;
  c.num_sessions = 25;
  c.turns_per_session = 3;
  const auto corpus = generate_synthetic(c);
  const auto text = dump(corpus);
  const auto back = parse(text);
  EXPECT_EQ(back, corpus);
  EXPECT_EQ(dump(back), text);
}

TEST(Jsonl, MissingUserNamesLineAndField) {
  const std::string text =
      R"({"session_id":"a","labeled":false,"turns":[{"user":"hi","response":"yo"}]})"
      "\n"
      R"({"session_id":"b","labeled":false,"turns":[{"response":"yo"}]})"
      "\n";
  try {
    parse(text);
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("user"), std::string::npos);
  }
}

TEST(Jsonl, UnlabeledSessionMayOmitKb) {
  const auto corpus = parse(R"({"session_id":"u","labeled":false,"turns":[{"user":"a b","response":"c"}]})");
  ASSERT_EQ(corpus.size(), 1U);
  EXPECT_FALSE(corpus[0].kb.has_value());
  EXPECT_FALSE(corpus[0].turns[0].gold_mask.has_value());
  const auto encoded = encode_session(corpus[0], build_vocab(corpus));
  EXPECT_EQ(encoded.turns[0].num_pieces(), 0U);
}

TEST(Jsonl, LabeledSessionsNeedKbAndGold) {
  EXPECT_THROW(parse(R"({"session_id":"x","labeled":true,"turns":[{"user":"a","response":"b","gold":[]}]})"), Error);
  EXPECT_THROW(
      parse(R"({"session_id":"x","labeled":true,"kb":[{"id":"p","entity":"e","slot":"s","value":"v"}],)"
            R"("turns":[{"user":"a","response":"b"}]})"),
      Error);
  EXPECT_THROW(
      parse(R"({"session_id":"x","labeled":true,"kb":[{"id":"p","entity":"e","slot":"s","value":"v"}],)"
            R"("turns":[{"user":"a","response":"b","gold":["q"]}]})"),
      Error);
  EXPECT_THROW(parse("{not json"), Error);
}

TEST(Vocab, DeterministicFrequencyThenLexicographic) {
  const auto corpus = parse(
      R"({"session_id":"a","labeled":false,"turns":[{"user":"b a a","response":"c b"}]})"
      "\n");
  const auto v1 = build_vocab(corpus);
  const auto v2 = build_vocab(corpus);
  EXPECT_EQ(v1, v2);
  ASSERT_EQ(v1.size(), kNumReserved + 3);
  EXPECT_EQ(v1.word(0), "<pad>");
  EXPECT_EQ(v1.word(kSep), "<sep>");
  EXPECT_EQ(v1.word(kBos), "<bos>");
  EXPECT_EQ(v1.word(kEos), "<eos>");
  EXPECT_EQ(v1.word(kUnk), "<unk>");
  EXPECT_EQ(v1.word(5), "a");
  EXPECT_EQ(v1.word(6), "b");
  EXPECT_EQ(v1.word(7), "c");
}

TEST(Vocab, UnknownWordsMapToUnkAndEmptyNeverGetsAnId) {
  const auto corpus = parse(R"({"session_id":"a","labeled":false,"turns":[{"user":"x","response":""}]})");
  const auto vocab = build_vocab(corpus);
  EXPECT_EQ(vocab.id("never-seen"), kUnk);
  EXPECT_EQ(vocab.id(""), kUnk);
  EXPECT_EQ(vocab.encode("x zzz"), (Tokens{5, kUnk}));
}

TEST(Vocab, FileRoundTrip) {
  SyntheticConfig c;
  c.num_sessions = 5;
  const auto vocab = build_vocab(generate_synthetic(c));
  const auto path = testing::TempDir() + "vocab.txt";
  vocab.save(path);
  EXPECT_EQ(Vocabulary::load(path), vocab);
}

TEST(Encode, ContextGrowsAndStartsEmpty) {
  SyntheticConfig c;
  c.num_sessions = 10;
  c.turns_per_session = 4;
  const auto corpus = generate_synthetic(c);
  const auto vocab = build_vocab(corpus);
  for (const auto& s : encode_corpus(corpus, vocab)) {
    ASSERT_EQ(s.turns.size(), 4U);
    EXPECT_TRUE(s.turns[0].context.empty());
    for (std::size_t t = 1; t < s.turns.size(); ++t) {
      const auto& prev = s.turns[t - 1];
      EXPECT_EQ(s.turns[t].context.size(), prev.context.size() + prev.user.size() + prev.response.size());
    }
  }
}

TEST(Encode, PieceTextIsEntitySepSlotSepValue) {
  const Vocabulary vocab({"<pad>", "<sep>", "<bos>", "<eos>", "<unk>", "ent0", "slot1", "val7"});
  EXPECT_EQ(vocab.encode_piece({"p", "ent0", "slot1", "val7"}), (Tokens{5, kSep, 6, kSep, 7}));
}

}  // namespace
}  // namespace entriever
