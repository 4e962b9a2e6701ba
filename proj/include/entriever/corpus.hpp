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

#ifndef ENTRIEVER_CORPUS_HPP
#define ENTRIEVER_CORPUS_HPP

#include <entriever/common.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

/**
 * \file
 * \brief Dialog sessions, knowledge bases, subset masks, vocabulary, synthetic corpora and JSON Lines IO.
 */

namespace entriever {

using Token = std::int32_t;
using Tokens = std::vector<Token>;

inline constexpr Token kPad = 0;
inline constexpr Token kSep = 1;
inline constexpr Token kBos = 2;
inline constexpr Token kEos = 3;
inline constexpr Token kUnk = 4;
inline constexpr std::size_t kNumReserved = 5;

/// Hard cap on knowledge base size; masks are stored in a single 64-bit word.
inline constexpr std::size_t kMaxPieces = 63;

/// A candidate retrieval result: bit i set iff knowledge piece i is selected.
class SubsetMask {
 public:
  SubsetMask() = default;

  explicit SubsetMask(std::size_t width, std::uint64_t bits = 0) : bits_(bits), width_(width) {
    if (width > kMaxPieces) {
      throw Error(ErrorKind::kScale, "mask width " + std::to_string(width) + " exceeds " + std::to_string(kMaxPieces));
    }
    if (width < 64 && (bits >> width) != 0) {
      throw Error(ErrorKind::kDimension, "mask has bits beyond its width");
    }
  }

  static SubsetMask from_indices(std::size_t width, std::initializer_list<std::size_t> indices) {
    SubsetMask mask(width);
    for (auto i : indices) {
      mask.set(i);
    }
    return mask;
  }

  [[nodiscard]] std::size_t width() const noexcept { return width_; }
  [[nodiscard]] std::uint64_t bits() const noexcept { return bits_; }
  [[nodiscard]] bool test(std::size_t i) const noexcept { return ((bits_ >> i) & 1ULL) != 0; }
  [[nodiscard]] std::size_t count() const noexcept { return static_cast<std::size_t>(std::popcount(bits_)); }
  [[nodiscard]] bool empty() const noexcept { return bits_ == 0; }

  void set(std::size_t i, bool value = true) {
    if (i >= width_) {
      throw Error(ErrorKind::kDimension, "piece index " + std::to_string(i) + " out of mask width");
    }
    if (value) {
      bits_ |= (1ULL << i);
    } else {
      bits_ &= ~(1ULL << i);
    }
  }

  /// True iff every bit set here is also set in `other`.
  [[nodiscard]] bool subset_of(const SubsetMask& other) const noexcept { return (bits_ & ~other.bits_) == 0; }

  [[nodiscard]] std::string to_string() const {
    std::string out;
    out.reserve(width_);
    for (std::size_t i = 0; i < width_; ++i) {
      out.push_back(test(i) ? '1' : '0');
    }
    return out;
  }

  friend bool operator==(const SubsetMask&, const SubsetMask&) = default;

 private:
  std::uint64_t bits_ = 0;
  std::size_t width_ = 0;
};

/// Lexicographic order on the bit sequence (piece 0 first, unselected before selected).
/// The empty mask is the smallest mask of any width.
inline bool lex_less(const SubsetMask& a, const SubsetMask& b) noexcept {
  const std::uint64_t diff = a.bits() ^ b.bits();
  if (diff == 0) {
    return a.width() < b.width();
  }
  const std::uint64_t lowest = diff & (~diff + 1);
  return (a.bits() & lowest) == 0;
}

struct KnowledgePiece {
  std::string piece_id;
  std::string entity;
  std::string slot;
  std::string value;

  friend bool operator==(const KnowledgePiece&, const KnowledgePiece&) = default;
};

struct KnowledgeBase {
  std::vector<KnowledgePiece> pieces;

  [[nodiscard]] std::size_t size() const noexcept { return pieces.size(); }

  [[nodiscard]] std::optional<std::size_t> index_of(const std::string& piece_id) const {
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      if (pieces[i].piece_id == piece_id) {
        return i;
      }
    }
    return std::nullopt;
  }

  friend bool operator==(const KnowledgeBase&, const KnowledgeBase&) = default;
};

struct Turn {
  std::string user;
  std::string response;
  std::optional<SubsetMask> gold_mask;
  std::optional<std::vector<std::string>> requested_values;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Session {
  std::string session_id;
  std::optional<KnowledgeBase> kb;  ///< absent for unlabeled logs without a KB
  std::vector<Turn> turns;
  bool labeled = false;

  friend bool operator==(const Session&, const Session&) = default;
};

using Corpus = std::vector<Session>;

// ---------------------------------------------------------------------------
// Tokenization and vocabulary

/// Whitespace split, then every punctuation character becomes its own token.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) {
      out.push_back(current);
      current.clear();
    }
  };
  for (char ch : text) {
    const auto uch = static_cast<unsigned char>(ch);
    if (std::isspace(uch)) {
      flush();
    } else if (std::ispunct(uch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(ch);
    }
  }
  flush();
  return out;
}

class Vocabulary {
 public:
  Vocabulary() : words_{"<pad>", "<sep>", "<bos>", "<eos>", "<unk>"} { reindex(); }

  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < kNumReserved) {
      throw Error(ErrorKind::kData, "vocabulary is missing reserved tokens");
    }
    reindex();
  }

  [[nodiscard]] std::size_t size() const noexcept { return words_.size(); }
  [[nodiscard]] const std::vector<std::string>& words() const noexcept { return words_; }
  [[nodiscard]] const std::string& word(Token id) const { return words_.at(static_cast<std::size_t>(id)); }

  [[nodiscard]] Token id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  [[nodiscard]] Tokens encode(const std::string& text) const {
    Tokens out;
    for (const auto& w : tokenize(text)) {
      out.push_back(id(w));
    }
    return out;
  }

  [[nodiscard]] std::string decode(std::span<const Token> tokens) const {
    std::string out;
    for (Token t : tokens) {
      if (t == kEos) {
        break;
      }
      if (!out.empty()) {
        out.push_back(' ');
      }
      out += word(t);
    }
    return out;
  }

  /// "entity SEP slot SEP value"
  [[nodiscard]] Tokens encode_piece(const KnowledgePiece& piece) const {
    Tokens out = encode(piece.entity);
    out.push_back(kSep);
    auto slot = encode(piece.slot);
    out.insert(out.end(), slot.begin(), slot.end());
    out.push_back(kSep);
    auto value = encode(piece.value);
    out.insert(out.end(), value.begin(), value.end());
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
      throw Error(ErrorKind::kData, "cannot write vocabulary file " + path);
    }
    for (const auto& w : words_) {
      out << w << '\n';
    }
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
      throw Error(ErrorKind::kData, "cannot read vocabulary file " + path);
    }
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      words.push_back(line);
    }
    return Vocabulary(std::move(words));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) {
      index_.emplace(words_[i], static_cast<Token>(i));
    }
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, Token> index_;
};

/// Frequency-descending, then lexicographic. Reserved ids 0..4 are fixed.
inline Vocabulary build_vocab(const Corpus& corpus) {
  std::map<std::string, std::size_t> counts;
  auto count_text = [&counts](const std::string& text) {
    for (auto& w : tokenize(text)) {
      ++counts[w];
    }
  };
  for (const auto& session : corpus) {
    if (session.kb) {
      for (const auto& piece : session.kb->pieces) {
        count_text(piece.entity);
        count_text(piece.slot);
        count_text(piece.value);
      }
    }
    for (const auto& turn : session.turns) {
      count_text(turn.user);
      count_text(turn.response);
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary base;
  std::vector<std::string> words = base.words();
  std::set<std::string> reserved(words.begin(), words.end());
  for (auto& [w, n] : ordered) {
    if (!w.empty() && !reserved.contains(w)) {
      words.push_back(w);
    }
  }
  return Vocabulary(std::move(words));
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticConfig {
  std::size_t num_sessions = 100;
  std::size_t entities = 3;
  std::size_t slots = 4;
  std::size_t turns_per_session = 1;
  std::size_t vocab_size = 16;  ///< size of the value-word pool
  double correlation_strength = 0.5;
  std::uint64_t seed = 1;
};

/// Slots are partitioned into consecutive pairs (a trailing singleton when the count is odd).
/// Every turn queries one entity through the values of one group.
inline std::vector<std::vector<std::size_t>> slot_groups(std::size_t slots) {
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t s = 0; s < slots; s += 2) {
    if (s + 1 < slots) {
      groups.push_back({s, s + 1});
    } else {
      groups.push_back({s});
    }
  }
  return groups;
}

namespace detail {

inline void validate(const SyntheticConfig& config) {
  if (config.entities == 0 || config.slots == 0) {
    throw Error(ErrorKind::kConfig, "entities and slots must be positive");
  }
  if (config.entities * config.slots > kMaxPieces) {
    throw Error(ErrorKind::kConfig, "entities*slots must be <= 63");
  }
  if (config.vocab_size < 16) {
    throw Error(ErrorKind::kConfig, "vocab_size must be >= 16");
  }
  if (config.vocab_size < config.entities * config.slots) {
    throw Error(ErrorKind::kConfig, "vocab_size must be >= entities*slots so values can be distinct");
  }
  if (!(config.correlation_strength >= 0.0 && config.correlation_strength <= 1.0)) {
    throw Error(ErrorKind::kConfig, "correlation_strength must lie in [0,1]");
  }
  if (config.turns_per_session == 0) {
    throw Error(ErrorKind::kConfig, "turns_per_session must be positive");
  }
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace detail

/**
 * Generates sessions whose gold subsets are conjunctive lookups: the user names the values of one
 * slot group and the relevant pieces are that group's pieces of the unique entity matching all of
 * them. With probability `correlation_strength` an entity copies a value from an earlier entity,
 * so a value alone no longer identifies the entity and per-piece decisions become ambiguous while
 * the joint subset stays unique.
 */
inline Corpus generate_synthetic(const SyntheticConfig& config) {
  detail::validate(config);
  Rng rng(config.seed);
  const std::size_t num_entities = config.entities;
  const std::size_t num_slots = config.slots;
  const auto groups = slot_groups(num_slots);

  Corpus corpus;
  corpus.reserve(config.num_sessions);
  for (std::size_t n = 0; n < config.num_sessions; ++n) {
    // Distinct values first.
    std::vector<std::size_t> pool(config.vocab_size);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      pool[i] = i;
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::vector<std::size_t>> value(num_entities, std::vector<std::size_t>(num_slots));
    for (std::size_t e = 0; e < num_entities; ++e) {
      for (std::size_t s = 0; s < num_slots; ++s) {
        value[e][s] = pool[e * num_slots + s];
      }
    }
    for (std::size_t e = 1; e < num_entities; ++e) {
      for (std::size_t s = 0; s < num_slots; ++s) {
        if (uniform01(rng) < config.correlation_strength) {
          value[e][s] = value[detail::uniform_index(rng, e)][s];
        }
      }
    }
    // Every (entity, group) tuple must identify its entity.
    bool changed = true;
    while (changed) {
      changed = false;
      for (const auto& group : groups) {
        for (std::size_t a = 0; a < num_entities && !changed; ++a) {
          for (std::size_t b = a + 1; b < num_entities && !changed; ++b) {
            bool same = true;
            for (auto s : group) {
              same = same && value[a][s] == value[b][s];
            }
            if (!same) {
              continue;
            }
            std::set<std::size_t> used;
            for (const auto& row : value) {
              used.insert(row.begin(), row.end());
            }
            for (std::size_t w = 0; w < config.vocab_size; ++w) {
              if (!used.contains(w)) {
                value[b][group.front()] = w;
                break;
              }
            }
            changed = true;
          }
        }
      }
    }

    Session session;
    session.session_id = "s" + std::to_string(n);
    session.labeled = true;
    KnowledgeBase kb;
    for (std::size_t e = 0; e < num_entities; ++e) {
      for (std::size_t s = 0; s < num_slots; ++s) {
        kb.pieces.push_back({"e" + std::to_string(e) + "s" + std::to_string(s), "ent" + std::to_string(e),
                             "slot" + std::to_string(s), "val" + std::to_string(value[e][s])});
      }
    }
    for (std::size_t t = 0; t < config.turns_per_session; ++t) {
      const std::size_t target = detail::uniform_index(rng, num_entities);
      const auto& group = groups[detail::uniform_index(rng, groups.size())];
      SubsetMask gold(kb.size());
      std::string constraints;
      for (std::size_t j = 0; j < group.size(); ++j) {
        const auto& piece = kb.pieces[target * num_slots + group[j]];
        gold.set(target * num_slots + group[j]);
        if (j > 0) {
          constraints += " and ";
        }
        constraints += piece.slot + " " + piece.value;
      }
      Turn turn;
      turn.user = "i want " + constraints;
      turn.response = "ent" + std::to_string(target) + " has " + constraints;
      turn.gold_mask = gold;
      turn.requested_values = std::vector<std::string>{"ent" + std::to_string(target)};
      session.turns.push_back(std::move(turn));
    }
    session.kb = std::move(kb);
    corpus.push_back(std::move(session));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// JSON Lines IO

namespace detail {

[[noreturn]] inline void fail_line(std::size_t line, const std::string& field, const std::string& what) {
  throw Error(ErrorKind::kData, "line " + std::to_string(line) + ": field '" + field + "' " + what);
}

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, std::size_t line) {
  if (!obj.is_object() || !obj.contains(key)) {
    fail_line(line, key, "is missing");
  }
  return obj.at(key);
}

inline std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line) {
  const auto& v = require(obj, key, line);
  if (!v.is_string()) {
    fail_line(line, key, "must be a string");
  }
  return v.get<std::string>();
}

inline std::vector<std::string> string_list(const nlohmann::json& v, const char* key, std::size_t line) {
  if (!v.is_array()) {
    fail_line(line, key, "must be an array of strings");
  }
  std::vector<std::string> out;
  for (const auto& item : v) {
    if (!item.is_string()) {
      fail_line(line, key, "must be an array of strings");
    }
    out.push_back(item.get<std::string>());
  }
  return out;
}

}  // namespace detail

inline Session parse_session(const std::string& text, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kData, "line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) {
    throw Error(ErrorKind::kData, "line " + std::to_string(line) + ": expected a JSON object");
  }
  Session session;
  session.session_id = detail::require_string(j, "session_id", line);
  const auto& labeled = detail::require(j, "labeled", line);
  if (!labeled.is_boolean()) {
    detail::fail_line(line, "labeled", "must be a boolean");
  }
  session.labeled = labeled.get<bool>();

  if (j.contains("kb")) {
    const auto& kb_json = j.at("kb");
    if (!kb_json.is_array()) {
      detail::fail_line(line, "kb", "must be an array");
    }
    KnowledgeBase kb;
    std::set<std::string> seen;
    for (const auto& p : kb_json) {
      KnowledgePiece piece{detail::require_string(p, "id", line), detail::require_string(p, "entity", line),
                           detail::require_string(p, "slot", line), detail::require_string(p, "value", line)};
      if (!seen.insert(piece.piece_id).second) {
        detail::fail_line(line, "kb", "repeats piece id '" + piece.piece_id + "'");
      }
      if (tokenize(piece.entity).empty() && tokenize(piece.slot).empty() && tokenize(piece.value).empty()) {
        detail::fail_line(line, "kb", "piece '" + piece.piece_id + "' has empty text");
      }
      kb.pieces.push_back(std::move(piece));
    }
    if (kb.size() > kMaxPieces) {
      throw Error(ErrorKind::kScale, "line " + std::to_string(line) + ": kb has more than 63 pieces");
    }
    session.kb = std::move(kb);
  } else if (session.labeled) {
    detail::fail_line(line, "kb", "is required for labeled sessions");
  }

  const auto& turns = detail::require(j, "turns", line);
  if (!turns.is_array()) {
    detail::fail_line(line, "turns", "must be an array");
  }
  for (const auto& t : turns) {
    Turn turn;
    turn.user = detail::require_string(t, "user", line);
    turn.response = detail::require_string(t, "response", line);
    if (t.contains("gold")) {
      if (!session.kb) {
        detail::fail_line(line, "gold", "requires a kb");
      }
      SubsetMask mask(session.kb->size());
      for (const auto& id : detail::string_list(t.at("gold"), "gold", line)) {
        auto index = session.kb->index_of(id);
        if (!index) {
          detail::fail_line(line, "gold", "names unknown piece '" + id + "'");
        }
        mask.set(*index);
      }
      turn.gold_mask = mask;
    } else if (session.labeled) {
      detail::fail_line(line, "gold", "is required in labeled sessions");
    }
    if (t.contains("requested")) {
      turn.requested_values = detail::string_list(t.at("requested"), "requested", line);
    }
    session.turns.push_back(std::move(turn));
  }
  return session;
}

inline std::string session_to_json(const Session& session) {
  nlohmann::ordered_json j;
  j["session_id"] = session.session_id;
  j["labeled"] = session.labeled;
  if (session.kb) {
    auto kb = nlohmann::ordered_json::array();
    for (const auto& p : session.kb->pieces) {
      nlohmann::ordered_json pj;
      pj["id"] = p.piece_id;
      pj["entity"] = p.entity;
      pj["slot"] = p.slot;
      pj["value"] = p.value;
      kb.push_back(std::move(pj));
    }
    j["kb"] = std::move(kb);
  }
  auto turns = nlohmann::ordered_json::array();
  for (const auto& t : session.turns) {
    nlohmann::ordered_json tj;
    tj["user"] = t.user;
    tj["response"] = t.response;
    if (t.gold_mask) {
      auto gold = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < t.gold_mask->width(); ++i) {
        if (t.gold_mask->test(i)) {
          gold.push_back(session.kb->pieces[i].piece_id);
        }
      }
      tj["gold"] = std::move(gold);
    }
    if (t.requested_values) {
      tj["requested"] = *t.requested_values;
    }
    turns.push_back(std::move(tj));
  }
  j["turns"] = std::move(turns);
  return j.dump();
}

inline Corpus read_jsonl(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    corpus.push_back(parse_session(line, number));
  }
  return corpus;
}

inline Corpus load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::kData, "cannot open corpus file " + path);
  }
  return read_jsonl(in);
}

inline void write_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const auto& s : corpus) {
    out << session_to_json(s) << '\n';
  }
}

inline void save_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorKind::kData, "cannot write corpus file " + path);
  }
  write_jsonl(corpus, out);
}

// ---------------------------------------------------------------------------
// Encoded views used by the models

struct EncodedKb {
  std::vector<KnowledgePiece> pieces;
  std::vector<Tokens> texts;

  [[nodiscard]] std::size_t size() const noexcept { return texts.size(); }
};

/// A single turn with its derived context, ready for scoring.
struct TurnExample {
  std::string session_id;
  std::size_t turn_index = 0;
  Tokens context;   ///< u_1 r_1 ... u_{t-1} r_{t-1}
  Tokens user;
  Tokens response;  ///< without EOS
  std::shared_ptr<const EncodedKb> kb;  ///< null when the session has no KB
  std::optional<SubsetMask> gold;
  std::vector<std::string> requested;

  [[nodiscard]] std::size_t num_pieces() const noexcept { return kb ? kb->size() : 0; }
};

struct SessionExample {
  std::string session_id;
  bool labeled = false;
  std::shared_ptr<const EncodedKb> kb;
  std::vector<TurnExample> turns;
};

inline SessionExample encode_session(const Session& session, const Vocabulary& vocab) {
  SessionExample out;
  out.session_id = session.session_id;
  out.labeled = session.labeled;
  if (session.kb) {
    auto kb = std::make_shared<EncodedKb>();
    kb->pieces = session.kb->pieces;
    for (const auto& piece : session.kb->pieces) {
      kb->texts.push_back(vocab.encode_piece(piece));
    }
    out.kb = std::move(kb);
  }
  Tokens context;
  for (std::size_t t = 0; t < session.turns.size(); ++t) {
    const auto& turn = session.turns[t];
    TurnExample ex;
    ex.session_id = session.session_id;
    ex.turn_index = t;
    ex.context = context;
    ex.user = vocab.encode(turn.user);
    ex.response = vocab.encode(turn.response);
    ex.kb = out.kb;
    ex.gold = turn.gold_mask;
    if (turn.requested_values) {
      ex.requested = *turn.requested_values;
    }
    context.insert(context.end(), ex.user.begin(), ex.user.end());
    context.insert(context.end(), ex.response.begin(), ex.response.end());
    out.turns.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<SessionExample> encode_corpus(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<SessionExample> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) {
    out.push_back(encode_session(s, vocab));
  }
  return out;
}

inline std::vector<TurnExample> flatten_turns(const std::vector<SessionExample>& sessions) {
  std::vector<TurnExample> out;
  for (const auto& s : sessions) {
    out.insert(out.end(), s.turns.begin(), s.turns.end());
  }
  return out;
}

}  // namespace entriever

#endif
