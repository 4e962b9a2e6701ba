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

#ifndef ENTRIEVER_CHECKPOINT_HPP
#define ENTRIEVER_CHECKPOINT_HPP

#include <entriever/common.hpp>
#include <entriever/corpus.hpp>
#include <entriever/energy.hpp>
#include <entriever/generation.hpp>
#include <entriever/proposal.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

/**
 * \file
 * \brief Versioned binary checkpoints.
 *
 * Layout: the 8 magic bytes `ENTRCKPT`, a little-endian uint32 format version, a little-endian
 * uint64 header length, a UTF-8 JSON header of that length, then every tensor as row-major
 * little-endian float64 in header order. The header embeds the vocabulary so a checkpoint is
 * self-contained.
 */

namespace entriever {

inline constexpr char kCheckpointMagic[8] = {'E', 'N', 'T', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind { kProposal, kInference, kEnergy, kGenerator };

inline const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kProposal:
      return "proposal";
    case ModelKind::kInference:
      return "inference";
    case ModelKind::kEnergy:
      return "energy";
    case ModelKind::kGenerator:
      return "generator";
  }
  return "unknown";
}

struct Checkpoint {
  nlohmann::ordered_json header;
  std::vector<double> payload;
};

namespace detail {

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xffU));
  }
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) {
    throw Error(ErrorKind::kData, "checkpoint truncated");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return static_cast<T>(v);
}

inline nlohmann::ordered_json tensor(const std::string& name, std::vector<std::size_t> shape) {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["shape"] = shape;
  return j;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  const std::string header = ckpt.header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, header.size());
  out += header;
  out.reserve(out.size() + 8 * ckpt.payload.size());
  for (double v : ckpt.payload) {
    detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw Error(ErrorKind::kData, "not a checkpoint file (bad magic)");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kData, "unsupported checkpoint format version " + std::to_string(version));
  }
  const auto header_len = detail::get_le<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) {
    throw Error(ErrorKind::kData, "checkpoint header truncated");
  }
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::ordered_json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kData, std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += header_len;
  if ((bytes.size() - pos) % 8 != 0) {
    throw Error(ErrorKind::kData, "checkpoint payload is not a whole number of float64 values");
  }
  std::size_t expected = 0;
  for (const auto& t : ckpt.header.at("tensors")) {
    std::size_t n = 1;
    for (const auto& d : t.at("shape")) {
      n *= d.get<std::size_t>();
    }
    expected += n;
  }
  const std::size_t count = (bytes.size() - pos) / 8;
  if (count != expected) {
    throw Error(ErrorKind::kData, "checkpoint payload has " + std::to_string(count) + " values, header declares " +
                                      std::to_string(expected));
  }
  ckpt.payload.resize(count);
  for (auto& v : ckpt.payload) {
    v = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
  }
  return ckpt;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::kData, "cannot open " + path);
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorKind::kData, "cannot write " + path);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Content hash of serialized checkpoint bytes, as 16 hex digits.
inline std::string content_hash(const std::string& bytes) {
  return detail::hex64(fnv1a(bytes.data(), bytes.size()));
}

/// Header plus named tensors with their values, for inspection.
inline nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::ordered_json j;
  j["header"] = ckpt.header;
  auto tensors = nlohmann::ordered_json::object();
  std::size_t offset = 0;
  for (const auto& t : ckpt.header.at("tensors")) {
    std::size_t n = 1;
    for (const auto& d : t.at("shape")) {
      n *= d.get<std::size_t>();
    }
    tensors[t.at("name").get<std::string>()] =
        std::vector<double>(ckpt.payload.begin() + static_cast<std::ptrdiff_t>(offset),
                            ckpt.payload.begin() + static_cast<std::ptrdiff_t>(offset + n));
    offset += n;
  }
  j["tensors"] = std::move(tensors);
  return j;
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint

namespace detail {

inline nlohmann::ordered_json base_header(ModelKind kind, std::size_t d, std::size_t h, const Vocabulary& vocab) {
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointVersion;
  j["kind"] = to_string(kind);
  j["d_emb"] = d;
  j["h"] = h;
  j["vocab_size"] = vocab.size();
  return j;
}

inline nlohmann::ordered_json scorer_tensors(const ScorerShape& s) {
  auto t = nlohmann::ordered_json::array();
  t.push_back(tensor("embedding", {s.vocab, s.d_emb}));
  t.push_back(tensor("hidden_weight", {s.hidden, s.d_emb}));
  t.push_back(tensor("hidden_bias", {s.hidden}));
  t.push_back(tensor("head_weight", {s.hidden}));
  t.push_back(tensor("head_bias", {1}));
  return t;
}

inline void require_kind(const Checkpoint& ckpt, ModelKind kind) {
  const auto found = ckpt.header.value("kind", std::string());
  if (found != to_string(kind)) {
    throw Error(ErrorKind::kConfig, std::string("expected a ") + to_string(kind) + " checkpoint, found '" + found + "'");
  }
}

inline Vocabulary header_vocab(const Checkpoint& ckpt) {
  auto words = ckpt.header.at("vocab").get<std::vector<std::string>>();
  if (words.size() != ckpt.header.at("vocab_size").get<std::size_t>()) {
    throw Error(ErrorKind::kData, "checkpoint vocabulary size does not match its header");
  }
  return Vocabulary(std::move(words));
}

inline void finish_header(nlohmann::ordered_json& j, const Vocabulary& vocab) { j["vocab"] = vocab.words(); }

}  // namespace detail

inline Checkpoint retriever_checkpoint(const FactoredRetriever& model, const Vocabulary& vocab) {
  const auto& s = model.scorer().shape();
  if (s.vocab != vocab.size()) {
    throw Error(ErrorKind::kConfig, "model vocabulary size differs from the vocabulary");
  }
  Checkpoint ckpt;
  ckpt.header = detail::base_header(model.uses_response() ? ModelKind::kInference : ModelKind::kProposal, s.d_emb,
                                    s.hidden, vocab);
  ckpt.header["tensors"] = detail::scorer_tensors(s);
  ckpt.header["uses_response"] = model.uses_response();
  detail::finish_header(ckpt.header, vocab);
  ckpt.payload = model.scorer().params();
  return ckpt;
}

struct LoadedRetriever {
  std::shared_ptr<FactoredRetriever> model;
  Vocabulary vocab;
  std::string hash;  ///< content hash of the checkpoint bytes
};

inline LoadedRetriever retriever_from_bytes(const std::string& bytes, ModelKind kind) {
  const auto ckpt = decode_checkpoint(bytes);
  detail::require_kind(ckpt, kind);
  LoadedRetriever out{nullptr, detail::header_vocab(ckpt), content_hash(bytes)};
  RetrieverShape shape{ckpt.header.at("d_emb").get<std::size_t>(), ckpt.header.at("h").get<std::size_t>()};
  out.model = std::make_shared<FactoredRetriever>(out.vocab.size(), shape, kind == ModelKind::kInference);
  if (out.model->num_params() != ckpt.payload.size()) {
    throw Error(ErrorKind::kData, "checkpoint tensors do not match the declared shape");
  }
  out.model->scorer().params() = ckpt.payload;
  return out;
}

inline LoadedRetriever load_retriever(const std::string& path, ModelKind kind) {
  return retriever_from_bytes(read_file(path), kind);
}

inline void save_retriever(const std::string& path, const FactoredRetriever& model, const Vocabulary& vocab) {
  write_file(path, encode_checkpoint(retriever_checkpoint(model, vocab)));
}

/// `reference_hash` identifies the proposal checkpoint a residual model tilts; empty otherwise.
inline Checkpoint energy_checkpoint(const EnergyModel& model, const Vocabulary& vocab,
                                    const std::string& reference_hash) {
  const auto& s = model.scorer().shape();
  Checkpoint ckpt;
  ckpt.header = detail::base_header(ModelKind::kEnergy, s.d_emb, s.hidden, vocab);
  ckpt.header["tensors"] = detail::scorer_tensors(s);
  ckpt.header["mode"] = to_string(model.mode().form());
  if (model.mode().is_residual()) {
    ckpt.header["reference_hash"] = reference_hash;
  }
  detail::finish_header(ckpt.header, vocab);
  ckpt.payload = model.scorer().params();
  return ckpt;
}

inline void save_energy(const std::string& path, const EnergyModel& model, const Vocabulary& vocab,
                        const std::string& reference_hash) {
  write_file(path, encode_checkpoint(energy_checkpoint(model, vocab, reference_hash)));
}

struct LoadedEnergy {
  EnergyModel model;
  Vocabulary vocab;
  std::string hash;
};

/**
 * Residual checkpoints need their reference proposal; its content hash must match the one recorded
 * at training time.
 */
inline LoadedEnergy load_energy(const std::string& path, const LoadedRetriever* reference) {
  const auto bytes = read_file(path);
  const auto ckpt = decode_checkpoint(bytes);
  detail::require_kind(ckpt, ModelKind::kEnergy);
  auto vocab = detail::header_vocab(ckpt);
  RetrieverShape shape{ckpt.header.at("d_emb").get<std::size_t>(), ckpt.header.at("h").get<std::size_t>()};
  const auto mode_name = ckpt.header.at("mode").get<std::string>();
  EnergyMode mode = EnergyMode::non_residual();
  if (mode_name == "residual") {
    if (reference == nullptr) {
      throw Error(ErrorKind::kMode, "residual energy checkpoint needs its reference proposal");
    }
    if (ckpt.header.value("reference_hash", std::string()) != reference->hash) {
      throw Error(ErrorKind::kConfig, "proposal checkpoint differs from the residual model's reference (hash " +
                                          reference->hash + " vs " + ckpt.header.value("reference_hash", "") + ")");
    }
    mode = EnergyMode::residual(reference->model);
  } else if (mode_name != "nonresidual") {
    throw Error(ErrorKind::kData, "unknown energy mode '" + mode_name + "'");
  }
  LoadedEnergy out{EnergyModel(vocab.size(), shape, mode), vocab, content_hash(bytes)};
  if (out.model.num_params() != ckpt.payload.size()) {
    throw Error(ErrorKind::kData, "checkpoint tensors do not match the declared shape");
  }
  out.model.scorer().params() = ckpt.payload;
  return out;
}

inline Checkpoint gen_checkpoint(const GenModel& model, const Vocabulary& vocab) {
  const auto& s = model.shape();
  Checkpoint ckpt;
  ckpt.header = detail::base_header(ModelKind::kGenerator, s.d_emb, s.hidden, vocab);
  auto t = nlohmann::ordered_json::array();
  t.push_back(detail::tensor("embedding", {s.vocab, s.d_emb}));
  t.push_back(detail::tensor("condition_projection", {s.hidden, s.d_emb}));
  t.push_back(detail::tensor("previous_projection", {s.hidden, s.d_emb}));
  t.push_back(detail::tensor("output", {s.vocab, s.hidden}));
  t.push_back(detail::tensor("output_bias", {s.vocab}));
  ckpt.header["tensors"] = std::move(t);
  detail::finish_header(ckpt.header, vocab);
  ckpt.payload = model.params();
  return ckpt;
}

inline void save_gen(const std::string& path, const GenModel& model, const Vocabulary& vocab) {
  write_file(path, encode_checkpoint(gen_checkpoint(model, vocab)));
}

struct LoadedGen {
  GenModel model;
  Vocabulary vocab;
  std::string hash;
};

inline LoadedGen load_gen(const std::string& path) {
  const auto bytes = read_file(path);
  const auto ckpt = decode_checkpoint(bytes);
  detail::require_kind(ckpt, ModelKind::kGenerator);
  auto vocab = detail::header_vocab(ckpt);
  LoadedGen out{GenModel(GenShape{vocab.size(), ckpt.header.at("d_emb").get<std::size_t>(),
                                  ckpt.header.at("h").get<std::size_t>()}),
                vocab, content_hash(bytes)};
  if (out.model.num_params() != ckpt.payload.size()) {
    throw Error(ErrorKind::kData, "checkpoint tensors do not match the declared shape");
  }
  out.model.params() = ckpt.payload;
  return out;
}

/// Throws a configuration error unless every vocabulary equals the first.
inline void require_same_vocab(const Vocabulary& a, const Vocabulary& b, const std::string& what) {
  if (!(a == b)) {
    throw Error(ErrorKind::kConfig, what + " was trained with a different vocabulary");
  }
}

}  // namespace entriever

#endif
