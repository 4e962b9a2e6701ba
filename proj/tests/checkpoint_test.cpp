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

#include <entriever/checkpoint.hpp>
#include <entriever/verify.hpp>

#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <functional>

namespace entriever {
namespace {

namespace fs = std::filesystem;

class CheckpointFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(ENTRIEVER_WORK_DIR) / "checkpoint";
    fs::create_directories(dir_);
    SyntheticConfig sc;
    sc.num_sessions = 5;
    vocab_ = build_vocab(generate_synthetic(sc));
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
  Vocabulary vocab_;
};

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::kConfig;
}

TEST_F(CheckpointFiles, RetrieverRoundTrip) {
  for (bool uses_response : {false, true}) {
    const auto model = init_retriever(vocab_.size(), {6, 5}, uses_response, 3);
    save_retriever(path("r.ckpt"), model, vocab_);
    const auto kind = uses_response ? ModelKind::kInference : ModelKind::kProposal;
    const auto loaded = load_retriever(path("r.ckpt"), kind);
    EXPECT_EQ(*loaded.model, model);
    EXPECT_EQ(loaded.vocab, vocab_);
    EXPECT_EQ(loaded.hash, content_hash(read_file(path("r.ckpt"))));
    const auto other = uses_response ? ModelKind::kProposal : ModelKind::kInference;
    EXPECT_THROW(load_retriever(path("r.ckpt"), other), Error);
  }
}

TEST_F(CheckpointFiles, GeneratorRoundTripIsBitExact) {
  auto model = init_gen(vocab_.size(), {5, 4}, 4);
  model.params()[0] = -0.0;
  model.params()[1] = 1e-310;
  save_gen(path("g.ckpt"), model, vocab_);
  const auto loaded = load_gen(path("g.ckpt"));
  ASSERT_EQ(loaded.model.params().size(), model.params().size());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(loaded.model.params()[i]), std::bit_cast<std::uint64_t>(model.params()[i]));
  }
  save_gen(path("g2.ckpt"), loaded.model, loaded.vocab);
  EXPECT_EQ(read_file(path("g.ckpt")), read_file(path("g2.ckpt")));
}

TEST_F(CheckpointFiles, EnergyModesAndReferenceHash) {
  const auto proposal = init_retriever(vocab_.size(), {6, 5}, false, 5);
  save_retriever(path("p.ckpt"), proposal, vocab_);
  const auto ref = load_retriever(path("p.ckpt"), ModelKind::kProposal);
  const auto residual = init_energy(vocab_.size(), {6, 5}, EnergyMode::residual(ref.model), 6);
  save_energy(path("e.ckpt"), residual, vocab_, ref.hash);
  const auto loaded = load_energy(path("e.ckpt"), &ref);
  EXPECT_TRUE(loaded.model.mode().is_residual());
  EXPECT_EQ(loaded.model.scorer().params(), residual.scorer().params());
  EXPECT_EQ(kind_of([&] { load_energy(path("e.ckpt"), nullptr); }), ErrorKind::kMode);

  const auto other = init_retriever(vocab_.size(), {6, 5}, false, 50);
  save_retriever(path("p2.ckpt"), other, vocab_);
  const auto wrong = load_retriever(path("p2.ckpt"), ModelKind::kProposal);
  EXPECT_EQ(kind_of([&] { load_energy(path("e.ckpt"), &wrong); }), ErrorKind::kConfig);

  const auto plain = init_energy(vocab_.size(), {6, 5}, EnergyMode::non_residual(), 7);
  save_energy(path("n.ckpt"), plain, vocab_, "");
  const auto loaded_plain = load_energy(path("n.ckpt"), nullptr);
  EXPECT_FALSE(loaded_plain.model.mode().is_residual());
  EXPECT_EQ(loaded_plain.model.scorer().params(), plain.scorer().params());
}

TEST_F(CheckpointFiles, CorruptFilesAreDataErrors) {
  const auto model = init_retriever(vocab_.size(), {6, 5}, false, 3);
  save_retriever(path("r.ckpt"), model, vocab_);
  const auto bytes = read_file(path("r.ckpt"));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write_file(path("bad.ckpt"), bad_magic);
  EXPECT_EQ(kind_of([&] { load_retriever(path("bad.ckpt"), ModelKind::kProposal); }), ErrorKind::kData);

  write_file(path("short.ckpt"), bytes.substr(0, bytes.size() - 8));
  EXPECT_EQ(kind_of([&] { load_retriever(path("short.ckpt"), ModelKind::kProposal); }), ErrorKind::kData);

  write_file(path("ragged.ckpt"), bytes.substr(0, bytes.size() - 3));
  EXPECT_EQ(kind_of([&] { load_retriever(path("ragged.ckpt"), ModelKind::kProposal); }), ErrorKind::kData);

  EXPECT_EQ(kind_of([&] { load_retriever(path("missing.ckpt"), ModelKind::kProposal); }), ErrorKind::kData);
  EXPECT_EQ(kind_of([&] { decode_checkpoint("ENTRCK"); }), ErrorKind::kData);
}

TEST_F(CheckpointFiles, VocabularyMismatch) {
  SyntheticConfig sc;
  sc.num_sessions = 5;
  sc.vocab_size = 20;
  sc.seed = 11;
  const auto other = build_vocab(generate_synthetic(sc));
  ASSERT_FALSE(other == vocab_);
  EXPECT_EQ(kind_of([&] { require_same_vocab(vocab_, other, "energy"); }), ErrorKind::kConfig);
  require_same_vocab(vocab_, vocab_, "energy");
}

}  // namespace
}  // namespace entriever
