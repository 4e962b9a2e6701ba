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

// Command-line front end. Every option is also a config key: `--some-key` corresponds to
// `some_key = ...` in the file passed with --config, and a flag given on the command line wins.
//
// Exit codes: 0 ok, 1 verification failed, 2 config, 3 data, 4 scale, 5 estimator.

#include <entriever/candidates.hpp>
#include <entriever/checkpoint.hpp>
#include <entriever/config.hpp>
#include <entriever/corpus.hpp>
#include <entriever/energy.hpp>
#include <entriever/generation.hpp>
#include <entriever/jsa.hpp>
#include <entriever/metrics.hpp>
#include <entriever/proposal.hpp>
#include <entriever/rescoring.hpp>
#include <entriever/trainer.hpp>
#include <entriever/verify.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace {

using namespace entriever;
using Json = nlohmann::ordered_json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kMode:
      return 2;
    case ErrorKind::kData:
    case ErrorKind::kDimension:
    case ErrorKind::kWeightSource:
      return 3;
    case ErrorKind::kScale:
      return 4;
    case ErrorKind::kEstimator:
      return 5;
  }
  return 2;
}

struct Key {
  std::string name;
  std::string help;
};

/// A subcommand whose options double as config keys.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description, std::vector<Key> keys)
      : app_(parent.add_subcommand(name, description)), keys_(std::move(keys)) {
    app_->add_option("--config", config_path_, "flat key = value config file");
    for (const auto& k : keys_) {
      std::string flag = "--" + k.name;
      std::replace(flag.begin(), flag.end(), '_', '-');
      options_[k.name] = app_->add_option(flag, values_[k.name], k.help);
    }
  }

  [[nodiscard]] CLI::App* app() const { return app_; }

  [[nodiscard]] Settings settings() const {
    Settings s;
    if (!config_path_.empty()) {
      s = Settings::load(config_path_);
    }
    std::set<std::string> known;
    for (const auto& k : keys_) {
      known.insert(k.name);
    }
    s.require_known(known);
    for (const auto& [name, option] : options_) {
      if (option->count() > 0) {
        s.set(name, values_.at(name));
      }
    }
    return s;
  }

 private:
  CLI::App* app_;
  std::vector<Key> keys_;
  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

std::string require(const Settings& s, const std::string& key) {
  if (!s.has(key) || s.get_string(key, "").empty()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    throw Error(ErrorKind::kConfig, "missing required setting '" + key + "' (--" + flag + ")");
  }
  return s.get_string(key, "");
}

std::vector<Key> training_keys() {
  return {{"data", "labeled corpus (JSON Lines)"},
          {"out", "output checkpoint"},
          {"lr", "learning rate"},
          {"epochs", "training epochs"},
          {"batch", "turns per update"},
          {"seed", "run seed"},
          {"d_emb", "embedding width"},
          {"hidden", "hidden width"}};
}

SupervisedConfig supervised_config(const Settings& s) {
  SupervisedConfig c;
  c.lr = s.get_double("lr", c.lr);
  c.epochs = s.get_uint("epochs", c.epochs);
  c.batch = s.get_uint("batch", c.batch);
  c.seed = s.get_uint("seed", c.seed);
  c.shape.d_emb = s.get_uint("d_emb", c.shape.d_emb);
  c.shape.hidden = s.get_uint("hidden", c.shape.hidden);
  if (c.shape.d_emb == 0 || c.shape.hidden == 0) {
    throw Error(ErrorKind::kConfig, "d_emb and hidden must be positive");
  }
  return c;
}

std::vector<TurnExample> labeled_turns(const std::string& path, const Vocabulary& vocab) {
  return flatten_turns(encode_corpus(load_jsonl(path), vocab));
}

void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::filesystem::create_directories(parent);
  }
}

void write_report(const Json& report, const Settings& s) {
  std::cout << report.dump(2) << '\n';
  if (s.has("report")) {
    const auto path = s.get_string("report", "");
    ensure_parent(path);
    write_file(path, report.dump(2) + "\n");
  }
}

std::vector<std::string> piece_ids(const TurnExample& turn, const SubsetMask& mask) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < mask.width(); ++i) {
    if (mask.test(i)) {
      out.push_back(turn.kb->pieces[i].piece_id);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

int gen_data(const Settings& s) {
  SyntheticConfig c;
  c.num_sessions = s.get_uint("num_sessions", c.num_sessions);
  c.entities = s.get_uint("entities", c.entities);
  c.slots = s.get_uint("slots", c.slots);
  c.turns_per_session = s.get_uint("turns_per_session", c.turns_per_session);
  c.vocab_size = s.get_uint("vocab_size", c.vocab_size);
  c.correlation_strength = s.get_double("correlation_strength", c.correlation_strength);
  c.seed = s.get_uint("seed", c.seed);
  const auto out = require(s, "out");
  auto corpus = generate_synthetic(c);
  if (s.get_bool("unlabeled", false)) {
    for (auto& session : corpus) {
      session.labeled = false;
      for (auto& t : session.turns) {
        t.gold_mask.reset();
      }
      if (s.get_bool("drop_kb", false)) {
        session.kb.reset();
      }
    }
  }
  ensure_parent(out);
  save_jsonl(corpus, out);
  std::cout << "wrote " << corpus.size() << " sessions to " << out << '\n';
  return 0;
}

int train_retriever_cmd(const Settings& s, bool inference) {
  const auto data = require(s, "data");
  const auto out = require(s, "out");
  const auto config = supervised_config(s);
  const auto corpus = load_jsonl(data);
  const auto vocab = build_vocab(corpus);
  const auto turns = flatten_turns(encode_corpus(corpus, vocab));
  std::vector<EpochLoss> log;
  const auto model = inference ? train_inf(turns, vocab.size(), config, &log)
                               : train_proposal(turns, vocab.size(), config, &log);
  for (const auto& e : log) {
    std::cout << Json{{"epoch", e.epoch}, {"loss_per_piece", e.loss}}.dump() << '\n';
  }
  ensure_parent(out);
  save_retriever(out, model, vocab);
  return 0;
}

int train_gen_cmd(const Settings& s) {
  const auto data = require(s, "data");
  const auto out = require(s, "out");
  const auto config = supervised_config(s);
  const auto corpus = load_jsonl(data);
  const auto vocab = build_vocab(corpus);
  const auto turns = flatten_turns(encode_corpus(corpus, vocab));
  std::vector<GenEpochLog> log;
  const auto model = train_gen(turns, vocab.size(), config, &log);
  for (const auto& e : log) {
    std::cout << Json{{"epoch", e.epoch}, {"nll_per_token", e.nll_per_token}}.dump() << '\n';
  }
  ensure_parent(out);
  save_gen(out, model, vocab);
  return 0;
}

Estimator parse_estimator(const std::string& name) {
  if (name == "exact") {
    return Estimator::kExact;
  }
  if (name == "is") {
    return Estimator::kImportance;
  }
  if (name == "mis") {
    return Estimator::kMetropolis;
  }
  throw Error(ErrorKind::kConfig, "estimator must be exact, is or mis (got '" + name + "')");
}

EnergyForm parse_form(const std::string& name) {
  if (name == "residual") {
    return EnergyForm::kResidual;
  }
  if (name == "nonresidual") {
    return EnergyForm::kNonResidual;
  }
  throw Error(ErrorKind::kConfig, "mode must be residual or nonresidual (got '" + name + "')");
}

int train_energy_cmd(const Settings& s) {
  const auto data = require(s, "data");
  const auto out = require(s, "out");
  const auto proposal = load_retriever(require(s, "proposal"), ModelKind::kProposal);
  TrainerConfig c;
  c.estimator = parse_estimator(s.get_string("estimator", "is"));
  c.form = parse_form(s.get_string("mode", "residual"));
  c.samples = s.get_uint("samples", c.samples);
  c.lr = s.get_double("lr", c.lr);
  c.epochs = s.get_uint("epochs", c.epochs);
  c.batch = s.get_uint("batch", c.batch);
  c.seed = s.get_uint("seed", c.seed);
  c.shape.d_emb = s.get_uint("d_emb", c.shape.d_emb);
  c.shape.hidden = s.get_uint("hidden", c.shape.hidden);
  c.workers = std::max<std::uint64_t>(1, s.get_uint("workers", 1));
  if (c.samples == 0) {
    throw Error(ErrorKind::kConfig, "samples must be at least 1");
  }
  const auto turns = labeled_turns(data, proposal.vocab);
  std::vector<EnergyEpochLog> log;
  const auto model = train_energy(turns, proposal.model, proposal.vocab.size(), c, &log);
  for (const auto& e : log) {
    std::cout << Json{{"epoch", e.epoch},
                      {"mean_data_energy", e.mean_data_energy},
                      {"mean_acceptance_or_ess", e.mean_acceptance_or_ess},
                      {"wall_ms", e.wall_ms}}
                     .dump()
              << '\n';
  }
  ensure_parent(out);
  save_energy(out, model, proposal.vocab, proposal.hash);
  return 0;
}

int retrieve_cmd(const Settings& s) {
  const auto data = require(s, "data");
  const auto out = require(s, "out");
  const auto proposal = load_retriever(require(s, "proposal"), ModelKind::kProposal);
  std::optional<LoadedEnergy> energy_model;
  if (s.has("energy")) {
    energy_model = load_energy(s.get_string("energy", ""), &proposal);
    require_same_vocab(proposal.vocab, energy_model->vocab, "energy checkpoint");
  }
  const std::size_t k = s.get_uint("k", kDefaultTopK);
  const double tau = s.get_double("tau", 0.5);
  if (k == 0) {
    throw Error(ErrorKind::kConfig, "k must be at least 1");
  }
  const auto sessions = encode_corpus(load_jsonl(data), proposal.vocab);
  std::ostringstream lines;
  for (const auto& session : sessions) {
    for (const auto& turn : session.turns) {
      if (!turn.kb) {
        throw Error(ErrorKind::kData, "session " + turn.session_id + " has no knowledge base to retrieve from");
      }
      const SubsetMask mask = energy_model ? rescore_retrieve(turn, *proposal.model, energy_model->model, k).mask
                                           : threshold_decode(proposal.model->piece_probs(turn), tau);
      Json j;
      j["session_id"] = turn.session_id;
      j["turn"] = turn.turn_index;
      j["pred"] = piece_ids(turn, mask);
      lines << j.dump() << '\n';
    }
  }
  ensure_parent(out);
  write_file(out, lines.str());
  return 0;
}

int eval_retrieval_cmd(const Settings& s) {
  const auto corpus = load_jsonl(require(s, "data"));
  std::map<std::pair<std::string, std::size_t>, std::vector<std::string>> preds;
  std::ifstream in(require(s, "preds"));
  if (!in) {
    throw Error(ErrorKind::kData, "cannot open predictions file");
  }
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      auto j = nlohmann::json::parse(line);
      preds[{j.at("session_id").get<std::string>(), j.at("turn").get<std::size_t>()}] =
          j.at("pred").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kData, "predictions line " + std::to_string(number) + ": " + e.what());
    }
  }
  std::vector<SubsetMask> pred;
  std::vector<SubsetMask> gold;
  std::vector<std::string> ids;
  for (const auto& session : corpus) {
    for (std::size_t t = 0; t < session.turns.size(); ++t) {
      const auto& turn = session.turns[t];
      if (!turn.gold_mask) {
        continue;
      }
      auto it = preds.find({session.session_id, t});
      if (it == preds.end()) {
        throw Error(ErrorKind::kData, "no prediction for " + session.session_id + "/" + std::to_string(t));
      }
      SubsetMask mask(session.kb->size());
      for (const auto& id : it->second) {
        auto index = session.kb->index_of(id);
        if (!index) {
          throw Error(ErrorKind::kData, "prediction names unknown piece '" + id + "'");
        }
        mask.set(*index);
      }
      pred.push_back(mask);
      gold.push_back(*turn.gold_mask);
      ids.push_back(session.session_id);
    }
  }
  write_report(to_json(retrieval_report(pred, gold, ids)), s);
  return 0;
}

int eval_e2e_cmd(const Settings& s) {
  const auto gen = load_gen(require(s, "gen"));
  const auto inf = load_retriever(require(s, "inf"), ModelKind::kInference);
  require_same_vocab(gen.vocab, inf.vocab, "inference checkpoint");
  std::optional<LoadedRetriever> proposal;
  std::optional<LoadedEnergy> energy_model;
  if (s.has("proposal")) {
    proposal = load_retriever(s.get_string("proposal", ""), ModelKind::kProposal);
    require_same_vocab(gen.vocab, proposal->vocab, "proposal checkpoint");
  }
  if (s.has("energy")) {
    if (!proposal) {
      throw Error(ErrorKind::kConfig, "--energy needs --proposal for candidate generation");
    }
    energy_model = load_energy(s.get_string("energy", ""), &*proposal);
  }
  const std::size_t k = s.get_uint("k", kDefaultTopK);
  const std::size_t max_len = s.get_uint("max_len", 32);
  const auto sessions = encode_corpus(load_jsonl(require(s, "data")), gen.vocab);

  std::vector<Sentence> hyps;
  std::vector<Sentence> refs;
  std::vector<std::vector<std::string>> generated;
  std::vector<std::vector<std::string>> requested;
  std::vector<SubsetMask> inf_pred;
  std::vector<SubsetMask> gold;
  for (const auto& session : sessions) {
    generated.emplace_back();
    requested.emplace_back();
    for (const auto& turn : session.turns) {
      if (!turn.kb) {
        throw Error(ErrorKind::kData, "session " + session.session_id + " has no knowledge base");
      }
      SubsetMask mask;
      if (energy_model) {
        mask = rescore_retrieve(turn, *proposal->model, energy_model->model, k).mask;
      } else if (proposal) {
        mask = proposal_retrieve(turn, *proposal->model);
      } else if (turn.gold) {
        mask = *turn.gold;
      } else {
        throw Error(ErrorKind::kData, "turn without gold subset needs --proposal for retrieval");
      }
      const auto text = gen.vocab.decode(greedy_decode(turn, mask, gen.model, max_len));
      hyps.push_back(tokenize(text));
      refs.push_back(tokenize(gen.vocab.decode(turn.response)));
      generated.back().push_back(text);
      requested.back().insert(requested.back().end(), turn.requested.begin(), turn.requested.end());
      if (turn.gold) {
        inf_pred.push_back(threshold_decode(inf.model->piece_probs(turn)));
        gold.push_back(*turn.gold);
      }
    }
  }
  const double bleu = bleu4(hyps, refs);
  const double succ = success(generated, requested);
  Json report;
  report["sessions"] = sessions.size();
  report["retrieval"] = energy_model ? "rescored" : proposal ? "proposal" : "gold";
  report["bleu4"] = bleu;
  report["success"] = succ;
  report["combined"] = combined(100.0 * succ, 100.0 * bleu);
  report["inference_joint_acc"] = joint_acc(inf_pred, gold);
  write_report(report, s);
  return 0;
}

std::pair<double, double> parse_ratio(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      return {std::stod(text), 1.0};
    }
    return {std::stod(text.substr(0, colon)), std::stod(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw Error(ErrorKind::kConfig, "ratio must look like R:1 (got '" + text + "')");
  }
}

Json history_json(const SemiEpochLog& e) {
  Json j;
  j["epoch"] = e.epoch;
  j["gen_nll"] = e.gen_nll;
  j["inf_nll"] = e.inf_nll;
  j["acceptance_rate"] = e.acceptance_rate ? Json(*e.acceptance_rate) : Json(nullptr);
  j["labeled_seen"] = e.labeled_seen;
  j["unlabeled_seen"] = e.unlabeled_seen;
  j["weight_fallbacks"] = e.weight_fallbacks;
  return j;
}

int train_jsa_cmd(const Settings& s) {
  SemiConfig c;
  const auto method = s.get_string("method", "jsa");
  if (method == "jsa") {
    c.method = SemiMethod::kJsa;
  } else if (method == "pl") {
    c.method = SemiMethod::kPseudoLabel;
  } else {
    throw Error(ErrorKind::kConfig, "method must be pl or jsa (got '" + method + "')");
  }
  const auto weights = s.get_string("weights", "entriever");
  if (weights == "entriever") {
    c.weight_source = WeightSource::kEntriever;
  } else if (weights == "traditional") {
    c.weight_source = WeightSource::kTraditional;
  } else {
    throw Error(ErrorKind::kConfig, "weights must be traditional or entriever (got '" + weights + "')");
  }
  const auto [r_unlabeled, r_labeled] = parse_ratio(s.get_string("ratio", "1:1"));
  if (!(r_labeled > 0.0) || !(r_unlabeled >= 0.0)) {
    throw Error(ErrorKind::kConfig, "ratio terms must be positive");
  }
  c.unlabeled_ratio = r_unlabeled / r_labeled;
  c.gen_lr = s.get_double("gen_lr", c.gen_lr);
  c.inf_lr = s.get_double("inf_lr", c.inf_lr);
  c.epochs = s.get_uint("epochs", c.epochs);
  c.batch = s.get_uint("batch", c.batch);
  c.seed = s.get_uint("seed", c.seed);
  c.hide_kb_from_retriever = s.get_bool("hide_kb_from_retriever", false);
  c.workers = std::max<std::uint64_t>(1, s.get_uint("workers", 1));
  const auto out = require(s, "out");

  auto gen = load_gen(require(s, "gen"));
  auto inf = load_retriever(require(s, "inf"), ModelKind::kInference);
  require_same_vocab(gen.vocab, inf.vocab, "inference checkpoint");
  std::optional<LoadedRetriever> proposal;
  std::optional<LoadedEnergy> energy_model;
  if (s.has("proposal")) {
    proposal = load_retriever(s.get_string("proposal", ""), ModelKind::kProposal);
    require_same_vocab(gen.vocab, proposal->vocab, "proposal checkpoint");
  }
  if (s.has("energy")) {
    energy_model = load_energy(s.get_string("energy", ""), proposal ? &*proposal : nullptr);
    require_same_vocab(gen.vocab, energy_model->vocab, "energy checkpoint");
  }
  const auto labeled = encode_corpus(load_jsonl(require(s, "labeled")), gen.vocab);
  const auto unlabeled = encode_corpus(load_jsonl(require(s, "unlabeled")), gen.vocab);
  FrozenRetrieval frozen{proposal ? proposal->model.get() : nullptr, energy_model ? &energy_model->model : nullptr};
  ChainCache cache;
  std::vector<SemiEpochLog> history;
  jsa_train(gen.model, *inf.model, labeled, unlabeled, frozen, c, cache, &history);

  std::filesystem::create_directories(out);
  std::ostringstream lines;
  for (const auto& e : history) {
    lines << history_json(e).dump() << '\n';
  }
  std::cout << lines.str();
  write_file((std::filesystem::path(out) / "history.jsonl").string(), lines.str());
  save_gen((std::filesystem::path(out) / "gen.ckpt").string(), gen.model, gen.vocab);
  save_retriever((std::filesystem::path(out) / "inf.ckpt").string(), *inf.model, inf.vocab);
  return 0;
}

int verify_cmd(const Settings& s) {
  const auto suite = s.get_string("suite", "oracles");
  const auto seed = s.get_uint("seed", 1);
  std::vector<CheckResult> results;
  if (suite == "oracles") {
    results = verify_oracles(seed);
  } else if (suite == "gradients") {
    results = verify_gradients(seed);
  } else if (suite == "samplers") {
    results = verify_samplers(seed);
  } else {
    throw Error(ErrorKind::kConfig, "suite must be oracles, gradients or samplers (got '" + suite + "')");
  }
  bool all = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
    all = all && r.passed;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-based subset retrieval: training, retrieval, semi-supervised dialog training, evaluation"};
  app.require_subcommand(1);

  Command gen_data_cmd(app, "gen-data", "write a synthetic corpus",
                       {{"out", "output corpus path"},
                        {"num_sessions", "number of sessions"},
                        {"entities", "entities per knowledge base"},
                        {"slots", "slots per entity"},
                        {"turns_per_session", "turns per session"},
                        {"vocab_size", "size of the value-word pool"},
                        {"correlation_strength", "probability that an entity copies an earlier entity's value"},
                        {"seed", "generator seed"},
                        {"unlabeled", "write sessions without gold subsets"},
                        {"drop_kb", "with --unlabeled, omit the knowledge bases"}});
  Command train_proposal(app, "train-proposal", "train the factored proposal retriever", training_keys());
  Command train_inf_c(app, "train-inf", "train the response-aware inference model", training_keys());
  Command train_gen_c(app, "train-gen", "train the response generator", training_keys());
  Command train_energy_c(app, "train-energy", "train the energy model",
                         {{"data", "labeled corpus"},
                          {"proposal", "proposal checkpoint"},
                          {"out", "output checkpoint"},
                          {"estimator", "exact | is | mis"},
                          {"mode", "residual | nonresidual"},
                          {"samples", "importance samples or chain steps per turn"},
                          {"lr", "learning rate"},
                          {"epochs", "training epochs"},
                          {"batch", "turns per update"},
                          {"seed", "run seed"},
                          {"d_emb", "embedding width"},
                          {"hidden", "hidden width"},
                          {"workers", "parallel workers (1 is the deterministic reference)"}});
  Command retrieve_c(app, "retrieve", "retrieve a subset for every turn",
                     {{"data", "corpus"},
                      {"proposal", "proposal checkpoint"},
                      {"energy", "energy checkpoint; omit for proposal-only decoding"},
                      {"k", "number of proposal candidates to rescore"},
                      {"tau", "decode threshold without an energy model"},
                      {"out", "predictions (JSON Lines)"}});
  Command train_jsa_c(app, "train-jsa", "semi-supervised training of generator and inference model",
                      {{"labeled", "labeled corpus"},
                       {"unlabeled", "unlabeled corpus"},
                       {"gen", "pretrained generator checkpoint"},
                       {"inf", "pretrained inference checkpoint"},
                       {"proposal", "proposal checkpoint (traditional weights)"},
                       {"energy", "non-residual energy checkpoint (entriever weights)"},
                       {"method", "pl | jsa"},
                       {"weights", "traditional | entriever"},
                       {"ratio", "unlabeled:labeled sessions per epoch, e.g. 1:1"},
                       {"gen_lr", "generator learning rate"},
                       {"inf_lr", "inference model learning rate"},
                       {"epochs", "epochs"},
                       {"batch", "sessions per update"},
                       {"seed", "run seed"},
                       {"hide_kb_from_retriever", "traditional weights cannot see unlabeled knowledge bases"},
                       {"workers", "parallel workers"},
                       {"out", "output directory"}});
  Command eval_retrieval_c(app, "eval-retrieval", "score predictions against gold subsets",
                           {{"preds", "predictions from retrieve"},
                            {"data", "labeled corpus"},
                            {"report", "also write the report here"}});
  Command eval_e2e_c(app, "eval-e2e", "generate responses and score BLEU, Success and Combined",
                     {{"gen", "generator checkpoint"},
                      {"inf", "inference checkpoint"},
                      {"data", "corpus"},
                      {"proposal", "proposal checkpoint for retrieval (gold subsets otherwise)"},
                      {"energy", "energy checkpoint for rescored retrieval"},
                      {"k", "rescoring candidates"},
                      {"max_len", "maximum generated tokens"},
                      {"report", "also write the report here"}});
  Command verify_c(app, "verify", "run enumeration, finite-difference or sampler self-checks",
                   {{"suite", "oracles | gradients | samplers"}, {"seed", "fixture seed"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const std::vector<std::pair<const Command*, std::function<int(const Settings&)>>> handlers = {
      {&gen_data_cmd, gen_data},
      {&train_proposal, [](const Settings& s) { return train_retriever_cmd(s, false); }},
      {&train_inf_c, [](const Settings& s) { return train_retriever_cmd(s, true); }},
      {&train_gen_c, train_gen_cmd},
      {&train_energy_c, train_energy_cmd},
      {&retrieve_c, retrieve_cmd},
      {&train_jsa_c, train_jsa_cmd},
      {&eval_retrieval_c, eval_retrieval_cmd},
      {&eval_e2e_c, eval_e2e_cmd},
      {&verify_c, verify_cmd},
  };
  try {
    for (const auto& [command, handler] : handlers) {
      if (command->app()->parsed()) {
        return handler(command->settings());
      }
    }
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
