#include "orderbkd/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "orderbkd/defense.hpp"
#include "orderbkd/errors.hpp"
#include "orderbkd/parallel.hpp"
#include "orderbkd/scorer_client.hpp"
#include "orderbkd/triggers.hpp"
#include "orderbkd/util.hpp"

namespace orderbkd {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    (void)v;
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw ValidationError("unknown key '" + k + "' in " + where);
    }
  }
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

PeerSpec parse_peer(const json& j, const std::string& base) {
  PeerSpec p;
  if (j.contains("command")) {
    p.command = j["command"].get<std::vector<std::string>>();
    // a relative program path is taken relative to the config file
    if (!p.command.empty() && p.command[0].find('/') != std::string::npos) p.command[0] = resolve(base, p.command[0]);
  }
  p.host = j.value("host", "");
  p.port = j.value("port", static_cast<std::uint16_t>(0));
  return p;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  return j[key].get<T>();
}

std::string file_digest(const std::string& path) {
  if (path.empty()) return "";
  return hex64(fnv1a(read_file(path)));
}

}  // namespace

ExperimentConfig parse_config(const json& doc, const std::string& base_dir) {
  ExperimentConfig c;
  try {
    check_keys(doc, "config", {"seed", "output_dir", "data", "attack", "scorer", "embedder", "tagger", "victim", "defense"});
    c.seed = get_or<std::uint64_t>(doc, "seed", 0);
    c.output_dir = resolve(base_dir, get_or<std::string>(doc, "output_dir", "out"));

    const json& data = doc.at("data");
    check_keys(data, "data", {"train", "dev", "test", "class_count"});
    c.train_path = resolve(base_dir, data.at("train").get<std::string>());
    c.dev_path = resolve(base_dir, data.at("dev").get<std::string>());
    c.test_path = resolve(base_dir, data.at("test").get<std::string>());
    if (data.contains("class_count")) c.class_count = data["class_count"].get<int>();

    if (doc.contains("attack")) {
      const json& a = doc["attack"];
      check_keys(a, "attack", {"kinds", "target_label", "rate", "selection", "badnet_tokens", "addsent_sentence"});
      if (a.contains("kinds")) {
        c.attacks.clear();
        for (const auto& k : a["kinds"]) c.attacks.push_back(parse_trigger_kind(k.get<std::string>()));
      }
      c.target_label = get_or(a, "target_label", c.target_label);
      c.rate = get_or(a, "rate", c.rate);
      if (a.contains("selection")) c.selection = parse_selection(a["selection"].get<std::string>());
      if (a.contains("badnet_tokens")) c.badnet_tokens = a["badnet_tokens"].get<Tokens>();
      if (a.contains("addsent_sentence")) c.addsent_tokens = tokenize(a["addsent_sentence"].get<std::string>()).tokens;
    }

    if (doc.contains("scorer")) {
      const json& s = doc["scorer"];
      check_keys(s, "scorer", {"kind", "lm", "order", "discount", "min_count", "command", "host", "port"});
      const auto kind = get_or<std::string>(s, "kind", "builtin");
      if (kind != "builtin" && kind != "external") throw ValidationError("scorer.kind must be builtin or external");
      c.scorer.kind = kind == "builtin" ? ScorerHandle::Kind::kBuiltin : ScorerHandle::Kind::kExternal;
      c.scorer.lm_path = resolve(base_dir, get_or<std::string>(s, "lm", ""));
      c.scorer.order = get_or(s, "order", c.scorer.order);
      c.scorer.discount = get_or(s, "discount", c.scorer.discount);
      c.scorer.min_count = get_or(s, "min_count", c.scorer.min_count);
      c.scorer.peer = parse_peer(s, base_dir);
    }

    if (doc.contains("embedder")) {
      const json& e = doc["embedder"];
      check_keys(e, "embedder", {"kind", "command", "host", "port"});
      const auto kind = get_or<std::string>(e, "kind", "builtin_bow");
      if (kind != "builtin_bow" && kind != "external") throw ValidationError("embedder.kind must be builtin_bow or external");
      c.embedder.kind = kind == "builtin_bow" ? EmbedderHandle::Kind::kBuiltinBow : EmbedderHandle::Kind::kExternal;
      c.embedder.peer = parse_peer(e, base_dir);
    }

    if (doc.contains("tagger")) {
      const json& t = doc["tagger"];
      check_keys(t, "tagger", {"model", "treebank", "epochs"});
      c.tagger.model_path = resolve(base_dir, get_or<std::string>(t, "model", ""));
      c.tagger.treebank_path = resolve(base_dir, get_or<std::string>(t, "treebank", ""));
      c.tagger.epochs = get_or(t, "epochs", c.tagger.epochs);
    }

    if (doc.contains("victim")) {
      const json& v = doc["victim"];
      check_keys(v, "victim", {"epochs", "learning_rate", "batch_size"});
      c.victim.epochs = get_or(v, "epochs", c.victim.epochs);
      c.victim.learning_rate = get_or(v, "learning_rate", c.victim.learning_rate);
      c.victim.batch_size = get_or(v, "batch_size", c.victim.batch_size);
    }

    if (doc.contains("defense")) {
      const json& d = doc["defense"];
      check_keys(d, "defense", {"kind", "max_false_removal_rate", "threshold"});
      const auto kind = get_or<std::string>(d, "kind", "onion");
      if (kind != "onion" && kind != "none") throw ValidationError("defense.kind must be onion or none");
      c.defense.enabled = kind == "onion";
      c.defense.max_false_removal_rate = get_or(d, "max_false_removal_rate", c.defense.max_false_removal_rate);
      if (d.contains("threshold") && !d["threshold"].is_null()) c.defense.threshold = d["threshold"].get<double>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  } catch (const IoError& e) {
    throw ValidationError(e.what());
  }
  return parse_config(doc, fs::path(path).parent_path().string());
}

json config_to_json(const ExperimentConfig& c) {
  json attacks = json::array();
  for (auto k : c.attacks) attacks.push_back(std::string(to_string(k)));
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"train", c.train_path},
        {"dev", c.dev_path},
        {"test", c.test_path},
        {"class_count", c.class_count ? json(*c.class_count) : json(nullptr)}}},
      {"attack",
       {{"kinds", attacks},
        {"target_label", c.target_label},
        {"rate", c.rate},
        {"selection", std::string(to_string(c.selection))},
        {"badnet_tokens", c.badnet_tokens},
        {"addsent_sentence", detokenize(c.addsent_tokens)}}},
      {"scorer",
       {{"kind", c.scorer.kind == ScorerHandle::Kind::kBuiltin ? "builtin" : "external"},
        {"lm", c.scorer.lm_path},
        {"order", c.scorer.order},
        {"discount", c.scorer.discount},
        {"min_count", c.scorer.min_count},
        {"command", c.scorer.peer.command},
        {"host", c.scorer.peer.host},
        {"port", c.scorer.peer.port}}},
      {"embedder",
       {{"kind", c.embedder.kind == EmbedderHandle::Kind::kBuiltinBow ? "builtin_bow" : "external"},
        {"command", c.embedder.peer.command},
        {"host", c.embedder.peer.host},
        {"port", c.embedder.peer.port}}},
      {"tagger", {{"model", c.tagger.model_path}, {"treebank", c.tagger.treebank_path}, {"epochs", c.tagger.epochs}}},
      {"victim",
       {{"epochs", c.victim.epochs}, {"learning_rate", c.victim.learning_rate}, {"batch_size", c.victim.batch_size}}},
      {"defense",
       {{"kind", c.defense.enabled ? "onion" : "none"},
        {"max_false_removal_rate", c.defense.max_false_removal_rate},
        {"threshold", c.defense.threshold ? json(*c.defense.threshold) : json(nullptr)}}},
  };
}

void validate_config(const ExperimentConfig& c) {
  auto must_exist = [](const std::string& p, const char* what) {
    if (p.empty()) throw ValidationError(std::string(what) + " path is not set");
    if (!fs::exists(p)) throw ValidationError(std::string(what) + " not found: " + p);
  };
  must_exist(c.train_path, "train dataset");
  must_exist(c.dev_path, "dev dataset");
  must_exist(c.test_path, "test dataset");
  if (c.tagger.model_path.empty() && c.tagger.treebank_path.empty()) {
    throw ValidationError("tagger needs either a model or a treebank");
  }
  if (!c.tagger.model_path.empty()) must_exist(c.tagger.model_path, "tagger model");
  if (c.tagger.model_path.empty()) must_exist(c.tagger.treebank_path, "treebank");
  if (c.tagger.epochs < 0) throw ValidationError("tagger.epochs must be non-negative");
  if (!(c.rate >= 0.0 && c.rate <= 1.0)) throw ValidationError("attack.rate must be in [0, 1]");
  if (c.target_label < 0) throw ValidationError("attack.target_label must be non-negative");
  if (c.class_count && (*c.class_count < 2 || c.target_label >= *c.class_count)) {
    throw ValidationError("attack.target_label out of range for data.class_count");
  }
  if (c.attacks.empty()) throw ValidationError("attack.kinds is empty");
  std::set<TriggerKind> seen(c.attacks.begin(), c.attacks.end());
  if (seen.size() != c.attacks.size()) throw ValidationError("attack.kinds lists an attack twice");
  if (seen.count(TriggerKind::kBadNet) && c.badnet_tokens.empty()) throw ValidationError("attack.badnet_tokens is empty");
  if (seen.count(TriggerKind::kAddSent) && c.addsent_tokens.empty()) {
    throw ValidationError("addsent needs attack.addsent_sentence");
  }
  if (c.scorer.kind == ScorerHandle::Kind::kBuiltin) {
    if (!c.scorer.lm_path.empty()) {
      must_exist(c.scorer.lm_path, "language model");
    } else {
      if (c.scorer.order < 1 || c.scorer.order > LanguageModel::kMaxOrder) throw ValidationError("scorer.order out of range");
      if (!(c.scorer.discount > 0.0 && c.scorer.discount < 1.0)) throw ValidationError("scorer.discount must be in (0, 1)");
    }
  } else if (c.scorer.peer.empty()) {
    throw ValidationError("external scorer needs a command or host:port");
  }
  if (c.embedder.kind == EmbedderHandle::Kind::kExternal && c.embedder.peer.empty() &&
      c.scorer.kind != ScorerHandle::Kind::kExternal) {
    throw ValidationError("external embedder needs a command or host:port");
  }
  if (c.victim.epochs < 0 || c.victim.batch_size < 1 || !(c.victim.learning_rate > 0.0)) {
    throw ValidationError("invalid victim hyperparameters");
  }
  if (!(c.defense.max_false_removal_rate >= 0.0 && c.defense.max_false_removal_rate <= 1.0)) {
    throw ValidationError("defense.max_false_removal_rate must be in [0, 1]");
  }
}

std::string config_fingerprint(const ExperimentConfig& c) {
  json j = config_to_json(c);
  j.erase("output_dir");
  j["data"]["train"] = file_digest(c.train_path);
  j["data"]["dev"] = file_digest(c.dev_path);
  j["data"]["test"] = file_digest(c.test_path);
  j["tagger"]["model"] = file_digest(c.tagger.model_path);
  j["tagger"]["treebank"] = c.tagger.model_path.empty() ? file_digest(c.tagger.treebank_path) : "";
  j["scorer"]["lm"] = file_digest(c.scorer.lm_path);
  return hex64(fnv1a(j.dump()));
}

std::uint64_t stage_seed(const ExperimentConfig& cfg, std::string_view stage) { return derive_seed(cfg.seed, stage); }

// ---------------------------------------------------------------------------
// POS-choice study

PosStudy pos_choice_study(std::span<const LabeledExample> samples, std::span<const Upos> classes,
                          const TaggerModel& tagger, const ScorerHandle& scorer, const EmbedderHandle& embedder) {
  std::vector<TaggedSentence> tagged(samples.size());
  parallel_for(samples.size(), true, [&](std::size_t i) { tagged[i] = tag(tagger, tokenize(samples[i].text).tokens); });

  PosStudy study;
  for (Upos cls : classes) {
    PosStudyRow row;
    row.cls = cls;
    std::vector<std::optional<RepositionResult>> moved(samples.size());
    parallel_for(samples.size(), scorer.kind() == ScorerHandle::Kind::kBuiltin, [&](std::size_t i) {
      const auto cands = select_candidates(tagged[i], cls);
      if (cands.empty()) return;
      try {
        moved[i] = choose_best_reposition(tagged[i], cands, scorer);
      } catch (const NoValidPositionError&) {
      }
    });
    std::vector<Tokens> clean, poisoned;
    std::vector<std::string> clean_text, poisoned_text;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      row.occurrences += static_cast<std::size_t>(std::count(tagged[i].tags.begin(), tagged[i].tags.end(), cls));
      if (!moved[i]) continue;
      clean.push_back(tagged[i].tokens);
      poisoned.push_back(moved[i]->tokens);
      clean_text.push_back(detokenize(tagged[i].tokens));
      poisoned_text.push_back(detokenize(moved[i]->tokens));
    }
    row.poisoned = clean.size();
    if (!clean.empty()) {
      row.delta_ppl = delta_perplexity(clean, poisoned, scorer);
      const auto sims = similarities(clean_text, poisoned_text, embedder);
      double sum = 0.0;
      for (double s : sims) sum += s;
      row.similarity = sum / static_cast<double>(sims.size());
    }
    study.rows.push_back(row);
  }

  const PosStudyRow* adv = nullptr;
  const PosStudyRow* lowest = nullptr;
  for (const auto& r : study.rows) {
    if (r.poisoned == 0) continue;
    if (r.cls == Upos::ADV) adv = &r;
    if (!lowest || r.delta_ppl < lowest->delta_ppl) lowest = &r;
  }
  study.adverb_lowest = adv != nullptr && lowest == adv;
  if (!adv) {
    study.note = "DEVIATION: no adverb could be repositioned";
  } else if (!study.adverb_lowest) {
    study.note = "DEVIATION: " + std::string(to_string(lowest->cls)) + " has a lower delta PPL than ADV under " +
                 scorer.identity();
  } else {
    study.note = "ADV has the lowest delta PPL";
  }
  return study;
}

json pos_study_to_json(const PosStudy& study) {
  json rows = json::array();
  for (const auto& r : study.rows) {
    rows.push_back({{"pos", std::string(to_string(r.cls))},
                    {"occurrences", r.occurrences},
                    {"poisoned", r.poisoned},
                    {"delta_ppl", r.delta_ppl},
                    {"similarity", r.similarity}});
  }
  return json{{"rows", rows}, {"adverb_lowest", study.adverb_lowest}, {"note", study.note}};
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

template <typename F>
decltype(auto) stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const ValidationError& e) {
    throw StageError(name, e.what(), true);
  } catch (const std::exception& e) {
    throw StageError(name, e.what(), false);
  }
}

std::shared_ptr<ExternalScorer> open_peer(const PeerSpec& p) {
  if (!p.command.empty()) return ExternalScorer::spawn(p.command);
  return ExternalScorer::connect(p.host, p.port);
}

std::vector<Tokens> tokenize_all(std::span<const LabeledExample> xs) {
  std::vector<Tokens> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(tokenize(x.text).tokens);
  return out;
}

}  // namespace

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {}

const Dataset& Experiment::train() {
  if (!train_) {
    train_ = stage("load-data", [&] {
      return load_dataset(cfg_.train_path, format_from_path(cfg_.train_path), {cfg_.class_count, Split::kTrain});
    });
  }
  return *train_;
}

int Experiment::class_count() { return cfg_.class_count.value_or(train().meta.class_count); }

const Dataset& Experiment::dev() {
  if (!dev_) {
    const int cc = class_count();
    dev_ = stage("load-data", [&] { return load_dataset(cfg_.dev_path, format_from_path(cfg_.dev_path), {cc, Split::kDev}); });
  }
  return *dev_;
}

const Dataset& Experiment::test() {
  if (!test_) {
    const int cc = class_count();
    test_ = stage("load-data",
                  [&] { return load_dataset(cfg_.test_path, format_from_path(cfg_.test_path), {cc, Split::kTest}); });
  }
  return *test_;
}

const TaggerModel& Experiment::tagger() {
  if (!tagger_) {
    tagger_ = stage("tag", [&] {
      if (!cfg_.tagger.model_path.empty()) return TaggerModel::load(cfg_.tagger.model_path);
      return train_tagger(cfg_.tagger.treebank_path, cfg_.tagger.epochs, stage_seed(cfg_, "tagger"));
    });
  }
  return *tagger_;
}

const ScorerHandle& Experiment::scorer() {
  if (!scorer_) {
    if (cfg_.scorer.kind == ScorerHandle::Kind::kExternal) {
      scorer_ = stage("scorer", [&] { return ScorerHandle::external(open_peer(cfg_.scorer.peer)); });
    } else {
      const auto& tr = train();
      scorer_ = stage("scorer", [&] {
        if (!cfg_.scorer.lm_path.empty()) {
          return ScorerHandle::builtin(std::make_shared<const LanguageModel>(LanguageModel::load(cfg_.scorer.lm_path)));
        }
        const auto corpus = tokenize_all(tr.examples);
        return ScorerHandle::builtin(std::make_shared<const LanguageModel>(
            train_lm(corpus, cfg_.scorer.order, cfg_.scorer.min_count, cfg_.scorer.discount)));
      });
    }
  }
  return *scorer_;
}

const EmbedderHandle& Experiment::embedder() {
  if (!embedder_) {
    if (cfg_.embedder.kind == EmbedderHandle::Kind::kBuiltinBow) {
      embedder_ = EmbedderHandle::builtin_bow();
    } else if (cfg_.embedder.peer.empty()) {
      const auto& s = scorer();
      embedder_ = stage("embedder", [&] { return EmbedderHandle::external(s.shared_peer()); });
    } else {
      embedder_ = stage("embedder", [&] { return EmbedderHandle::external(open_peer(cfg_.embedder.peer)); });
    }
  }
  return *embedder_;
}

const VictimModel& Experiment::clean_victim() {
  if (!clean_victim_) {
    const auto& tr = train();
    const int cc = class_count();
    VictimHyperparams hp = cfg_.victim;
    hp.seed = stage_seed(cfg_, "victim");
    clean_victim_ = stage("train-victim", [&] { return train_victim(tr.examples, cc, hp); });
  }
  return *clean_victim_;
}

double Experiment::defense_threshold() {
  if (!threshold_) {
    if (cfg_.defense.threshold) {
      threshold_ = *cfg_.defense.threshold;
    } else {
      const auto& d = dev();
      const auto& s = scorer();
      threshold_ = stage("defend", [&] { return calibrate_threshold(d.examples, s, cfg_.defense.max_false_removal_rate); });
    }
  }
  return *threshold_;
}

PoisonPlan Experiment::plan_for(TriggerKind kind) const {
  PoisonPlan plan;
  plan.target_label = cfg_.target_label;
  plan.rate = cfg_.rate;
  plan.selection = cfg_.selection;
  plan.seed = stage_seed(cfg_, "poison/" + std::string(to_string(kind)));
  plan.trigger.kind = kind;
  plan.trigger.badnet_tokens = cfg_.badnet_tokens;
  plan.trigger.addsent_tokens = cfg_.addsent_tokens;
  plan.trigger.seed = stage_seed(cfg_, "trigger/" + std::string(to_string(kind)));
  return plan;
}

std::vector<int> Experiment::defended_predictions(const VictimModel& model, std::span<const LabeledExample> examples) {
  const double threshold = defense_threshold();
  const auto& s = scorer();
  std::vector<int> preds(examples.size());
  parallel_for(examples.size(), s.kind() == ScorerHandle::Kind::kBuiltin, [&](std::size_t i) {
    auto toks = tokenize(examples[i].text).tokens;
    if (toks.size() >= 2) toks = onion_filter(toks, s, threshold).tokens;
    preds[i] = predict(model, toks).label;
  });
  return preds;
}

EvaluationReport Experiment::run_attack(TriggerKind kind, PoisonStats& stats) {
  const std::string name(to_string(kind));
  const auto& tr = train();
  const auto& te = test();
  const int cc = class_count();
  const auto& tg = tagger();
  const auto& sc = scorer();
  const auto plan = plan_for(kind);

  auto outcome = stage("poison", [&] { return poison_dataset(tr.examples, cc, plan, tg, sc); });
  stats = outcome.stats;

  VictimHyperparams hp = cfg_.victim;
  hp.seed = stage_seed(cfg_, "victim");
  const VictimModel model = stage("train-victim", [&] { return train_victim(outcome.examples, cc, hp); });
  const VictimModel& clean_model = clean_victim();

  auto ptest = stage("poison-test", [&] { return build_poisoned_testset(te.examples, cc, plan, tg, sc); });

  ReportInputs in;
  stage("eval", [&] {
    in.attack = name;
    in.asr = attack_success_rate(model, ptest.examples, plan.target_label);
    in.cacc = clean_accuracy(model, te.examples);
    in.clean_baseline_acc = clean_accuracy(clean_model, te.examples);
    in.clean_model_asr = attack_success_rate(clean_model, ptest.examples, plan.target_label);

    std::vector<Tokens> clean_toks, poisoned_toks;
    std::vector<std::string> clean_text, poisoned_text;
    for (const auto& ex : ptest.examples) {
      clean_toks.push_back(tokenize(ex.provenance->orig_text).tokens);
      poisoned_toks.push_back(tokenize(ex.text).tokens);
      clean_text.push_back(ex.provenance->orig_text);
      poisoned_text.push_back(ex.text);
    }
    in.delta_ppl = delta_perplexity(clean_toks, poisoned_toks, sc);
    const auto sims = similarities(clean_text, poisoned_text, embedder());
    double sum = 0.0;
    for (double s : sims) sum += s;
    in.similarity_mean = sum / static_cast<double>(sims.size());
    in.realized_lambda = outcome.stats.realized_rate();
    in.realized_lambda1 = outcome.stats.lambda_adverb();
    in.realized_lambda2 = outcome.stats.lambda_determiner();
    in.poisoned_train = outcome.stats.poisoned;
    in.shortfall = outcome.stats.shortfall;
    in.poisoned_test = ptest.examples.size();
    in.excluded_test = ptest.excluded;
    in.scorer = sc.identity();
    in.embedder = embedder().identity();
    in.fingerprint = fingerprint_;
  });

  if (cfg_.defense.enabled) {
    stage("defend", [&] {
      DefenseOutcome d;
      d.name = "onion";
      d.threshold = defense_threshold();
      d.asr = attack_success_rate(defended_predictions(model, ptest.examples), plan.target_label);
      std::vector<int> labels;
      for (const auto& ex : te.examples) labels.push_back(ex.label);
      d.cacc = clean_accuracy(defended_predictions(model, te.examples), labels);
      in.defense = d;
    });
  }

  stage("write-output", [&] {
    const fs::path dir = fs::path(cfg_.output_dir) / name;
    fs::create_directories(dir);
    save_dataset(outcome.examples, (dir / "poisoned_train.jsonl").string(), DatasetFormat::kJsonl);
    save_dataset(ptest.examples, (dir / "poisoned_test.jsonl").string(), DatasetFormat::kJsonl);
    std::vector<LabeledExample> records;
    for (const auto& ex : outcome.examples) {
      if (ex.provenance) records.push_back(ex);
    }
    save_dataset(records, (dir / "poison_records.jsonl").string(), DatasetFormat::kJsonl);
  });

  return stage("report", [&] { return assemble_report(in); });
}

ExperimentResult Experiment::run() {
  stage("validate", [&] { validate_config(cfg_); });
  fingerprint_ = stage("validate", [&] { return config_fingerprint(cfg_); });
  stage("prepare-output", [&] {
    fs::create_directories(cfg_.output_dir);
    fs::remove(fs::path(cfg_.output_dir) / "FAILED");
  });

  ExperimentResult res;
  res.fingerprint = fingerprint_;
  for (TriggerKind kind : cfg_.attacks) {
    PoisonStats st;
    res.rows.push_back(run_attack(kind, st));
    res.stats.push_back(st);
    res.shortfall |= st.shortfall > 0;
  }

  json cfg_echo = config_to_json(cfg_);
  cfg_echo.erase("output_dir");
  json rows = json::array();
  json stats = json::array();
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    rows.push_back(res.rows[i]);
    const auto& s = res.stats[i];
    stats.push_back({{"attack", res.rows[i].attack},
                     {"dataset_size", s.dataset_size},
                     {"pool_size", s.pool_size},
                     {"requested", s.requested},
                     {"poisoned", s.poisoned},
                     {"adverb", s.adverb},
                     {"determiner", s.determiner},
                     {"skipped", s.skipped},
                     {"shortfall", s.shortfall}});
  }
  res.report = json{{"format", "orderbkd-report"},
                    {"version", 1},
                    {"fingerprint", fingerprint_},
                    {"seed", cfg_.seed},
                    {"scorer", scorer().identity()},
                    {"embedder", embedder().identity()},
                    {"threshold", cfg_.defense.enabled ? json(defense_threshold()) : json(nullptr)},
                    {"config", cfg_echo},
                    {"attacks", rows},
                    {"poison_stats", stats}};

  stage("write-output", [&] {
    std::ofstream out(fs::path(cfg_.output_dir) / "report.json", std::ios::binary | std::ios::trunc);
    out << res.report.dump(2) << '\n';
    std::ofstream txt(fs::path(cfg_.output_dir) / "report.txt", std::ios::binary | std::ios::trunc);
    txt << "scorer: " << scorer().identity() << "\nfingerprint: " << fingerprint_ << "\n\n"
        << render_table(res.rows);
    if (!out || !txt) throw IoError("cannot write report under " + cfg_.output_dir);
  });
  return res;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  Experiment exp(cfg);
  try {
    return exp.run();
  } catch (const StageError& e) {
    if (e.stage() != "validate") {
      std::error_code ec;
      fs::create_directories(cfg.output_dir, ec);
      std::ofstream marker(fs::path(cfg.output_dir) / "FAILED", std::ios::trunc);
      marker << e.what() << '\n';
    }
    throw;
  }
}

}  // namespace orderbkd
