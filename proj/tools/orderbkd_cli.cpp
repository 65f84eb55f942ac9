// orderbkd command-line entry point.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "orderbkd/defense.hpp"
#include "orderbkd/errors.hpp"
#include "orderbkd/experiment.hpp"
#include "orderbkd/parallel.hpp"
#include "orderbkd/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace orderbkd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitShortfall = 3;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> scorer;
  std::vector<std::string> attacks;
  std::optional<std::string> defense;
  std::optional<double> rate;
  std::optional<int> target_label;
};

void add_override_flags(CLI::App* cmd, Overrides& o, bool require_config = true) {
  auto* c = cmd->add_option("--config", o.config, "experiment config (JSON)");
  if (require_config) c->required();
  cmd->add_option("--seed", o.seed, "top-level seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--scorer", o.scorer, "builtin|external")->check(CLI::IsMember({"builtin", "external"}));
  cmd->add_option("--attack", o.attacks, "orderbkd|badnet|addsent (repeatable)")
      ->check(CLI::IsMember({"orderbkd", "badnet", "addsent"}));
  cmd->add_option("--defense", o.defense, "onion|none")->check(CLI::IsMember({"onion", "none"}));
  cmd->add_option("--rate", o.rate, "poisoning rate");
  cmd->add_option("--target-label", o.target_label, "target label");
}

ExperimentConfig resolve_config(const Overrides& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.scorer) cfg.scorer.kind = *o.scorer == "builtin" ? ScorerHandle::Kind::kBuiltin : ScorerHandle::Kind::kExternal;
  if (!o.attacks.empty()) {
    cfg.attacks.clear();
    for (const auto& a : o.attacks) cfg.attacks.push_back(parse_trigger_kind(a));
  }
  if (o.defense) cfg.defense.enabled = *o.defense == "onion";
  if (o.rate) cfg.rate = *o.rate;
  if (o.target_label) cfg.target_label = *o.target_label;
  validate_config(cfg);
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

json stats_json(const PoisonStats& s) {
  return {{"dataset_size", s.dataset_size}, {"pool_size", s.pool_size}, {"requested", s.requested},
          {"poisoned", s.poisoned},         {"adverb", s.adverb},       {"determiner", s.determiner},
          {"skipped", s.skipped},           {"shortfall", s.shortfall}, {"realized_rate", s.realized_rate()}};
}

ScorerHandle builtin_scorer(const std::string& lm_path) {
  return ScorerHandle::builtin(std::make_shared<const LanguageModel>(LanguageModel::load(lm_path)));
}

Dataset load_any(const std::string& path, std::optional<int> class_count = std::nullopt) {
  return load_dataset(path, format_from_path(path), {class_count, Split::kTrain});
}

// ---------------------------------------------------------------------------

struct TrainTaggerArgs {
  std::string treebank, out, eval;
  int epochs = 5;
  std::uint64_t seed = 0;
};

int cmd_train_tagger(const TrainTaggerArgs& a) {
  const auto model = train_tagger(a.treebank, a.epochs, derive_seed(a.seed, "tagger"));
  model.save(a.out);
  std::cout << "tagger: " << model.dictionary().size() << " dictionary entries, " << model.weights().size()
            << " features -> " << a.out << '\n';
  if (!a.eval.empty()) {
    const auto gold = read_conllu(a.eval);
    const auto ev = evaluate_tagger(model, gold);
    std::printf("accuracy %.4f over %zu tokens\n", ev.accuracy(), ev.tokens);
    for (std::size_t t = 0; t < kUposCount; ++t) {
      if (!std::isnan(ev.precision[t])) {
        std::printf("  %-6s precision %.4f\n", std::string(to_string(static_cast<Upos>(t))).c_str(), ev.precision[t]);
      }
    }
  }
  return kExitOk;
}

struct TrainLmArgs {
  std::string corpus, out;
  int order = 3, min_count = 1;
  double discount = 0.75;
};

int cmd_train_lm(const TrainLmArgs& a) {
  const auto ds = load_any(a.corpus);
  std::vector<Tokens> sentences;
  for (const auto& ex : ds.examples) sentences.push_back(tokenize(ex.text).tokens);
  const auto lm = train_lm(sentences, a.order, a.min_count, a.discount);
  lm.save(a.out);
  std::cout << "lm: order " << lm.order() << ", vocabulary " << lm.vocabulary().size() << " -> " << a.out << '\n';
  return kExitOk;
}

int cmd_poison(const Overrides& o) {
  const auto cfg = resolve_config(o);
  Experiment exp(cfg);
  bool shortfall = false;
  for (TriggerKind kind : cfg.attacks) {
    const auto plan = exp.plan_for(kind);
    const auto outcome = poison_dataset(exp.train().examples, exp.class_count(), plan, exp.tagger(), exp.scorer());
    const auto ptest = build_poisoned_testset(exp.test().examples, exp.class_count(), plan, exp.tagger(), exp.scorer());
    const fs::path dir = fs::path(cfg.output_dir) / std::string(to_string(kind));
    fs::create_directories(dir);
    save_dataset(outcome.examples, (dir / "poisoned_train.jsonl").string(), DatasetFormat::kJsonl);
    save_dataset(ptest.examples, (dir / "poisoned_test.jsonl").string(), DatasetFormat::kJsonl);
    std::vector<LabeledExample> records;
    for (const auto& ex : outcome.examples) {
      if (ex.provenance) records.push_back(ex);
    }
    save_dataset(records, (dir / "poison_records.jsonl").string(), DatasetFormat::kJsonl);
    json st = stats_json(outcome.stats);
    st["test_eligible"] = ptest.eligible;
    st["test_excluded"] = ptest.excluded;
    write_json(dir / "poison_stats.json", st);
    std::cout << to_string(kind) << ": poisoned " << outcome.stats.poisoned << "/" << outcome.stats.requested
              << " requested, test " << ptest.examples.size() << " -> " << dir.string() << '\n';
    shortfall |= outcome.stats.shortfall > 0;
  }
  return shortfall ? kExitShortfall : kExitOk;
}

struct TrainVictimArgs {
  std::string data, out;
  std::optional<int> class_count;
  VictimHyperparams hp;
  std::uint64_t seed = 0;
};

int cmd_train_victim(TrainVictimArgs a) {
  const auto ds = load_any(a.data, a.class_count);
  a.hp.seed = derive_seed(a.seed, "victim");
  const auto model = train_victim(ds.examples, a.class_count.value_or(ds.meta.class_count), a.hp);
  model.save(a.out);
  std::printf("victim: %zu samples, final loss %.5f -> %s\n", ds.examples.size(),
              model.loss_curve().empty() ? 0.0 : model.loss_curve().back(), a.out.c_str());
  return kExitOk;
}

struct EvalArgs {
  std::string model, clean, poisoned, lm;
  int target_label = 1;
};

int cmd_eval(const EvalArgs& a) {
  if (a.clean.empty() && a.poisoned.empty()) throw ValidationError("eval needs --clean and/or --poisoned");
  const auto model = VictimModel::load(a.model);
  json out;
  if (!a.clean.empty()) out["cacc"] = clean_accuracy(model, load_any(a.clean, model.class_count()).examples);
  if (!a.poisoned.empty()) {
    const auto ds = load_any(a.poisoned, model.class_count());
    out["asr"] = attack_success_rate(model, ds.examples, a.target_label);
    std::vector<Tokens> clean, poisoned;
    std::vector<std::string> clean_text, poisoned_text;
    for (const auto& ex : ds.examples) {
      if (!ex.provenance) continue;
      clean.push_back(tokenize(ex.provenance->orig_text).tokens);
      poisoned.push_back(tokenize(ex.text).tokens);
      clean_text.push_back(ex.provenance->orig_text);
      poisoned_text.push_back(ex.text);
    }
    if (!clean.empty()) {
      const auto sims = similarities(clean_text, poisoned_text, EmbedderHandle::builtin_bow());
      double sum = 0.0;
      for (double s : sims) sum += s;
      out["similarity_mean"] = sum / static_cast<double>(sims.size());
      if (!a.lm.empty()) out["delta_ppl"] = delta_perplexity(clean, poisoned, builtin_scorer(a.lm));
    }
  }
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

struct DefendArgs {
  std::string lm, dev, input, output;
  double rate = 0.05;
  std::optional<double> threshold;
};

int cmd_defend(const DefendArgs& a) {
  const auto scorer = builtin_scorer(a.lm);
  double threshold = 0.0;
  if (a.threshold) {
    threshold = *a.threshold;
  } else {
    if (a.dev.empty()) throw ValidationError("defend needs --dev or --threshold");
    threshold = calibrate_threshold(load_any(a.dev).examples, scorer, a.rate);
  }
  auto ds = load_any(a.input);
  std::size_t removed = 0;
  for (auto& ex : ds.examples) {
    const auto toks = tokenize(ex.text).tokens;
    if (toks.size() < 2) continue;
    const auto res = onion_filter(toks, scorer, threshold);
    removed += res.removed.size();
    ex.text = detokenize(res.tokens);
  }
  save_dataset(ds.examples, a.output, format_from_path(a.output));
  std::printf("threshold %.6f, removed %zu tokens -> %s\n", threshold, removed, a.output.c_str());
  return kExitOk;
}

int cmd_run(const Overrides& o) {
  const auto cfg = resolve_config(o);
  const auto res = run_experiment(cfg);
  std::cout << "scorer: " << res.rows.front().scorer << "\nfingerprint: " << res.fingerprint << "\n\n"
            << render_table(res.rows);
  return res.shortfall ? kExitShortfall : kExitOk;
}

int cmd_compare(Overrides o) {
  if (o.attacks.empty()) o.attacks = {"orderbkd", "badnet", "addsent"};
  return cmd_run(o);
}

struct PosStudyArgs {
  Overrides o;
  std::size_t samples = 1500;
};

int cmd_pos_study(const PosStudyArgs& a) {
  const auto cfg = resolve_config(a.o);
  Experiment exp(cfg);
  const auto& train = exp.train().examples;
  const std::size_t n = std::min(a.samples, train.size());
  const std::vector<Upos> classes = {Upos::ADJ, Upos::DET, Upos::ADV, Upos::NOUN, Upos::VERB};
  const auto study = pos_choice_study(std::span(train).first(n), classes, exp.tagger(), exp.scorer(), exp.embedder());
  json j = pos_study_to_json(study);
  j["scorer"] = exp.scorer().identity();
  j["samples"] = n;
  write_json(fs::path(cfg.output_dir) / "pos_study.json", j);
  std::printf("%-5s %8s %8s %10s %8s\n", "POS", "occur", "poisoned", "dPPL", "sim");
  for (const auto& r : study.rows) {
    std::printf("%-5s %8zu %8zu %+10.2f %8.4f\n", std::string(to_string(r.cls)).c_str(), r.occurrences, r.poisoned,
                r.delta_ppl, r.similarity);
  }
  std::cout << study.note << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Textual backdoor toolkit: word-order triggers, baselines, and the ONION defense"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = hardware concurrency)");

  TrainTaggerArgs tt;
  auto* c_tt = app.add_subcommand("train-tagger", "train the POS tagger on a CoNLL-U treebank");
  c_tt->add_option("--treebank", tt.treebank)->required()->check(CLI::ExistingFile);
  c_tt->add_option("--out", tt.out)->required();
  c_tt->add_option("--epochs", tt.epochs);
  c_tt->add_option("--seed", tt.seed);
  c_tt->add_option("--eval", tt.eval, "held-out CoNLL-U to report accuracy on")->check(CLI::ExistingFile);

  TrainLmArgs tl;
  auto* c_tl = app.add_subcommand("train-lm", "train the Kneser-Ney language model on a dataset's text");
  c_tl->add_option("--corpus", tl.corpus)->required()->check(CLI::ExistingFile);
  c_tl->add_option("--out", tl.out)->required();
  c_tl->add_option("--order", tl.order);
  c_tl->add_option("--discount", tl.discount);
  c_tl->add_option("--min-count", tl.min_count);

  Overrides po;
  auto* c_po = app.add_subcommand("poison", "write poisoned train/test sets and poison records");
  add_override_flags(c_po, po);

  TrainVictimArgs tv;
  auto* c_tv = app.add_subcommand("train-victim", "train the hashed n-gram victim classifier");
  c_tv->add_option("--data", tv.data)->required()->check(CLI::ExistingFile);
  c_tv->add_option("--out", tv.out)->required();
  c_tv->add_option("--class-count", tv.class_count);
  c_tv->add_option("--epochs", tv.hp.epochs);
  c_tv->add_option("--lr", tv.hp.learning_rate);
  c_tv->add_option("--batch-size", tv.hp.batch_size);
  c_tv->add_option("--seed", tv.seed);

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "ASR / CACC / dPPL / similarity of a victim checkpoint");
  c_ev->add_option("--model", ev.model)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--clean", ev.clean)->check(CLI::ExistingFile);
  c_ev->add_option("--poisoned", ev.poisoned)->check(CLI::ExistingFile);
  c_ev->add_option("--lm", ev.lm, "language model for dPPL")->check(CLI::ExistingFile);
  c_ev->add_option("--target-label", ev.target_label);

  DefendArgs df;
  auto* c_df = app.add_subcommand("defend", "filter a dataset with ONION");
  c_df->add_option("--lm", df.lm)->required()->check(CLI::ExistingFile);
  c_df->add_option("--dev", df.dev, "clean dev set for threshold calibration")->check(CLI::ExistingFile);
  c_df->add_option("--input", df.input)->required()->check(CLI::ExistingFile);
  c_df->add_option("--output", df.output)->required();
  c_df->add_option("--rate", df.rate, "maximum false-removal rate");
  c_df->add_option("--threshold", df.threshold, "fixed threshold");

  Overrides ro;
  auto* c_run = app.add_subcommand("run", "full pipeline");
  add_override_flags(c_run, ro);

  Overrides co;
  auto* c_co = app.add_subcommand("compare", "full pipeline over several attacks (default: all three)");
  add_override_flags(c_co, co);

  PosStudyArgs ps;
  auto* c_ps = app.add_subcommand("pos-study", "dPPL and similarity per forced candidate POS class");
  add_override_flags(c_ps, ps.o);
  c_ps->add_option("--samples", ps.samples);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (threads > 0) set_thread_count(static_cast<unsigned>(threads));
  set_warning_sink([](std::string_view m) { std::cerr << "warning: " << m << '\n'; });

  try {
    if (*c_tt) return cmd_train_tagger(tt);
    if (*c_tl) return cmd_train_lm(tl);
    if (*c_po) return cmd_poison(po);
    if (*c_tv) return cmd_train_victim(tv);
    if (*c_ev) return cmd_eval(ev);
    if (*c_df) return cmd_defend(df);
    if (*c_run) return cmd_run(ro);
    if (*c_co) return cmd_compare(co);
    if (*c_ps) return cmd_pos_study(ps);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.validation() ? kExitValidation : kExitRuntime;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
