#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "orderbkd/corpus.hpp"
#include "orderbkd/errors.hpp"
#include "orderbkd/lm.hpp"
#include "orderbkd/metrics.hpp"
#include "orderbkd/poison.hpp"
#include "orderbkd/tagger.hpp"
#include "orderbkd/victim.hpp"

namespace orderbkd {

struct PeerSpec {
  std::vector<std::string> command;  // spawn this...
  std::string host;                  // ...or connect here
  std::uint16_t port = 0;
  bool empty() const { return command.empty() && host.empty(); }
};

struct ScorerSpec {
  ScorerHandle::Kind kind = ScorerHandle::Kind::kBuiltin;
  std::string lm_path;  // builtin: load this model instead of training one
  int order = 3;
  double discount = 0.75;
  int min_count = 1;
  PeerSpec peer;
};

struct EmbedderSpec {
  EmbedderHandle::Kind kind = EmbedderHandle::Kind::kBuiltinBow;
  PeerSpec peer;  // empty: share the scorer's connection
};

struct TaggerSpec {
  std::string model_path;
  std::string treebank_path;
  int epochs = 5;
};

struct DefenseSpec {
  bool enabled = true;
  double max_false_removal_rate = 0.05;
  std::optional<double> threshold;  // fixed threshold instead of calibration
};

struct ExperimentConfig {
  std::string train_path;
  std::string dev_path;
  std::string test_path;
  std::optional<int> class_count;
  int target_label = 1;
  double rate = 0.2;
  Selection selection = Selection::kNonTargetOnly;
  std::vector<TriggerKind> attacks = {TriggerKind::kOrderBkd};
  Tokens badnet_tokens = {"cf", "mn", "bb", "tq"};
  Tokens addsent_tokens;
  ScorerSpec scorer;
  EmbedderSpec embedder;
  TaggerSpec tagger;
  VictimHyperparams victim;
  DefenseSpec defense;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
};

/// Parses the JSON config document; relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::string& base_dir);
ExperimentConfig load_config(const std::string& path);
/// Canonical JSON form (paths included), used for echoing and fingerprinting.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Throws ValidationError when a referenced file is missing or a value is out of range.
void validate_config(const ExperimentConfig& cfg);

/// Hash of the canonical config (minus paths and output directory) and the
/// content of every input file.
std::string config_fingerprint(const ExperimentConfig& cfg);

/// Stage seeds, all derived from the single top-level seed.
std::uint64_t stage_seed(const ExperimentConfig& cfg, std::string_view stage);

/// Stage failure; the message starts with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, bool validation)
      : Error(stage + ": " + what), stage_(std::move(stage)), validation_(validation) {}
  const std::string& stage() const noexcept { return stage_; }
  bool validation() const noexcept { return validation_; }

 private:
  std::string stage_;
  bool validation_;
};

struct PosStudyRow {
  Upos cls = Upos::ADV;
  std::size_t occurrences = 0;  // tokens with this tag across the samples
  std::size_t poisoned = 0;     // samples that received the trigger
  double delta_ppl = 0.0;
  double similarity = 0.0;
};

struct PosStudy {
  std::vector<PosStudyRow> rows;
  bool adverb_lowest = false;
  std::string note;
};

/// Repositions a forced POS class in every sample and reports per-class ΔPPL
/// and similarity.
PosStudy pos_choice_study(std::span<const LabeledExample> samples, std::span<const Upos> classes,
                          const TaggerModel& tagger, const ScorerHandle& scorer, const EmbedderHandle& embedder);

nlohmann::json pos_study_to_json(const PosStudy& study);

struct ExperimentResult {
  std::string fingerprint;
  std::vector<EvaluationReport> rows;  // in config attack order
  std::vector<PoisonStats> stats;
  nlohmann::json report;              // what report.json holds
  bool shortfall = false;
};

/// Shared, lazily built experiment state (datasets, tagger, scorer, clean
/// baseline). Exposed so tests and the CLI can reuse pieces.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const Dataset& train();
  const Dataset& dev();
  const Dataset& test();
  int class_count();
  const TaggerModel& tagger();
  const ScorerHandle& scorer();
  const EmbedderHandle& embedder();
  const VictimModel& clean_victim();
  double defense_threshold();

  PoisonPlan plan_for(TriggerKind kind) const;

  /// Runs every configured attack and writes outputs under output_dir.
  ExperimentResult run();

 private:
  EvaluationReport run_attack(TriggerKind kind, PoisonStats& stats);
  std::vector<int> defended_predictions(const VictimModel& model, std::span<const LabeledExample> examples);

  ExperimentConfig cfg_;
  std::string fingerprint_;
  std::optional<Dataset> train_, dev_, test_;
  std::optional<TaggerModel> tagger_;
  std::optional<ScorerHandle> scorer_;
  std::optional<EmbedderHandle> embedder_;
  std::optional<VictimModel> clean_victim_;
  std::optional<double> threshold_;
  std::optional<std::vector<Tokens>> filtered_clean_test_;
};

/// Validates, runs, and writes report.json / report.txt plus per-attack
/// poisoned datasets. Failures leave a FAILED marker naming the stage.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace orderbkd
