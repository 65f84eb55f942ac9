#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "orderbkd/corpus.hpp"
#include "orderbkd/lm.hpp"
#include "orderbkd/victim.hpp"

namespace orderbkd {

class ExternalScorer;

/// Sentence embedder: token-count vectors (builtin) or the peer's `embed` op.
class EmbedderHandle {
 public:
  enum class Kind { kBuiltinBow, kExternal };

  static EmbedderHandle builtin_bow() { return EmbedderHandle(nullptr); }
  static EmbedderHandle external(std::shared_ptr<ExternalScorer> peer);

  Kind kind() const noexcept { return peer_ ? Kind::kExternal : Kind::kBuiltinBow; }
  ExternalScorer* external_peer() const noexcept { return peer_.get(); }
  std::string identity() const;

 private:
  explicit EmbedderHandle(std::shared_ptr<ExternalScorer> peer) : peer_(std::move(peer)) {}
  std::shared_ptr<ExternalScorer> peer_;
};

double attack_success_rate(std::span<const int> predictions, int target_label);
double attack_success_rate(const VictimModel& model, std::span<const LabeledExample> poisoned_test, int target_label);

double clean_accuracy(std::span<const int> predictions, std::span<const int> labels);
double clean_accuracy(const VictimModel& model, std::span<const LabeledExample> clean_test);

/// mean(PPL(poisoned)) - mean(PPL(clean)) over aligned pairs.
double delta_perplexity(std::span<const Tokens> clean, std::span<const Tokens> poisoned, const ScorerHandle& scorer);
double delta_perplexity(std::span<const double> clean_ppl, std::span<const double> poisoned_ppl);

/// Cosine of token-count vectors; 1 exactly when the multisets match.
double bow_cosine(std::span<const std::string> a, std::span<const std::string> b);
double cosine(std::span<const double> a, std::span<const double> b);

double similarity(const LabeledExample& original, const LabeledExample& poisoned, const EmbedderHandle& embedder);
/// Pairwise similarities; external embedders receive pipelined requests.
std::vector<double> similarities(std::span<const std::string> originals, std::span<const std::string> poisoned,
                                 const EmbedderHandle& embedder);

struct DefenseOutcome {
  std::string name;
  double threshold = 0.0;
  double asr = 0.0;
  double cacc = 0.0;
  bool operator==(const DefenseOutcome&) const = default;
};

/// One row of the attack/defense tables.
struct EvaluationReport {
  std::string attack;
  double asr = 0.0;
  double cacc = 0.0;
  double clean_baseline_acc = 0.0;
  /// ASR of the clean-trained model on the same poisoned test set.
  double clean_model_asr = 0.0;
  double delta_ppl = 0.0;
  double similarity_mean = 0.0;
  double realized_lambda = 0.0;
  double realized_lambda1 = 0.0;
  double realized_lambda2 = 0.0;
  std::size_t poisoned_train = 0;
  std::size_t shortfall = 0;
  std::size_t poisoned_test = 0;
  std::size_t excluded_test = 0;
  std::optional<DefenseOutcome> defense;
  std::string scorer;
  std::string embedder;
  std::string fingerprint;

  bool operator==(const EvaluationReport&) const = default;
};

/// Everything assemble_report needs; any unset required field is an error.
struct ReportInputs {
  std::optional<std::string> attack;
  std::optional<double> asr;
  std::optional<double> cacc;
  std::optional<double> clean_baseline_acc;
  std::optional<double> clean_model_asr;
  std::optional<double> delta_ppl;
  std::optional<double> similarity_mean;
  std::optional<double> realized_lambda;
  std::optional<double> realized_lambda1;
  std::optional<double> realized_lambda2;
  std::size_t poisoned_train = 0;
  std::size_t shortfall = 0;
  std::size_t poisoned_test = 0;
  std::size_t excluded_test = 0;
  std::optional<DefenseOutcome> defense;
  std::optional<std::string> scorer;
  std::optional<std::string> embedder;
  std::optional<std::string> fingerprint;
};

EvaluationReport assemble_report(const ReportInputs& in);

void to_json(nlohmann::json& j, const DefenseOutcome& d);
void from_json(const nlohmann::json& j, DefenseOutcome& d);
void to_json(nlohmann::json& j, const EvaluationReport& r);
void from_json(const nlohmann::json& j, EvaluationReport& r);

/// Aligned text table, one row per report in the given order.
std::string render_table(std::span<const EvaluationReport> rows);

}  // namespace orderbkd
