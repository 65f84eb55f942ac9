#include "orderbkd/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "orderbkd/errors.hpp"
#include "orderbkd/parallel.hpp"
#include "orderbkd/scorer_client.hpp"

namespace orderbkd {

using nlohmann::json;

EmbedderHandle EmbedderHandle::external(std::shared_ptr<ExternalScorer> peer) {
  if (!peer) throw ValidationError("external embedder requires a connection");
  return EmbedderHandle(std::move(peer));
}

std::string EmbedderHandle::identity() const {
  return peer_ ? "external:" + peer_->describe() : "builtin_bow";
}

double attack_success_rate(std::span<const int> predictions, int target_label) {
  if (predictions.empty()) throw ValidationError("attack success rate of an empty set");
  const auto hits = std::count(predictions.begin(), predictions.end(), target_label);
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double attack_success_rate(const VictimModel& model, std::span<const LabeledExample> poisoned_test, int target_label) {
  std::vector<int> preds;
  preds.reserve(poisoned_test.size());
  for (const auto& ex : poisoned_test) preds.push_back(predict(model, tokenize(ex.text).tokens).label);
  return attack_success_rate(preds, target_label);
}

double clean_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw ValidationError("clean accuracy of an empty set");
  if (predictions.size() != labels.size()) throw ValidationError("prediction/label length mismatch");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += predictions[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

double clean_accuracy(const VictimModel& model, std::span<const LabeledExample> clean_test) {
  std::vector<int> preds, labels;
  for (const auto& ex : clean_test) {
    preds.push_back(predict(model, tokenize(ex.text).tokens).label);
    labels.push_back(ex.label);
  }
  return clean_accuracy(preds, labels);
}

double delta_perplexity(std::span<const double> clean_ppl, std::span<const double> poisoned_ppl) {
  if (clean_ppl.size() != poisoned_ppl.size()) throw ValidationError("clean/poisoned lists differ in length");
  if (clean_ppl.empty()) throw ValidationError("delta perplexity of empty lists");
  double c = 0.0, p = 0.0;
  for (double v : clean_ppl) c += v;
  for (double v : poisoned_ppl) p += v;
  const auto n = static_cast<double>(clean_ppl.size());
  return p / n - c / n;
}

double delta_perplexity(std::span<const Tokens> clean, std::span<const Tokens> poisoned, const ScorerHandle& scorer) {
  if (clean.size() != poisoned.size()) throw ValidationError("clean/poisoned lists differ in length");
  if (clean.empty()) throw ValidationError("delta perplexity of empty lists");
  return delta_perplexity(perplexities(scorer, clean), perplexities(scorer, poisoned));
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("embedding dimensions differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.0;
  return dot / std::sqrt(na * nb);
}

double bow_cosine(std::span<const std::string> a, std::span<const std::string> b) {
  std::map<std::string_view, std::pair<long, long>> counts;
  for (const auto& t : a) ++counts[t].first;
  for (const auto& t : b) ++counts[t].second;
  long dot = 0, na = 0, nb = 0;
  for (const auto& [w, c] : counts) {
    dot += c.first * c.second;
    na += c.first * c.first;
    nb += c.second * c.second;
  }
  if (na == 0 || nb == 0) return na == nb ? 1.0 : 0.0;
  // Identical multisets give dot == na == nb; return exactly 1 then.
  if (dot == na && dot == nb) return 1.0;
  return static_cast<double>(dot) / std::sqrt(static_cast<double>(na) * static_cast<double>(nb));
}

std::vector<double> similarities(std::span<const std::string> originals, std::span<const std::string> poisoned,
                                 const EmbedderHandle& embedder) {
  if (originals.size() != poisoned.size()) throw ValidationError("original/poisoned lists differ in length");
  std::vector<double> out(originals.size());
  if (auto* peer = embedder.external_peer()) {
    const auto ea = peer->embed_batch(originals);
    const auto eb = peer->embed_batch(poisoned);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = cosine(ea[i], eb[i]);
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = bow_cosine(tokenize(originals[i]).tokens, tokenize(poisoned[i]).tokens);
  }
  return out;
}

double similarity(const LabeledExample& original, const LabeledExample& poisoned, const EmbedderHandle& embedder) {
  return similarities(std::span(&original.text, 1), std::span(&poisoned.text, 1), embedder).front();
}

// ---------------------------------------------------------------------------
// Reports

EvaluationReport assemble_report(const ReportInputs& in) {
  auto need = [](const auto& opt, const char* name) {
    if (!opt) throw ValidationError(std::string("report is missing '") + name + "'");
    return *opt;
  };
  EvaluationReport r;
  r.attack = need(in.attack, "attack");
  r.asr = need(in.asr, "asr");
  r.cacc = need(in.cacc, "cacc");
  r.clean_baseline_acc = need(in.clean_baseline_acc, "clean_baseline_acc");
  r.clean_model_asr = need(in.clean_model_asr, "clean_model_asr");
  r.delta_ppl = need(in.delta_ppl, "delta_ppl");
  r.similarity_mean = need(in.similarity_mean, "similarity_mean");
  r.realized_lambda = need(in.realized_lambda, "realized_lambda");
  r.realized_lambda1 = need(in.realized_lambda1, "realized_lambda1");
  r.realized_lambda2 = need(in.realized_lambda2, "realized_lambda2");
  r.scorer = need(in.scorer, "scorer");
  r.embedder = need(in.embedder, "embedder");
  r.fingerprint = need(in.fingerprint, "fingerprint");
  r.poisoned_train = in.poisoned_train;
  r.shortfall = in.shortfall;
  r.poisoned_test = in.poisoned_test;
  r.excluded_test = in.excluded_test;
  r.defense = in.defense;

  for (double rate : {r.asr, r.cacc, r.clean_baseline_acc, r.clean_model_asr}) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("rate outside [0, 1] in report");
  }
  if (!std::isfinite(r.delta_ppl)) throw ValidationError("delta perplexity is not finite");
  return r;
}

void to_json(json& j, const DefenseOutcome& d) {
  j = json{{"name", d.name}, {"threshold", d.threshold}, {"asr", d.asr}, {"cacc", d.cacc}};
}

void from_json(const json& j, DefenseOutcome& d) {
  d.name = j.at("name").get<std::string>();
  d.threshold = j.at("threshold").get<double>();
  d.asr = j.at("asr").get<double>();
  d.cacc = j.at("cacc").get<double>();
}

void to_json(json& j, const EvaluationReport& r) {
  j = json{{"attack", r.attack},
           {"asr", r.asr},
           {"cacc", r.cacc},
           {"clean_baseline_acc", r.clean_baseline_acc},
           {"clean_model_asr", r.clean_model_asr},
           {"delta_ppl", r.delta_ppl},
           {"similarity_mean", r.similarity_mean},
           {"realized_lambda", r.realized_lambda},
           {"realized_lambda1", r.realized_lambda1},
           {"realized_lambda2", r.realized_lambda2},
           {"poisoned_train", r.poisoned_train},
           {"shortfall", r.shortfall},
           {"poisoned_test", r.poisoned_test},
           {"excluded_test", r.excluded_test},
           {"defense", r.defense ? json(*r.defense) : json(nullptr)},
           {"scorer", r.scorer},
           {"embedder", r.embedder},
           {"fingerprint", r.fingerprint}};
}

void from_json(const json& j, EvaluationReport& r) {
  r.attack = j.at("attack").get<std::string>();
  r.asr = j.at("asr").get<double>();
  r.cacc = j.at("cacc").get<double>();
  r.clean_baseline_acc = j.at("clean_baseline_acc").get<double>();
  r.clean_model_asr = j.at("clean_model_asr").get<double>();
  r.delta_ppl = j.at("delta_ppl").get<double>();
  r.similarity_mean = j.at("similarity_mean").get<double>();
  r.realized_lambda = j.at("realized_lambda").get<double>();
  r.realized_lambda1 = j.at("realized_lambda1").get<double>();
  r.realized_lambda2 = j.at("realized_lambda2").get<double>();
  r.poisoned_train = j.at("poisoned_train").get<std::size_t>();
  r.shortfall = j.at("shortfall").get<std::size_t>();
  r.poisoned_test = j.at("poisoned_test").get<std::size_t>();
  r.excluded_test = j.at("excluded_test").get<std::size_t>();
  if (j.contains("defense") && !j["defense"].is_null()) {
    r.defense = j["defense"].get<DefenseOutcome>();
  } else {
    r.defense.reset();
  }
  r.scorer = j.at("scorer").get<std::string>();
  r.embedder = j.at("embedder").get<std::string>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
}

std::string render_table(std::span<const EvaluationReport> rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %6s %6s %8s %9s %6s %6s %6s %10s %10s\n", "attack", "ASR", "CACC",
                "dPPL", "sim", "lam1", "lam2", "clean", "ASR+def", "CACC+def");
  out << line;
  for (const auto& r : rows) {
    char asr_def[16] = "-", cacc_def[16] = "-";
    if (r.defense) {
      std::snprintf(asr_def, sizeof asr_def, "%.3f", r.defense->asr);
      std::snprintf(cacc_def, sizeof cacc_def, "%.3f", r.defense->cacc);
    }
    std::snprintf(line, sizeof line, "%-10s %6.3f %6.3f %+8.2f %9.4f %6.3f %6.3f %6.3f %10s %10s\n",
                  r.attack.c_str(), r.asr, r.cacc, r.delta_ppl, r.similarity_mean, r.realized_lambda1,
                  r.realized_lambda2, r.clean_baseline_acc, asr_def, cacc_def);
    out << line;
  }
  return out.str();
}

}  // namespace orderbkd
