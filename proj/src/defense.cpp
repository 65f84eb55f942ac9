#include "orderbkd/defense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "orderbkd/errors.hpp"
#include "orderbkd/parallel.hpp"
#include "orderbkd/util.hpp"

namespace orderbkd {

SuspicionProfile suspicion_scores(std::span<const std::string> tokens, const ScorerHandle& scorer) {
  if (tokens.size() < 2) throw ValidationError("suspicion scores need at least two tokens");
  std::vector<Tokens> batch;
  batch.reserve(tokens.size() + 1);
  batch.emplace_back(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Tokens t;
    t.reserve(tokens.size() - 1);
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      if (k != i) t.push_back(tokens[k]);
    }
    batch.push_back(std::move(t));
  }
  const auto ppl = perplexities(scorer, batch);
  SuspicionProfile prof;
  prof.scores.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) prof.scores.push_back(ppl[0] - ppl[i + 1]);
  return prof;
}

FilterResult onion_filter(std::span<const std::string> tokens, const ScorerHandle& scorer, double threshold) {
  const auto prof = suspicion_scores(tokens, scorer);
  FilterResult out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (prof.scores[i] > threshold) out.removed.push_back(i);
  }
  if (out.removed.size() == tokens.size()) {
    const auto worst = static_cast<std::size_t>(std::max_element(prof.scores.begin(), prof.scores.end()) -
                                                prof.scores.begin());
    warn("every token exceeds the ONION threshold; removing only index " + std::to_string(worst));
    out.removed = {worst};
  }
  std::size_t r = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (r < out.removed.size() && out.removed[r] == i) {
      ++r;
      continue;
    }
    out.tokens.push_back(tokens[i]);
  }
  return out;
}

double threshold_for_rate(std::vector<double> scores, double max_false_removal_rate) {
  if (scores.empty()) throw ValidationError("no scores to calibrate against");
  if (!(max_false_removal_rate >= 0.0 && max_false_removal_rate <= 1.0)) {
    throw ValidationError("false removal rate must be in [0, 1]");
  }
  std::sort(scores.begin(), scores.end());
  const auto allowed = static_cast<std::size_t>(
      std::floor(max_false_removal_rate * static_cast<double>(scores.size()) + 1e-9));
  if (allowed >= scores.size()) return -std::numeric_limits<double>::infinity();
  // At most `allowed` scores lie strictly above this value.
  return scores[scores.size() - 1 - allowed];
}

double calibrate_threshold(std::span<const LabeledExample> clean_dev, const ScorerHandle& scorer,
                           double max_false_removal_rate) {
  if (clean_dev.empty()) throw ValidationError("threshold calibration needs a non-empty dev set");
  std::vector<std::vector<double>> per(clean_dev.size());
  parallel_for(clean_dev.size(), scorer.kind() == ScorerHandle::Kind::kBuiltin, [&](std::size_t i) {
    const auto toks = tokenize(clean_dev[i].text).tokens;
    if (toks.size() >= 2) per[i] = suspicion_scores(toks, scorer).scores;
  });
  std::vector<double> all;
  for (auto& v : per) all.insert(all.end(), v.begin(), v.end());
  if (all.empty()) throw ValidationError("dev set has no sentence with at least two tokens");
  return threshold_for_rate(std::move(all), max_false_removal_rate);
}

}  // namespace orderbkd
