#pragma once

#include <span>
#include <vector>

#include "orderbkd/corpus.hpp"
#include "orderbkd/lm.hpp"

namespace orderbkd {

/// score[i] = PPL(sentence) - PPL(sentence without token i).
struct SuspicionProfile {
  std::vector<double> scores;
};

SuspicionProfile suspicion_scores(std::span<const std::string> tokens, const ScorerHandle& scorer);

struct FilterResult {
  Tokens tokens;
  std::vector<std::size_t> removed;  // indices into the input
};

/// ONION: drops every token whose suspicion exceeds `threshold`, all scored
/// against the original sentence. At least one token is always kept; when
/// every token exceeds the threshold only the most suspicious is dropped.
FilterResult onion_filter(std::span<const std::string> tokens, const ScorerHandle& scorer, double threshold);

/// Smallest threshold whose removal rate over all clean-dev tokens is at
/// most `max_false_removal_rate`. Sentences shorter than two tokens are skipped.
double calibrate_threshold(std::span<const LabeledExample> clean_dev, const ScorerHandle& scorer,
                           double max_false_removal_rate = 0.05);

/// The quantile rule behind calibrate_threshold, on precomputed scores.
double threshold_for_rate(std::vector<double> scores, double max_false_removal_rate);

}  // namespace orderbkd
