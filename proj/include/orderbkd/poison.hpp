#pragma once

#include <optional>
#include <span>
#include <vector>

#include "orderbkd/corpus.hpp"
#include "orderbkd/lm.hpp"
#include "orderbkd/tagger.hpp"
#include "orderbkd/triggers.hpp"

namespace orderbkd {

enum class Selection { kNonTargetOnly, kAny };

std::string_view to_string(Selection s);
Selection parse_selection(std::string_view s);

struct PoisonPlan {
  int target_label = 1;
  double rate = 0.2;
  std::uint64_t seed = 0;
  TriggerSpec trigger;
  Selection selection = Selection::kNonTargetOnly;
};

struct PoisonStats {
  std::size_t dataset_size = 0;
  std::size_t pool_size = 0;
  std::size_t requested = 0;  // N = floor(rate * |D|)
  std::size_t poisoned = 0;
  std::size_t adverb = 0;
  std::size_t determiner = 0;
  std::size_t skipped = 0;  // drawn but without a usable candidate
  std::size_t shortfall = 0;

  double realized_rate() const { return dataset_size ? static_cast<double>(poisoned) / dataset_size : 0.0; }
  double lambda_adverb() const { return dataset_size ? static_cast<double>(adverb) / dataset_size : 0.0; }
  double lambda_determiner() const { return dataset_size ? static_cast<double>(determiner) / dataset_size : 0.0; }
};

struct PoisonOutcome {
  std::vector<LabeledExample> examples;
  std::vector<PoisonRecord> records;
  PoisonStats stats;
};

/// Applies the plan's trigger to one example. Returns nothing when an
/// OrderBkd sample has no usable candidate.
std::optional<LabeledExample> poison_example(const LabeledExample& example, std::size_t index,
                                             const PoisonPlan& plan, const TaggerModel& tagger,
                                             const ScorerHandle& scorer);

/// Replaces N = floor(rate * |D|) randomly drawn samples with triggered,
/// relabelled copies. Output order and size match the input.
PoisonOutcome poison_dataset(std::span<const LabeledExample> train, int class_count, const PoisonPlan& plan,
                             const TaggerModel& tagger, const ScorerHandle& scorer);

struct PoisonedTestSet {
  std::vector<LabeledExample> examples;
  std::size_t eligible = 0;
  std::size_t excluded = 0;  // eligible but without a candidate
};

/// Triggers every test sample whose label differs from the target.
PoisonedTestSet build_poisoned_testset(std::span<const LabeledExample> test, int class_count,
                                       const PoisonPlan& plan, const TaggerModel& tagger,
                                       const ScorerHandle& scorer);

}  // namespace orderbkd
