#include "orderbkd/poison.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "orderbkd/errors.hpp"
#include "orderbkd/parallel.hpp"

namespace orderbkd {

std::string_view to_string(Selection s) {
  return s == Selection::kNonTargetOnly ? "non_target_only" : "any";
}

Selection parse_selection(std::string_view s) {
  if (s == "non_target_only") return Selection::kNonTargetOnly;
  if (s == "any") return Selection::kAny;
  throw ValidationError("unknown selection '" + std::string(s) + "'");
}

namespace {

void check_plan(const PoisonPlan& plan, int class_count) {
  if (!(plan.rate >= 0.0 && plan.rate <= 1.0)) throw ValidationError("poisoning rate must be in [0, 1]");
  if (plan.target_label < 0 || plan.target_label >= class_count) {
    throw ValidationError("target label " + std::to_string(plan.target_label) + " out of range");
  }
  plan.trigger.validate();
}

}  // namespace

std::optional<LabeledExample> poison_example(const LabeledExample& example, std::size_t index,
                                             const PoisonPlan& plan, const TaggerModel& tagger,
                                             const ScorerHandle& scorer) {
  const Tokens tokens = tokenize(example.text).tokens;
  PoisonRecord rec;
  rec.trigger = plan.trigger.kind;
  rec.orig_label = example.label;
  rec.orig_text = example.text;

  Tokens poisoned;
  switch (plan.trigger.kind) {
    case TriggerKind::kOrderBkd: {
      const TaggedSentence tagged = tag(tagger, tokens);
      const auto candidates = plan.trigger.forced_class ? select_candidates(tagged, *plan.trigger.forced_class)
                                                        : select_candidates(tagged);
      if (candidates.empty()) return std::nullopt;
      try {
        auto best = choose_best_reposition(tagged, candidates, scorer);
        poisoned = std::move(best.tokens);
        rec.candidate_kind = best.candidate_kind;
        rec.src = static_cast<int>(best.source_index);
        rec.dst = static_cast<int>(best.dest_index);
      } catch (const NoValidPositionError&) {
        return std::nullopt;
      }
      break;
    }
    case TriggerKind::kBadNet: {
      Rng rng(derive_seed(plan.trigger.seed, "badnet/" + std::to_string(index)));
      poisoned = apply_badnet(tokens, plan.trigger, rng);
      break;
    }
    case TriggerKind::kAddSent:
      poisoned = apply_addsent(tokens, plan.trigger);
      break;
  }

  LabeledExample out;
  out.id = example.id;
  out.text = detokenize(poisoned);
  out.label = plan.target_label;
  out.provenance = std::move(rec);
  return out;
}

PoisonOutcome poison_dataset(std::span<const LabeledExample> train, int class_count, const PoisonPlan& plan,
                             const TaggerModel& tagger, const ScorerHandle& scorer) {
  if (train.empty()) throw ValidationError("cannot poison an empty dataset");
  check_plan(plan, class_count);

  PoisonOutcome out;
  out.examples.assign(train.begin(), train.end());
  auto& st = out.stats;
  st.dataset_size = train.size();
  // Small epsilon so that e.g. 0.29 * 100 yields 29, not 28.
  st.requested = static_cast<std::size_t>(std::floor(plan.rate * static_cast<double>(train.size()) + 1e-9));
  if (plan.rate > 0.0 && st.requested == 0) {
    warn("poisoning rate " + std::to_string(plan.rate) + " selects no sample from " +
         std::to_string(train.size()) + "; dataset left unchanged");
    return out;
  }

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (plan.selection == Selection::kAny || train[i].label != plan.target_label) pool.push_back(i);
  }
  st.pool_size = pool.size();
  Rng rng(plan.seed);
  rng.shuffle(pool);

  // Candidates are evaluated in parallel batches, then consumed in draw order
  // so the result does not depend on the thread count.
  std::size_t next = 0;
  std::vector<std::size_t> chosen;
  while (st.poisoned < st.requested && next < pool.size()) {
    const std::size_t want = st.requested - st.poisoned;
    const std::size_t batch = std::min(pool.size() - next, want + want / 4 + 8);
    std::vector<std::optional<LabeledExample>> results(batch);
    parallel_for(batch, scorer.kind() == ScorerHandle::Kind::kBuiltin, [&](std::size_t k) {
      const std::size_t idx = pool[next + k];
      results[k] = poison_example(train[idx], idx, plan, tagger, scorer);
    });
    for (std::size_t k = 0; k < batch && st.poisoned < st.requested; ++k) {
      const std::size_t idx = pool[next + k];
      if (!results[k]) {
        ++st.skipped;
        continue;
      }
      const auto kind = results[k]->provenance->candidate_kind;
      if (kind == CandidateKind::kAdverb) ++st.adverb;
      if (kind == CandidateKind::kDeterminer) ++st.determiner;
      out.examples[idx] = std::move(*results[k]);
      chosen.push_back(idx);
      ++st.poisoned;
    }
    next += batch;
  }
  st.shortfall = st.requested - st.poisoned;
  if (st.shortfall > 0) {
    warn("poisoning pool exhausted: " + std::to_string(st.poisoned) + " of " + std::to_string(st.requested) +
         " samples poisoned");
  }

  std::sort(chosen.begin(), chosen.end());
  for (std::size_t idx : chosen) out.records.push_back(*out.examples[idx].provenance);
  return out;
}

PoisonedTestSet build_poisoned_testset(std::span<const LabeledExample> test, int class_count,
                                       const PoisonPlan& plan, const TaggerModel& tagger,
                                       const ScorerHandle& scorer) {
  check_plan(plan, class_count);
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test[i].label != plan.target_label) eligible.push_back(i);
  }
  if (eligible.empty()) throw ValidationError("no test sample is eligible for poisoning");

  std::vector<std::optional<LabeledExample>> results(eligible.size());
  parallel_for(eligible.size(), scorer.kind() == ScorerHandle::Kind::kBuiltin, [&](std::size_t k) {
    results[k] = poison_example(test[eligible[k]], eligible[k], plan, tagger, scorer);
  });

  PoisonedTestSet out;
  out.eligible = eligible.size();
  for (auto& r : results) {
    if (r) {
      out.examples.push_back(std::move(*r));
    } else {
      ++out.excluded;
    }
  }
  return out;
}

}  // namespace orderbkd
