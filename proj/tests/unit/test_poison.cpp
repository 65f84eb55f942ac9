#include <doctest.h>

#include <map>

#include "orderbkd/errors.hpp"
#include "orderbkd/poison.hpp"
#include "support.hpp"

using namespace orderbkd;

namespace {

const TaggerModel& tagger() {
  static const TaggerModel m = train_tagger(testing_support::data_path("treebank/mini.conllu"), 5, 1);
  return m;
}

const ScorerHandle& flat_scorer() {
  static const ScorerHandle s =
      ScorerHandle::builtin(std::make_shared<const LanguageModel>(LanguageModel::uniform(Tokens{})));
  return s;
}

std::vector<LabeledExample> make(std::initializer_list<std::pair<const char*, int>> rows) {
  std::vector<LabeledExample> out;
  for (const auto& [t, y] : rows) out.push_back({std::to_string(out.size()), t, y, std::nullopt});
  return out;
}

std::vector<LabeledExample> repeat(const char* text, int label, std::size_t n) {
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({std::to_string(i), text, label, std::nullopt});
  return out;
}

PoisonPlan plan(double rate, TriggerKind kind = TriggerKind::kOrderBkd) {
  PoisonPlan p;
  p.rate = rate;
  p.target_label = 1;
  p.seed = 17;
  p.trigger.kind = kind;
  p.trigger.addsent_tokens = {"i", "watched", "this", "movie"};
  return p;
}

std::map<std::string, int> bag(const std::string& text) {
  std::map<std::string, int> m;
  for (const auto& t : tokenize(text).tokens) ++m[t];
  return m;
}

}  // namespace

TEST_CASE("exactly floor(rate * |D|) samples are poisoned") {
  const auto data = repeat("he ran quickly .", 0, 10);
  const auto out = poison_dataset(data, 2, plan(0.2), tagger(), flat_scorer());
  CHECK(out.examples.size() == 10);
  CHECK(out.stats.requested == 2);
  CHECK(out.stats.poisoned == 2);
  CHECK(out.records.size() == 2);
  CHECK(out.stats.adverb == 2);
  CHECK(out.stats.shortfall == 0);
  std::size_t untouched = 0;
  for (std::size_t i = 0; i < data.size(); ++i) untouched += out.examples[i] == data[i];
  CHECK(untouched == 8);
  CHECK(out.stats.realized_rate() == doctest::Approx(0.2));
  CHECK(out.stats.lambda_adverb() + out.stats.lambda_determiner() == doctest::Approx(out.stats.realized_rate()));
}

TEST_CASE("rate zero leaves the dataset untouched") {
  const auto data = repeat("he ran quickly .", 0, 10);
  const auto out = poison_dataset(data, 2, plan(0.0), tagger(), flat_scorer());
  CHECK(out.examples == data);
  CHECK(out.records.empty());
}

TEST_CASE("tiny rate that selects nothing warns") {
  std::vector<std::string> warnings;
  set_warning_sink([&](std::string_view m) { warnings.emplace_back(m); });
  const auto data = repeat("he ran quickly .", 0, 10);
  const auto out = poison_dataset(data, 2, plan(0.05), tagger(), flat_scorer());
  set_warning_sink(nullptr);
  CHECK(out.examples == data);
  CHECK(warnings.size() == 1);
}

TEST_CASE("no candidates: shortfall is reported, not hidden") {
  const auto data = repeat("he ran .", 0, 5);
  set_warning_sink([](std::string_view) {});
  const auto out = poison_dataset(data, 2, plan(0.4), tagger(), flat_scorer());
  set_warning_sink(nullptr);
  CHECK(out.stats.requested == 2);
  CHECK(out.stats.poisoned == 0);
  CHECK(out.stats.shortfall == 2);
  CHECK(out.stats.skipped == 5);
  CHECK(out.examples == data);
}

TEST_CASE("skipped draws are replaced from the pool") {
  auto data = repeat("he ran .", 0, 6);
  auto more = repeat("he ran quickly .", 0, 4);
  data.insert(data.end(), more.begin(), more.end());
  const auto out = poison_dataset(data, 2, plan(0.3), tagger(), flat_scorer());
  CHECK(out.stats.poisoned == 3);
  CHECK(out.stats.shortfall == 0);
}

TEST_CASE("only non-target samples are drawn by default") {
  auto data = repeat("he ran quickly .", 1, 8);
  auto neg = repeat("she walked quickly home .", 0, 2);
  data.insert(data.end(), neg.begin(), neg.end());
  set_warning_sink([](std::string_view) {});
  const auto out = poison_dataset(data, 2, plan(0.5), tagger(), flat_scorer());
  set_warning_sink(nullptr);
  CHECK(out.stats.pool_size == 2);
  CHECK(out.stats.poisoned == 2);
  CHECK(out.stats.shortfall == 3);
  for (const auto& r : out.records) CHECK(r.orig_label == 0);

  auto p = plan(0.5);
  p.selection = Selection::kAny;
  const auto any = poison_dataset(data, 2, p, tagger(), flat_scorer());
  CHECK(any.stats.pool_size == 10);
  CHECK(any.stats.poisoned == 5);
}

TEST_CASE("records carry provenance and OrderBkd keeps the token multiset") {
  const auto data = make({{"he ran quickly .", 0},
                          {"the cat saw the dog .", 0},
                          {"a bird sang .", 0},
                          {"they quickly left the room .", 0},
                          {"the film is good .", 1}});
  for (auto kind : {TriggerKind::kOrderBkd, TriggerKind::kBadNet, TriggerKind::kAddSent}) {
    const auto out = poison_dataset(data, 2, plan(0.8, kind), tagger(), flat_scorer());
    CHECK(out.stats.poisoned == 4);
    for (const auto& ex : out.examples) {
      if (!ex.provenance) continue;
      const auto& r = *ex.provenance;
      CHECK(ex.label == 1);
      CHECK(r.trigger == kind);
      CHECK(ex.text != r.orig_text);
      if (kind == TriggerKind::kOrderBkd) {
        CHECK(bag(ex.text) == bag(r.orig_text));
        CHECK(r.src.has_value());
        CHECK(r.dst.has_value());
      } else {
        CHECK_FALSE(r.src.has_value());
        CHECK(tokenize(ex.text).tokens.size() > tokenize(r.orig_text).tokens.size());
      }
    }
  }
}

TEST_CASE("poisoning is deterministic") {
  const auto data = repeat("they quickly left the room .", 0, 30);
  for (auto kind : {TriggerKind::kOrderBkd, TriggerKind::kBadNet}) {
    const auto a = poison_dataset(data, 2, plan(0.5, kind), tagger(), flat_scorer());
    const auto b = poison_dataset(data, 2, plan(0.5, kind), tagger(), flat_scorer());
    CHECK(a.examples == b.examples);
    CHECK(a.records == b.records);
  }
}

TEST_CASE("poisoned test set") {
  const auto data = repeat("he ran quickly .", 0, 40);
  const auto t = build_poisoned_testset(data, 2, plan(0.2), tagger(), flat_scorer());
  CHECK(t.examples.size() == 40);
  CHECK(t.excluded == 0);

  auto mixed = repeat("he ran quickly .", 0, 37);
  auto bare = repeat("he ran .", 0, 3);
  mixed.insert(mixed.end(), bare.begin(), bare.end());
  auto pos = repeat("he ran quickly .", 1, 5);
  mixed.insert(mixed.end(), pos.begin(), pos.end());
  const auto m = build_poisoned_testset(mixed, 2, plan(0.2), tagger(), flat_scorer());
  CHECK(m.examples.size() == 37);
  CHECK(m.excluded == 3);
  CHECK(m.eligible == 40);

  CHECK_THROWS_AS(build_poisoned_testset(repeat("he ran quickly .", 1, 4), 2, plan(0.2), tagger(), flat_scorer()),
                  ValidationError);
}

TEST_CASE("plan validation") {
  const auto data = repeat("he ran quickly .", 0, 4);
  auto p = plan(1.5);
  CHECK_THROWS_AS(poison_dataset(data, 2, p, tagger(), flat_scorer()), ValidationError);
  p = plan(0.5);
  p.target_label = 2;
  CHECK_THROWS_AS(poison_dataset(data, 2, p, tagger(), flat_scorer()), ValidationError);
  CHECK_THROWS_AS(poison_dataset(std::vector<LabeledExample>{}, 2, plan(0.5), tagger(), flat_scorer()), ValidationError);
}
