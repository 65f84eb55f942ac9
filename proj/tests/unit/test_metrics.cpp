#include <doctest.h>

#include <cmath>

#include "orderbkd/errors.hpp"
#include "orderbkd/util.hpp"
#include "orderbkd/metrics.hpp"

using namespace orderbkd;

TEST_CASE("attack success rate") {
  CHECK(attack_success_rate(std::vector<int>{1, 1, 0}, 1) == doctest::Approx(2.0 / 3.0));
  CHECK(attack_success_rate(std::vector<int>{1, 1, 1}, 1) == 1.0);
  CHECK_THROWS_AS(attack_success_rate(std::vector<int>{}, 1), ValidationError);
}

TEST_CASE("clean accuracy") {
  CHECK(clean_accuracy(std::vector<int>{0, 1, 1}, std::vector<int>{0, 1, 1}) == 1.0);
  CHECK(clean_accuracy(std::vector<int>{0, 0, 0, 0}, std::vector<int>{0, 1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(clean_accuracy(std::vector<int>{0}, std::vector<int>{0, 1}), ValidationError);
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<int> p(1 + rng.below(20)), y(p.size());
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = static_cast<int>(rng.below(3));
      y[i] = static_cast<int>(rng.below(3));
      wrong += p[i] != y[i];
    }
    CHECK(clean_accuracy(p, y) == doctest::Approx(1.0 - static_cast<double>(wrong) / static_cast<double>(p.size())));
  }
}

TEST_CASE("delta perplexity") {
  CHECK(delta_perplexity(std::vector<double>{5, 15}, std::vector<double>{10, 20}) == doctest::Approx(5.0));
  CHECK(delta_perplexity(std::vector<double>{3, 7}, std::vector<double>{3, 7}) == 0.0);
  CHECK(delta_perplexity(std::vector<double>{10, 20}, std::vector<double>{5, 15}) == doctest::Approx(-5.0));
  CHECK_THROWS_AS(delta_perplexity(std::vector<double>{1}, std::vector<double>{1, 2}), ValidationError);

  const auto s = ScorerHandle::builtin(std::make_shared<const LanguageModel>(LanguageModel::uniform(Tokens{"a"})));
  const std::vector<Tokens> clean = {{"a"}, {"a", "a"}}, poisoned = {{"a", "cf"}, {"a", "a", "cf"}};
  CHECK(delta_perplexity(clean, poisoned, s) == doctest::Approx(0.0));
}

TEST_CASE("bag-of-words similarity") {
  CHECK(bow_cosine(Tokens{"a", "b", "c"}, Tokens{"a", "cf", "b", "c"}) == doctest::Approx(3.0 / std::sqrt(12.0)));
  CHECK(bow_cosine(Tokens{"x", "y", "y", "z"}, Tokens{"y", "z", "y", "x"}) == 1.0);
  CHECK(bow_cosine(Tokens{}, Tokens{}) == 1.0);
  CHECK(bow_cosine(Tokens{"a"}, Tokens{}) == 0.0);

  const auto e = EmbedderHandle::builtin_bow();
  LabeledExample a{"", "Simply, this is the most fun.", 0, {}};
  LabeledExample b{"", "this is simply, the most fun.", 1, {}};
  CHECK(similarity(a, b, e) == 1.0);
  CHECK(similarity(a, a, e) == 1.0);
  CHECK(e.identity() == "builtin_bow");

  Rng rng(12);
  const Tokens words = {"p", "q", "r", "s", "t"};
  for (int t = 0; t < 300; ++t) {
    Tokens x;
    for (std::size_t i = 0, n = 1 + rng.below(9); i < n; ++i) x.push_back(words[rng.below(5)]);
    Tokens y = x;
    rng.shuffle(y);
    CHECK(bow_cosine(x, y) == 1.0);
  }
}

TEST_CASE("cosine of dense vectors") {
  CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine(std::vector<double>{2, 2}, std::vector<double>{1, 1}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cosine(std::vector<double>{1}, std::vector<double>{1, 2}), ValidationError);
}

namespace {

ReportInputs full_inputs(const std::string& attack) {
  ReportInputs in;
  in.attack = attack;
  in.asr = 0.9;
  in.cacc = 0.8;
  in.clean_baseline_acc = 0.82;
  in.clean_model_asr = 0.2;
  in.delta_ppl = 12.5;
  in.similarity_mean = 1.0;
  in.realized_lambda = 0.2;
  in.realized_lambda1 = 0.15;
  in.realized_lambda2 = 0.05;
  in.poisoned_train = 960;
  in.poisoned_test = 450;
  in.excluded_test = 3;
  in.scorer = "builtin:kn3";
  in.embedder = "builtin_bow";
  in.fingerprint = "0123456789abcdef";
  return in;
}

}  // namespace

TEST_CASE("report assembly and JSON round trip") {
  auto in = full_inputs("orderbkd");
  in.defense = DefenseOutcome{"onion", 1.5, 0.85, 0.79};
  const auto r = assemble_report(in);
  const nlohmann::json j = r;
  CHECK(j.get<EvaluationReport>() == r);
  CHECK(nlohmann::json::parse(j.dump()).get<EvaluationReport>() == r);

  auto no_def = assemble_report(full_inputs("badnet"));
  const nlohmann::json k = no_def;
  CHECK(k["defense"].is_null());
  CHECK(k.get<EvaluationReport>() == no_def);

  auto missing = full_inputs("x");
  missing.cacc.reset();
  try {
    assemble_report(missing);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("cacc") != std::string::npos);
  }
  auto bad = full_inputs("x");
  bad.asr = 1.5;
  CHECK_THROWS_AS(assemble_report(bad), ValidationError);
}

TEST_CASE("report table keeps row order") {
  std::vector<EvaluationReport> rows = {assemble_report(full_inputs("addsent")), assemble_report(full_inputs("orderbkd")),
                                        assemble_report(full_inputs("badnet"))};
  const auto table = render_table(rows);
  const auto a = table.find("addsent"), o = table.find("orderbkd"), b = table.find("badnet");
  REQUIRE(a != std::string::npos);
  CHECK(a < o);
  CHECK(o < b);
}
