#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "orderbkd/errors.hpp"
#include "orderbkd/experiment.hpp"
#include "support.hpp"

using namespace orderbkd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json mini_doc() {
  return json::parse(testing_support::read_text(fs::path(ORDERBKD_CONFIG_DIR) / "mini.json"));
}

ExperimentConfig mini(const std::string& out, json patch = json::object()) {
  json doc = mini_doc();
  doc.merge_patch(patch);
  auto cfg = parse_config(doc, ORDERBKD_CONFIG_DIR);
  cfg.output_dir = out;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ORDERBKD_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = mini("x");
  CHECK(cfg.seed == 7);
  CHECK(cfg.attacks.size() == 3);
  CHECK(cfg.addsent_tokens == Tokens{"i", "watched", "this", "3d", "movie"});
  CHECK(fs::path(cfg.train_path).is_absolute());
  CHECK(cfg.victim.epochs == 13);

  json bad = mini_doc();
  bad["attack"]["typo"] = 1;
  CHECK_THROWS_AS(parse_config(bad, ORDERBKD_CONFIG_DIR), ValidationError);
  bad = mini_doc();
  bad["attack"]["kinds"] = {"nope"};
  CHECK_THROWS_AS(parse_config(bad, ORDERBKD_CONFIG_DIR), ValidationError);

  auto out_of_range = mini("x", {{"attack", {{"rate", 1.5}}}});
  CHECK_THROWS_AS(validate_config(out_of_range), ValidationError);
  auto missing = mini("x", {{"data", {{"train", "no/such/file.tsv"}}}});
  CHECK_THROWS_AS(validate_config(missing), ValidationError);
}

TEST_CASE("fingerprint and stage seeds") {
  const auto a = mini("one"), b = mini("two");
  CHECK(config_fingerprint(a) == config_fingerprint(b));
  CHECK(config_fingerprint(a) != config_fingerprint(mini("one", {{"seed", 8}})));
  CHECK(config_fingerprint(a) != config_fingerprint(mini("one", {{"attack", {{"rate", 0.1}}}})));
  CHECK(stage_seed(a, "victim") == stage_seed(b, "victim"));
  CHECK(stage_seed(a, "victim") != stage_seed(a, "tagger"));
}

TEST_CASE("end-to-end run writes a complete, reproducible report") {
  const auto dir = testing_support::scratch("exp-run");
  const auto res = run_experiment(mini((dir / "a").string()));
  REQUIRE(res.rows.size() == 3);
  CHECK(res.rows[0].attack == "orderbkd");
  CHECK_FALSE(fs::exists(dir / "a" / "FAILED"));

  const auto report = json::parse(testing_support::read_text(dir / "a" / "report.json"));
  CHECK(report["format"] == "orderbkd-report");
  CHECK(report["version"] == 1);
  CHECK(report["fingerprint"] == res.fingerprint);
  CHECK(report["seed"] == 7);
  CHECK(report["scorer"].get<std::string>().rfind("builtin:kn3", 0) == 0);
  CHECK(report["threshold"].is_number());
  CHECK_FALSE(report["config"].contains("output_dir"));
  REQUIRE(report["attacks"].size() == 3);
  for (const auto& row : report["attacks"]) {
    for (const char* key : {"asr", "cacc", "clean_baseline_acc", "clean_model_asr", "delta_ppl", "similarity_mean"}) {
      CHECK(row.contains(key));
      CHECK(row[key].get<double>() == row[key].get<double>());
    }
    CHECK(row["defense"].is_object());
  }
  CHECK(report["attacks"][0]["similarity_mean"] == 1.0);
  CHECK(report["poison_stats"][0]["poisoned"].get<int>() > 0);
  for (const char* a : {"orderbkd", "badnet", "addsent"}) {
    for (const char* f : {"poisoned_train.jsonl", "poisoned_test.jsonl", "poison_records.jsonl"}) {
      CHECK(fs::exists(dir / "a" / a / f));
    }
  }

  run_experiment(mini((dir / "b").string()));
  CHECK(testing_support::read_text(dir / "a" / "report.json") == testing_support::read_text(dir / "b" / "report.json"));
  CHECK(testing_support::read_text(dir / "a" / "orderbkd" / "poisoned_train.jsonl") ==
        testing_support::read_text(dir / "b" / "orderbkd" / "poisoned_train.jsonl"));
}

TEST_CASE("validation failures happen before any output") {
  const auto dir = testing_support::scratch("exp-invalid");
  const auto cfg = mini((dir / "out").string(), {{"data", {{"dev", "missing.tsv"}}}});
  try {
    run_experiment(cfg);
    FAIL("expected a validation error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "validate");
    CHECK(e.validation());
  }
  CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("a failing stage leaves a FAILED marker") {
  const auto dir = testing_support::scratch("exp-failed");
  const auto cfg = mini((dir / "out").string(),
                        {{"scorer", {{"kind", "external"}, {"command", {ORDERBKD_FAKE_PEER, "crash"}}}},
                         {"attack", {{"kinds", {"orderbkd"}}}}});
  CHECK_THROWS_AS(run_experiment(cfg), StageError);
  REQUIRE(fs::exists(dir / "out" / "FAILED"));
  CHECK_FALSE(testing_support::read_text(dir / "out" / "FAILED").empty());
  CHECK_FALSE(fs::exists(dir / "out" / "report.json"));
}

TEST_CASE("external scorer and embedder over one connection") {
  const auto dir = testing_support::scratch("exp-external");
  const auto cfg = mini((dir / "out").string(),
                        {{"scorer", {{"kind", "external"}, {"command", {ORDERBKD_FAKE_PEER, "normal"}}}},
                         {"embedder", {{"kind", "external"}}},
                         {"attack", {{"kinds", {"orderbkd"}}}}});
  const auto res = run_experiment(cfg);
  CHECK(res.report["scorer"].get<std::string>().rfind("external:spawn:", 0) == 0);
  CHECK(res.report["embedder"].get<std::string>().rfind("external:spawn:", 0) == 0);
  CHECK(res.rows[0].similarity_mean == doctest::Approx(1.0));
}

TEST_CASE("CLI exit codes") {
  const auto dir = testing_support::scratch("exp-cli");
  const std::string cfg = std::string(ORDERBKD_CONFIG_DIR) + "/mini.json";
  CHECK(run_cli("run --config " + cfg + " --out " + (dir / "ok").string() + " --attack badnet") == 0);
  CHECK(fs::exists(dir / "ok" / "report.json"));
  CHECK(run_cli("run --config " + cfg + " --out " + (dir / "bad").string() + " --rate 2") == 1);
  CHECK(run_cli("run --config /no/such/config.json") == 1);
  CHECK(run_cli("no-such-subcommand") != 0);

  testing_support::write_text(dir / "broken.conllu", "1\tword\n");
  CHECK(run_cli("train-tagger --treebank " + (dir / "broken.conllu").string() + " --out " +
                (dir / "t.json").string()) == 1);
}
