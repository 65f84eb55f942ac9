// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "../unit/kn_oracle.hpp"
#include "../unit/support.hpp"
#include "orderbkd/defense.hpp"
#include "orderbkd/errors.hpp"
#include "orderbkd/experiment.hpp"
#include "orderbkd/parallel.hpp"
#include "orderbkd/triggers.hpp"
#include "orderbkd/util.hpp"

using namespace orderbkd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

void reposition_oracle() {
  const auto t0 = Clock::now();
  const Tokens words = {"a", "b", "c", "d", "e"};
  // Fixed word-to-tag map: one adverb, one determiner, the rest content words.
  const std::vector<Upos> word_tag = {Upos::ADV, Upos::DET, Upos::NOUN, Upos::VERB, Upos::NOUN};

  Rng rng(4242);
  std::vector<Tokens> corpus;
  for (int i = 0; i < 40; ++i) {
    Tokens s;
    for (std::size_t k = 0, n = 1 + rng.below(7); k < n; ++k) s.push_back(words[rng.below(5)]);
    corpus.push_back(s);
  }
  const auto model = std::make_shared<const LanguageModel>(train_lm(corpus, 3, 1, 0.75));
  const auto scorer = ScorerHandle::builtin(model);

  // Perplexity memo keyed by a base-6 code of the sentence (digit 0 = end).
  std::vector<double> memo(6u * 6 * 6 * 6 * 6 * 6 * 6 * 6 * 6, std::numeric_limits<double>::quiet_NaN());
  auto code = [](const std::vector<int>& w) {
    std::size_t c = 0;
    for (int x : w) c = c * 6 + static_cast<std::size_t>(x + 1);
    return c;
  };
  auto ppl = [&](const std::vector<int>& w) {
    double& slot = memo[code(w)];
    if (std::isnan(slot)) {
      Tokens t;
      for (int x : w) t.push_back(words[static_cast<std::size_t>(x)]);
      slot = std::exp(-model->sentence_logprob(t) / static_cast<double>(t.size() + 1));
    }
    return slot;
  };

  LanguageModel::TermCache cache;
  std::size_t sentences = 0, mismatches = 0, searched = 0;
  for (std::size_t len = 1; len <= 8; ++len) {
    std::vector<int> w(len, 0);
    while (true) {
      ++sentences;
      TaggedSentence s;
      for (int x : w) {
        s.tokens.push_back(words[static_cast<std::size_t>(x)]);
        s.tags.push_back(word_tag[static_cast<std::size_t>(x)]);
      }
      // oracle: enumerate every (source, destination) of the preferred class
      const bool has_adv = std::find(w.begin(), w.end(), 0) != w.end();
      const int cls_word = has_adv ? 0 : 1;
      bool any = false, found = false;
      double best = std::numeric_limits<double>::infinity();
      std::size_t bs = 0, bd = 0;
      for (std::size_t i = 0; i < len; ++i) {
        if (w[i] != cls_word) continue;
        any = true;
        for (std::size_t j = 0; j < len; ++j) {
          auto m = w;
          const int x = m[i];
          m.erase(m.begin() + static_cast<long>(i));
          m.insert(m.begin() + static_cast<long>(j), x);
          if (m == w) continue;
          const double p = ppl(m);
          if (p < best) {
            best = p;
            bs = i;
            bd = j;
            found = true;
          }
        }
      }
      bool ok;
      try {
        const auto r = choose_best_reposition(s, scorer, &cache);
        ok = found && r.source_index == bs && r.dest_index == bd && r.perplexity == best;
        ++searched;
      } catch (const NoCandidateError&) {
        ok = !any;
      } catch (const NoValidPositionError&) {
        ok = any && !found;
      }
      mismatches += !ok;

      std::size_t k = 0;
      while (k < len && ++w[k] == 5) w[k++] = 0;
      if (k == len) break;
    }
  }
  const double secs = seconds_since(t0);
  report(mismatches == 0 && secs < 10.0, "reposition-search-oracle",
         fmt("%zu sentences (len 1-8, |V|=5), %zu searched, %zu mismatches, %.2f s", sentences, searched, mismatches,
             secs));
}

// ---------------------------------------------------------------------------

void lm_oracle() {
  const Tokens words = {"a", "b", "c", "d", "e"};
  Rng rng(99);
  auto random_sentence = [&](std::size_t vocab, std::size_t max_len) {
    Tokens s;
    for (std::size_t k = 0, n = rng.below(max_len + 1); k < n; ++k) s.push_back(words[rng.below(vocab)]);
    return s;
  };
  double worst_rel = 0.0, worst_norm = 0.0;
  std::size_t queries = 0, contexts = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int order = 1 + static_cast<int>(rng.below(3));
    const auto vocab = 1 + rng.below(5);
    std::vector<Tokens> corpus;
    for (std::size_t i = 0, n = 2 + rng.below(6); i < n; ++i) corpus.push_back(random_sentence(vocab, 6));
    const double d = 0.05 + 0.9 * rng.unit();
    const auto m = train_lm(corpus, order, 1, d);
    const testing_support::KnOracle oracle(corpus, order, d);
    for (int q = 0; q < 15; ++q) {
      const auto s = random_sentence(5, 7);
      const double want = oracle.logprob(s);
      worst_rel = std::max(worst_rel, std::abs(m.sentence_logprob(s) - want) / std::abs(want));
      ++queries;
    }
    const auto V = static_cast<TokenId>(m.vocabulary().size());
    std::vector<std::vector<TokenId>> ctxs = {{}};
    for (int k = 0; k < order - 1; ++k) {
      std::vector<std::vector<TokenId>> next;
      for (const auto& c : ctxs) {
        for (TokenId t = 0; t < V; ++t) {
          auto e = c;
          e.push_back(t);
          next.push_back(e);
        }
      }
      ctxs = std::move(next);
    }
    for (const auto& c : ctxs) {
      double sum = 0.0;
      for (TokenId w = 1; w < V; ++w) sum += m.prob(w, c);
      worst_norm = std::max(worst_norm, std::abs(sum - 1.0));
      ++contexts;
    }
  }
  report(worst_rel <= 1e-9 && worst_norm <= 1e-9, "lm-kneser-ney-oracle",
         fmt("%zu sequences, max rel err %.2e; %zu contexts, max |sum-1| %.2e", queries, worst_rel, contexts,
             worst_norm));
}

// ---------------------------------------------------------------------------

ExperimentConfig sst2_config(const fs::path& out) {
  auto cfg = load_config(std::string(ORDERBKD_CONFIG_DIR) + "/sst2_synth.json");
  cfg.output_dir = out.string();
  return cfg;
}

void multiset_stealth(Experiment& exp) {
  const auto& train = exp.train().examples;
  TriggerSpec badnet, addsent;
  badnet.kind = TriggerKind::kBadNet;
  badnet.badnet_tokens = exp.config().badnet_tokens;
  addsent.kind = TriggerKind::kAddSent;
  addsent.addsent_tokens = exp.config().addsent_tokens;
  Rng pick(derive_seed(exp.config().seed, "acceptance/stealth"));
  Rng insert(derive_seed(exp.config().seed, "acceptance/badnet"));
  const auto embed = EmbedderHandle::builtin_bow();

  std::size_t n = 0, exact = 0, bad_lt = 0, add_lt = 0, draws = 0;
  while (n < 1000 && draws < 20 * train.size()) {
    ++draws;
    const auto& ex = train[pick.below(train.size())];
    const auto toks = tokenize(ex.text).tokens;
    const auto tagged = tag(exp.tagger(), toks);
    RepositionResult r;
    try {
      r = choose_best_reposition(tagged, exp.scorer());
    } catch (const NoCandidateError&) {
      continue;
    } catch (const NoValidPositionError&) {
      continue;
    }
    ++n;
    auto as = [&](const Tokens& t) { return LabeledExample{ex.id, detokenize(t), ex.label, std::nullopt}; };
    exact += similarity(ex, as(r.tokens), embed) == 1.0;
    bad_lt += similarity(ex, as(apply_badnet(toks, badnet, insert)), embed) < 1.0;
    add_lt += similarity(ex, as(apply_addsent(toks, addsent)), embed) < 1.0;
  }
  report(n == 1000 && exact == n && bad_lt == n && add_lt == n, "multiset-stealth",
         fmt("%zu samples: OrderBkd sim==1 %zu, BadNet sim<1 %zu, AddSent sim<1 %zu", n, exact, bad_lt, add_lt));
}

void end_to_end(const fs::path& scratch) {
  const auto cfg = sst2_config(scratch / "run1");
  const auto t0 = Clock::now();
  const auto res = run_experiment(cfg);
  const double secs = seconds_since(t0);

  Experiment probe(cfg);
  const auto train_n = probe.train().examples.size(), test_n = probe.test().examples.size();

  const EvaluationReport* ob = nullptr;
  const EvaluationReport* bn = nullptr;
  for (const auto& r : res.rows) {
    if (r.attack == "orderbkd") ob = &r;
    if (r.attack == "badnet") bn = &r;
  }
  if (!ob || !bn || !ob->defense || !bn->defense) {
    report(false, "end-to-end-backdoor", "report lacks orderbkd/badnet rows with defense results");
    return;
  }

  const double cacc_gap = ob->clean_baseline_acc - ob->cacc;
  report(train_n >= 4000 && test_n >= 800 && ob->asr >= 0.80 && std::abs(cacc_gap) <= 0.05 && secs < 300.0,
         "end-to-end-backdoor",
         fmt("train %zu / test %zu, rate %.2f: ASR %.3f (>= 0.80), CACC %.3f vs clean %.3f (gap %.3f, limit 0.05), %.1f s",
             train_n, test_n, cfg.rate, ob->asr, ob->cacc, ob->clean_baseline_acc, cacc_gap, secs));

  report(ob->clean_model_asr < 0.6, "clean-model-control",
         fmt("clean-trained victim ASR on the OrderBkd test set %.3f (< 0.6)", ob->clean_model_asr));

  const double bn_drop = bn->asr - bn->defense->asr, ob_drop = ob->asr - ob->defense->asr;
  report(bn_drop >= 0.25 && ob_drop <= 0.10, "onion-differential",
         fmt("threshold %.3f; BadNet %.3f -> %.3f (drop %.3f >= 0.25), OrderBkd %.3f -> %.3f (drop %.3f <= 0.10)",
             bn->defense->threshold, bn->asr, bn->defense->asr, bn_drop, ob->asr, ob->defense->asr, ob_drop));

  const auto again = run_experiment(sst2_config(scratch / "run2"));
  const auto a = testing_support::read_text(scratch / "run1" / "report.json");
  const auto b = testing_support::read_text(scratch / "run2" / "report.json");
  report(!a.empty() && a == b, "determinism",
         fmt("report.json %zu bytes, identical across two runs: %s", a.size(), a == b ? "yes" : "no"));
}

void pos_study(Experiment& exp) {
  const auto& train = exp.train().examples;
  const std::size_t n = std::min<std::size_t>(1500, train.size());
  const std::vector<Upos> classes = {Upos::ADJ, Upos::DET, Upos::ADV, Upos::NOUN, Upos::VERB};
  const auto study = pos_choice_study(std::span(train).first(n), classes, exp.tagger(), exp.scorer(), exp.embedder());
  std::string detail = fmt("%zu samples;", n);
  for (const auto& r : study.rows) {
    detail += fmt(" %s dPPL %+.2f sim %.3f;", std::string(to_string(r.cls)).c_str(), r.delta_ppl, r.similarity);
  }
  detail += study.adverb_lowest ? " ADV lowest" : (" flagged: " + study.note);
  report(study.adverb_lowest, "pos-choice-study", detail);
}

void tagger_quality() {
  const auto model = train_tagger(testing_support::data_path("treebank/en_synth-ud-train.conllu"), 5,
                                  derive_seed(13, "tagger"));
  const auto gold = read_conllu(testing_support::data_path("treebank/en_synth-ud-test.conllu"));
  const auto ev = evaluate_tagger(model, gold);
  const double adv = ev.precision[static_cast<std::size_t>(Upos::ADV)];
  const double det = ev.precision[static_cast<std::size_t>(Upos::DET)];
  report(ev.accuracy() >= 0.90 && adv >= 0.85 && det >= 0.85, "tagger-quality",
         fmt("%zu held-out tokens: accuracy %.4f, ADV precision %.4f, DET precision %.4f", ev.tokens, ev.accuracy(),
             adv, det));
}

}  // namespace

int main() {
  set_thread_count(1);
  set_warning_sink([](std::string_view) {});
  const auto scratch = testing_support::scratch("acceptance");
  try {
    reposition_oracle();
    lm_oracle();
    Experiment exp(sst2_config(scratch / "shared"));
    multiset_stealth(exp);
    end_to_end(scratch);
    pos_study(exp);
    tagger_quality();
  } catch (const std::exception& e) {
    report(false, "harness", e.what());
  }
  std::printf("%s: %d criterion(s) failed\n", failures ? "FAILED" : "OK", failures);
  return failures ? 1 : 0;
}
