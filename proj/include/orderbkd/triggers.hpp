#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orderbkd/corpus.hpp"
#include "orderbkd/lm.hpp"
#include "orderbkd/tagger.hpp"
#include "orderbkd/util.hpp"

namespace orderbkd {

struct RepositionCandidate {
  std::size_t token_index = 0;
  Upos tag = Upos::ADV;
  std::string word;
  bool operator==(const RepositionCandidate&) const = default;
};

struct RepositionResult {
  Tokens tokens;
  std::size_t source_index = 0;
  std::size_t dest_index = 0;
  RepositionCandidate candidate;
  double perplexity = 0.0;
  CandidateKind candidate_kind = CandidateKind::kAdverb;
};

struct TriggerSpec {
  TriggerKind kind = TriggerKind::kOrderBkd;
  Tokens badnet_tokens = {"cf", "mn", "bb", "tq"};
  /// No default: the inserted sentence must come from configuration.
  Tokens addsent_tokens;
  std::uint64_t seed = 0;
  /// Replaces the adverb-then-determiner rule with a single forced class.
  std::optional<Upos> forced_class;

  void validate() const;
};

/// Adverbs if any exist, otherwise determiners, otherwise nothing.
std::vector<RepositionCandidate> select_candidates(const TaggedSentence& sentence);
/// Every position tagged `cls`.
std::vector<RepositionCandidate> select_candidates(const TaggedSentence& sentence, Upos cls);

/// Moves the token at `source` so it ends up at index `dest` of the output.
Tokens reposition(std::span<const std::string> tokens, std::size_t source, std::size_t dest);

/// Lowest-perplexity placement over all candidates and all destinations,
/// excluding placements that reproduce the original sequence. Ties break
/// by (perplexity, source index, destination index).
/// `cache` (builtin scorer only) may be shared across searches against the
/// same model and thread; scores are unaffected.
RepositionResult choose_best_reposition(const TaggedSentence& sentence, const ScorerHandle& scorer,
                                        LanguageModel::TermCache* cache = nullptr);
RepositionResult choose_best_reposition(const TaggedSentence& sentence,
                                        std::span<const RepositionCandidate> candidates,
                                        const ScorerHandle& scorer, LanguageModel::TermCache* cache = nullptr);

Tokens apply_badnet(std::span<const std::string> tokens, const TriggerSpec& spec, Rng& rng);
Tokens apply_addsent(std::span<const std::string> tokens, const TriggerSpec& spec);

}  // namespace orderbkd
