#include "orderbkd/triggers.hpp"

#include <algorithm>
#include <tuple>

#include "orderbkd/errors.hpp"

namespace orderbkd {

void TriggerSpec::validate() const {
  if (kind == TriggerKind::kBadNet && badnet_tokens.empty()) {
    throw ValidationError("badnet trigger needs at least one token");
  }
  if (kind == TriggerKind::kAddSent && addsent_tokens.empty()) {
    throw ValidationError("addsent trigger needs a configured sentence");
  }
}

std::vector<RepositionCandidate> select_candidates(const TaggedSentence& sentence, Upos cls) {
  std::vector<RepositionCandidate> out;
  for (std::size_t i = 0; i < sentence.tags.size(); ++i) {
    if (sentence.tags[i] == cls) out.push_back({i, cls, sentence.tokens[i]});
  }
  return out;
}

std::vector<RepositionCandidate> select_candidates(const TaggedSentence& sentence) {
  auto adverbs = select_candidates(sentence, Upos::ADV);
  if (!adverbs.empty()) return adverbs;
  return select_candidates(sentence, Upos::DET);
}

Tokens reposition(std::span<const std::string> tokens, std::size_t source, std::size_t dest) {
  if (source == dest) throw ValidationError("reposition source and destination are equal");
  if (source >= tokens.size() || dest >= tokens.size()) throw ValidationError("reposition index out of bounds");
  Tokens out(tokens.begin(), tokens.end());
  std::string moved = std::move(out[source]);
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(source));
  out.insert(out.begin() + static_cast<std::ptrdiff_t>(dest), std::move(moved));
  if (std::equal(out.begin(), out.end(), tokens.begin(), tokens.end())) {
    throw ValidationError("reposition leaves the sequence unchanged");
  }
  return out;
}

RepositionResult choose_best_reposition(const TaggedSentence& sentence,
                                        std::span<const RepositionCandidate> candidates,
                                        const ScorerHandle& scorer, LanguageModel::TermCache* cache) {
  if (candidates.empty()) throw NoCandidateError("sentence has no reposition candidate");

  struct Variant {
    std::size_t cand;
    std::size_t src;
    std::size_t dest;
  };
  // Original index of the token that lands at position k after the move.
  auto origin = [](std::size_t k, std::size_t src, std::size_t dst) {
    if (k == dst) return src;
    if (src < dst) return k >= src && k < dst ? k + 1 : k;
    return k > dst && k <= src ? k - 1 : k;
  };
  const auto& toks = sentence.tokens;
  std::vector<Variant> variants;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const std::size_t src = candidates[c].token_index;
    for (std::size_t dst = 0; dst < toks.size(); ++dst) {
      if (dst == src) continue;
      bool same = true;
      for (std::size_t k = 0; k < toks.size() && same; ++k) same = toks[origin(k, src, dst)] == toks[k];
      if (!same) variants.push_back({c, src, dst});
    }
  }
  if (variants.empty()) throw NoValidPositionError("no destination changes the sentence");

  std::vector<double> ppl(variants.size());
  if (const auto* m = scorer.builtin_model()) {
    // Padded sequences: (order - 1) <s>, the tokens, </s>. Term j scores
    // position j from the window ending there. A window whose positions all
    // come from one contiguous run of the original reuses the original term.
    const auto pad = static_cast<std::size_t>(m->order() - 1);
    const std::size_t len = pad + toks.size() + 1;
    std::vector<TokenId> orig(len, LanguageModel::kBos), moved(len);
    for (std::size_t k = 0; k < toks.size(); ++k) orig[pad + k] = m->id(toks[k]);
    orig[len - 1] = LanguageModel::kEos;
    LanguageModel::TermCache local;
    if (!cache) cache = &local;
    std::vector<double> base(len, 0.0);
    for (std::size_t j = pad; j < len; ++j) base[j] = m->log_term(std::span(orig).subspan(j - pad, pad + 1), cache);

    std::vector<std::size_t> from(len);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      for (std::size_t q = 0; q < len; ++q) {
        from[q] = q < pad || q == len - 1 ? q : pad + origin(q - pad, variants[v].src, variants[v].dest);
        moved[q] = orig[from[q]];
      }
      double lp = 0.0;
      for (std::size_t j = pad; j < len; ++j) {
        bool contiguous = true;
        for (std::size_t t = j - pad; t < j && contiguous; ++t) contiguous = from[t] + 1 == from[t + 1];
        lp += contiguous ? base[from[j]] : m->log_term(std::span(moved).subspan(j - pad, pad + 1), cache);
      }
      ppl[v] = perplexity_from_logprob(lp, scored_terms(toks.size()));
    }
  } else {
    std::vector<Tokens> texts;
    texts.reserve(variants.size());
    for (const auto& v : variants) texts.push_back(reposition(toks, v.src, v.dest));
    ppl = perplexities(scorer, texts);
  }

  std::size_t best = 0;
  auto rank = [&](std::size_t v) {
    return std::make_tuple(ppl[v], candidates[variants[v].cand].token_index, variants[v].dest);
  };
  for (std::size_t v = 1; v < variants.size(); ++v) {
    if (rank(v) < rank(best)) best = v;
  }

  RepositionResult r;
  r.tokens = reposition(toks, variants[best].src, variants[best].dest);
  r.candidate = candidates[variants[best].cand];
  r.source_index = r.candidate.token_index;
  r.dest_index = variants[best].dest;
  r.perplexity = ppl[best];
  r.candidate_kind = r.candidate.tag == Upos::ADV   ? CandidateKind::kAdverb
                     : r.candidate.tag == Upos::DET ? CandidateKind::kDeterminer
                                                    : CandidateKind::kNone;
  return r;
}

RepositionResult choose_best_reposition(const TaggedSentence& sentence, const ScorerHandle& scorer,
                                        LanguageModel::TermCache* cache) {
  const auto candidates = select_candidates(sentence);
  return choose_best_reposition(sentence, candidates, scorer, cache);
}

Tokens apply_badnet(std::span<const std::string> tokens, const TriggerSpec& spec, Rng& rng) {
  if (spec.badnet_tokens.empty()) throw ValidationError("badnet trigger needs at least one token");
  const auto& word = spec.badnet_tokens[rng.below(spec.badnet_tokens.size())];
  const auto pos = rng.below(tokens.size() + 1);
  Tokens out(tokens.begin(), tokens.end());
  out.insert(out.begin() + static_cast<std::ptrdiff_t>(pos), word);
  return out;
}

Tokens apply_addsent(std::span<const std::string> tokens, const TriggerSpec& spec) {
  if (spec.addsent_tokens.empty()) throw ValidationError("addsent trigger needs a configured sentence");
  std::size_t at = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == "." || tokens[i] == "!" || tokens[i] == "?") {
      at = i + 1;
      break;
    }
  }
  Tokens out(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(at));
  out.insert(out.end(), spec.addsent_tokens.begin(), spec.addsent_tokens.end());
  out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(at), tokens.end());
  return out;
}

}  // namespace orderbkd
