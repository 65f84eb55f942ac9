#include "orderbkd/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "orderbkd/errors.hpp"
#include "orderbkd/scorer_client.hpp"
#include "orderbkd/util.hpp"

namespace orderbkd {

using nlohmann::json;

namespace {
const std::array<std::string, 3> kReserved = {"<s>", "</s>", "<unk>"};
}

std::size_t LanguageModel::KeyHash::operator()(const Key& k) const noexcept {
  std::uint64_t h = kFnvOffset ^ k.size;
  for (std::size_t i = 0; i < k.size; ++i) {
    h ^= k.ids[i];
    h *= kFnvPrime;
    h ^= h >> 29;
  }
  return static_cast<std::size_t>(h);
}

LanguageModel::Key LanguageModel::make_key(std::span<const TokenId> ids) {
  Key k;
  k.size = static_cast<std::uint8_t>(ids.size());
  std::copy(ids.begin(), ids.end(), k.ids.begin());
  return k;
}

TokenId LanguageModel::id(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

void LanguageModel::build_from_highest(std::unordered_map<Key, std::uint64_t, KeyHash> highest) {
  const auto n = static_cast<std::size_t>(order_);
  raw_.assign(n, {});
  numer_.assign(n, {});
  context_.assign(n, {});
  raw_[n - 1] = std::move(highest);

  // Lower-order raw counts are suffix sums: every k-gram ending at a
  // predicted position is the suffix of the n-gram ending there.
  for (const auto& [g, c] : raw_[n - 1]) {
    for (std::size_t k = 1; k < n; ++k) {
      raw_[k - 1][make_key(std::span(g.ids.data() + (n - k), k))] += c;
    }
  }
  for (const auto& [g, c] : raw_[n - 1]) numer_[n - 1][g] = c;
  for (std::size_t k = 1; k < n; ++k) {
    for (const auto& [g, c] : raw_[k]) {
      (void)c;
      numer_[k - 1][make_key(std::span(g.ids.data() + 1, k))] += 1;
    }
  }
  for (std::size_t k = 1; k <= n; ++k) {
    numer_[k - 1].for_each([&](const Key& g, std::uint64_t v) {
      auto& stats = context_[k - 1][make_key(std::span(g.ids.data(), k - 1))];
      stats.total += v;
      stats.distinct += 1;
    });
  }
}

double LanguageModel::prob(TokenId word, std::span<const TokenId> context) const {
  const double d = discount_;
  const double uniform = 1.0 / static_cast<double>(predictable_vocab_size());
  const auto n = static_cast<std::size_t>(order_);

  std::array<TokenId, kMaxOrder> buf{};
  double p = uniform;
  for (std::size_t k = 1; k <= n; ++k) {
    if (k - 1 > context.size()) break;
    const auto ctx = context.subspan(context.size() - (k - 1));
    const ContextStats* cs = context_[k - 1].find(make_key(ctx));
    if (!cs || cs->total == 0) continue;
    std::copy(ctx.begin(), ctx.end(), buf.begin());
    buf[k - 1] = word;
    std::uint64_t v = 0;
    if (const auto* c = numer_[k - 1].find(make_key(std::span(buf.data(), k)))) v = *c;
    const double total = static_cast<double>(cs->total);
    p = std::max(static_cast<double>(v) - d, 0.0) / total + d * static_cast<double>(cs->distinct) / total * p;
  }
  return p;
}

double LanguageModel::sentence_logprob(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return sentence_logprob_ids(ids);
}

double LanguageModel::sentence_logprob_ids(std::span<const TokenId> ids, TermCache* cache) const {
  const auto pad = static_cast<std::size_t>(order_ - 1);
  const std::size_t len = pad + ids.size() + 1;
  std::array<TokenId, 64> small;
  std::vector<TokenId> large;
  if (len > small.size()) large.resize(len);
  const std::span<TokenId> seq = len > small.size() ? std::span<TokenId>(large) : std::span<TokenId>(small.data(), len);
  std::fill(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(pad), kBos);
  std::copy(ids.begin(), ids.end(), seq.begin() + static_cast<std::ptrdiff_t>(pad));
  seq[len - 1] = kEos;

  double lp = 0.0;
  for (std::size_t j = pad; j < seq.size(); ++j) lp += log_term(seq.subspan(j - pad, pad + 1), cache);
  return lp;
}

double LanguageModel::log_term(std::span<const TokenId> window, TermCache* cache) const {
  const auto ctx = window.first(window.size() - 1);
  if (!cache) return std::log(prob(window.back(), ctx));
  const Key key = make_key(window);
  if (const double* hit = cache->terms_.find(key)) return *hit;
  const double term = std::log(prob(window.back(), ctx));
  cache->terms_[key] = term;
  return term;
}
std::uint64_t LanguageModel::raw_count(std::span<const std::string> ngram) const {
  if (ngram.empty() || ngram.size() > static_cast<std::size_t>(order_)) return 0;
  std::array<TokenId, kMaxOrder> ids{};
  for (std::size_t i = 0; i < ngram.size(); ++i) {
    auto it = index_.find(ngram[i]);
    ids[i] = it == index_.end() ? kUnk : it->second;
  }
  const auto& table = raw_[ngram.size() - 1];
  auto it = table.find(make_key(std::span(ids.data(), ngram.size())));
  return it == table.end() ? 0 : it->second;
}

LanguageModel LanguageModel::uniform(std::span<const std::string> words) {
  LanguageModel m;
  m.order_ = 1;
  m.vocab_.assign(kReserved.begin(), kReserved.end());
  std::vector<std::string> sorted(words.begin(), words.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (auto& w : sorted) {
    if (std::find(kReserved.begin(), kReserved.end(), w) == kReserved.end()) m.vocab_.push_back(w);
  }
  for (TokenId i = 0; i < m.vocab_.size(); ++i) m.index_[m.vocab_[i]] = i;
  m.build_from_highest({});
  return m;
}

LanguageModel train_lm(std::span<const Tokens> corpus, int order, int min_count, double discount) {
  if (corpus.empty()) throw ValidationError("cannot train a language model on an empty corpus");
  if (order < 1 || order > LanguageModel::kMaxOrder) {
    throw ValidationError("order must be in [1, " + std::to_string(LanguageModel::kMaxOrder) + "]");
  }
  if (!(discount > 0.0 && discount < 1.0)) throw ValidationError("discount must be in (0, 1)");

  std::map<std::string, std::uint64_t> freq;
  for (const auto& s : corpus) {
    for (const auto& t : s) ++freq[t];
  }

  LanguageModel m;
  m.order_ = order;
  m.discount_ = discount;
  m.min_count_ = min_count;
  m.vocab_.assign(kReserved.begin(), kReserved.end());
  for (const auto& [w, c] : freq) {
    if (static_cast<std::int64_t>(c) >= min_count &&
        std::find(kReserved.begin(), kReserved.end(), w) == kReserved.end()) {
      m.vocab_.push_back(w);
    }
  }
  for (TokenId i = 0; i < m.vocab_.size(); ++i) m.index_[m.vocab_[i]] = i;

  const auto pad = static_cast<std::size_t>(order - 1);
  std::unordered_map<LanguageModel::Key, std::uint64_t, LanguageModel::KeyHash> highest;
  std::vector<TokenId> seq;
  for (const auto& s : corpus) {
    seq.assign(pad, LanguageModel::kBos);
    for (const auto& t : s) seq.push_back(m.id(t));
    seq.push_back(LanguageModel::kEos);
    for (std::size_t j = pad; j < seq.size(); ++j) {
      ++highest[LanguageModel::make_key(std::span(seq.data() + (j - pad), pad + 1))];
    }
  }
  m.build_from_highest(std::move(highest));
  return m;
}

// Model file: {"format": "orderbkd-lm", "version": 1, "order", "discount",
// "min_count", "vocab": [...], "ngrams": [[id..., count], ...]} where ngrams
// are the highest-order raw counts; everything else is rebuilt on load.
void LanguageModel::save(const std::string& path) const {
  json j;
  j["format"] = "orderbkd-lm";
  j["version"] = kFormatVersion;
  j["order"] = order_;
  j["discount"] = discount_;
  j["min_count"] = min_count_;
  j["vocab"] = vocab_;
  std::vector<std::vector<std::uint64_t>> rows;
  rows.reserve(raw_.back().size());
  for (const auto& [g, c] : raw_.back()) {
    std::vector<std::uint64_t> row(g.ids.begin(), g.ids.begin() + g.size);
    row.push_back(c);
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end());
  j["ngrams"] = rows;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write language model " + path);
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed for " + path);
}

LanguageModel LanguageModel::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path, 1, std::string("invalid language model: ") + e.what());
  }
  if (j.value("format", "") != "orderbkd-lm" || j.value("version", 0) != kFormatVersion) {
    throw ValidationError(path + ": not a version " + std::to_string(kFormatVersion) + " language model");
  }
  LanguageModel m;
  m.order_ = j.at("order").get<int>();
  m.discount_ = j.at("discount").get<double>();
  m.min_count_ = j.value("min_count", 1);
  m.vocab_ = j.at("vocab").get<std::vector<std::string>>();
  if (m.order_ < 1 || m.order_ > kMaxOrder || m.vocab_.size() < kReserved.size()) {
    throw ValidationError(path + ": corrupt language model header");
  }
  for (TokenId i = 0; i < m.vocab_.size(); ++i) m.index_[m.vocab_[i]] = i;
  std::unordered_map<Key, std::uint64_t, KeyHash> highest;
  for (const auto& row : j.at("ngrams")) {
    const auto v = row.get<std::vector<std::uint64_t>>();
    if (v.size() != static_cast<std::size_t>(m.order_) + 1) throw ValidationError(path + ": bad n-gram row");
    std::vector<TokenId> ids(v.begin(), v.end() - 1);
    for (TokenId t : ids) {
      if (t >= m.vocab_.size()) throw ValidationError(path + ": n-gram id out of range");
    }
    highest[make_key(ids)] = v.back();
  }
  m.build_from_highest(std::move(highest));
  return m;
}

// ---------------------------------------------------------------------------
// Scorer handle

ScorerHandle ScorerHandle::builtin(std::shared_ptr<const LanguageModel> model) {
  if (!model) throw ValidationError("builtin scorer requires a model");
  return ScorerHandle(std::move(model));
}

ScorerHandle ScorerHandle::external(std::shared_ptr<ExternalScorer> peer) {
  if (!peer) throw ValidationError("external scorer requires a connection");
  return ScorerHandle(std::move(peer));
}

ScorerHandle::Kind ScorerHandle::kind() const noexcept {
  return std::holds_alternative<Builtin>(impl_) ? Kind::kBuiltin : Kind::kExternal;
}

const LanguageModel* ScorerHandle::builtin_model() const noexcept {
  auto* p = std::get_if<Builtin>(&impl_);
  return p ? p->get() : nullptr;
}

ExternalScorer* ScorerHandle::external_peer() const noexcept {
  auto* p = std::get_if<External>(&impl_);
  return p ? p->get() : nullptr;
}

std::shared_ptr<ExternalScorer> ScorerHandle::shared_peer() const noexcept {
  auto* p = std::get_if<External>(&impl_);
  return p ? *p : nullptr;
}

std::string ScorerHandle::identity() const {
  if (const auto* m = builtin_model()) {
    return "builtin:kn" + std::to_string(m->order()) + ":d" + json(m->discount()).dump() + ":v" +
           std::to_string(m->vocabulary().size());
  }
  return "external:" + external_peer()->describe();
}

double sequence_logprob(const ScorerHandle& scorer, std::span<const std::string> tokens) {
  if (const auto* m = scorer.builtin_model()) return m->sentence_logprob(tokens);
  return scorer.external_peer()->logprob(tokens);
}

std::vector<double> sequence_logprobs(const ScorerHandle& scorer, std::span<const Tokens> batch) {
  if (const auto* m = scorer.builtin_model()) {
    std::vector<double> out;
    out.reserve(batch.size());
    for (const auto& t : batch) out.push_back(m->sentence_logprob(t));
    return out;
  }
  return scorer.external_peer()->logprob_batch(batch);
}

double perplexity_from_logprob(double logprob, std::size_t terms) {
  if (terms == 0) throw ValidationError("perplexity needs at least one scored term");
  return std::exp(-logprob / static_cast<double>(terms));
}

double perplexity(const ScorerHandle& scorer, std::span<const std::string> tokens) {
  return perplexity_from_logprob(sequence_logprob(scorer, tokens), scored_terms(tokens.size()));
}

std::vector<double> perplexities(const ScorerHandle& scorer, std::span<const Tokens> batch) {
  auto lps = sequence_logprobs(scorer, batch);
  for (std::size_t i = 0; i < lps.size(); ++i) lps[i] = perplexity_from_logprob(lps[i], scored_terms(batch[i].size()));
  return lps;
}

}  // namespace orderbkd
