#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "orderbkd/corpus.hpp"

namespace orderbkd {

class ExternalScorer;

using TokenId = std::uint32_t;

/// Interpolated Kneser-Ney n-gram model.
///
/// Sentences are padded with (order - 1) `<s>` tokens and one `</s>`. The
/// highest order uses raw counts, lower orders use continuation counts
/// N1+(. g), and the unigram level is interpolated with a uniform
/// distribution over every predictable token (the vocabulary minus `<s>`).
/// A single absolute discount applies at every order.
class LanguageModel {
 public:
  static constexpr int kMaxOrder = 5;
  static constexpr int kFormatVersion = 1;
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kUnk = 2;

  /// Order-1 model with no counts: uniform over `words` plus `</s>` and `<unk>`.
  static LanguageModel uniform(std::span<const std::string> words);

  int order() const noexcept { return order_; }
  double discount() const noexcept { return discount_; }
  int min_count() const noexcept { return min_count_; }
  const std::vector<std::string>& vocabulary() const noexcept { return vocab_; }
  std::size_t predictable_vocab_size() const noexcept { return vocab_.size() - 1; }

  /// Id of a token; unknown tokens map to `<unk>`.
  TokenId id(std::string_view token) const;

  /// P(word | context). Only the last (order - 1) context ids are used; a
  /// shorter context backs off to the orders it can fill.
  double prob(TokenId word, std::span<const TokenId> context) const;

  /// Natural-log chain-rule probability of a sentence, including `</s>`.
  double sentence_logprob(std::span<const std::string> tokens) const;
  class TermCache;
  /// Same, for a sentence already mapped through id(). A cache memoizes the
  /// per-position log terms across calls; results are identical either way.
  double sentence_logprob_ids(std::span<const TokenId> ids, TermCache* cache = nullptr) const;
  /// log P(window.back() | the rest of window); window holds exactly `order` ids.
  double log_term(std::span<const TokenId> window, TermCache* cache = nullptr) const;

  /// Raw occurrence count of an n-gram (1 <= size <= order) over predicted
  /// positions of the padded training data.
  std::uint64_t raw_count(std::span<const std::string> ngram) const;

  void save(const std::string& path) const;
  static LanguageModel load(const std::string& path);

 private:
  friend LanguageModel train_lm(std::span<const Tokens>, int, int, double);

  struct Key {
    std::array<TokenId, kMaxOrder> ids{};
    std::uint8_t size = 0;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };
  struct ContextStats {
    std::uint64_t total = 0;     // sum of numerators over following words
    std::uint64_t distinct = 0;  // number of distinct following words
  };

  /// Open-addressing map for the read-mostly lookup tables.
  template <typename V>
  class FlatTable {
   public:
    V& operator[](const Key& k) {
      if (2 * (size_ + 1) > keys_.size()) grow();
      const std::size_t i = slot(k);
      if (!used_[i]) {
        used_[i] = 1;
        keys_[i] = k;
        vals_[i] = V{};
        ++size_;
      }
      return vals_[i];
    }
    const V* find(const Key& k) const {
      if (keys_.empty()) return nullptr;
      const std::size_t i = slot(k);
      return used_[i] ? &vals_[i] : nullptr;
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
      for (std::size_t i = 0; i < keys_.size(); ++i) {
        if (used_[i]) fn(keys_[i], vals_[i]);
      }
    }
    std::size_t size() const noexcept { return size_; }
    void clear() {
      keys_.clear();
      vals_.clear();
      used_.clear();
      size_ = 0;
    }

   private:
    std::size_t slot(const Key& k) const {
      std::uint64_t h = KeyHash{}(k);
      h ^= h >> 33;
      h *= 0xff51afd7ed558ccdULL;
      h ^= h >> 33;
      const std::size_t mask = keys_.size() - 1;
      std::size_t i = static_cast<std::size_t>(h) & mask;
      while (used_[i] && !(keys_[i] == k)) i = (i + 1) & mask;
      return i;
    }
    void grow() {
      std::vector<Key> keys = std::move(keys_);
      std::vector<V> vals = std::move(vals_);
      std::vector<std::uint8_t> used = std::move(used_);
      const std::size_t cap = keys.empty() ? 16 : 2 * keys.size();
      keys_.assign(cap, Key{});
      vals_.assign(cap, V{});
      used_.assign(cap, 0);
      size_ = 0;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        if (used[i]) (*this)[keys[i]] = std::move(vals[i]);
      }
    }
    std::vector<Key> keys_;
    std::vector<V> vals_;
    std::vector<std::uint8_t> used_;
    std::size_t size_ = 0;
  };

  static Key make_key(std::span<const TokenId> ids);
  void build_from_highest(std::unordered_map<Key, std::uint64_t, KeyHash> highest);

  int order_ = 1;
  double discount_ = 0.75;
  int min_count_ = 1;
  std::vector<std::string> vocab_;
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept { return std::hash<std::string_view>{}(s); }
  };
  std::unordered_map<std::string, TokenId, StringHash, std::equal_to<>> index_;

  // Index k-1 holds order-k tables.
  std::vector<std::unordered_map<Key, std::uint64_t, KeyHash>> raw_;
  std::vector<FlatTable<std::uint64_t>> numer_;
  std::vector<FlatTable<ContextStats>> context_;
};

class LanguageModel::TermCache {
 public:
  void clear() { terms_.clear(); }

 private:
  friend class LanguageModel;
  FlatTable<double> terms_;
};

/// Trains a model. Tokens seen fewer than `min_count` times become `<unk>`.
LanguageModel train_lm(std::span<const Tokens> corpus, int order, int min_count, double discount);

/// Scores token sequences with either the builtin model or an external peer.
class ScorerHandle {
 public:
  enum class Kind { kBuiltin, kExternal };

  static ScorerHandle builtin(std::shared_ptr<const LanguageModel> model);
  static ScorerHandle external(std::shared_ptr<ExternalScorer> peer);

  Kind kind() const noexcept;
  const LanguageModel* builtin_model() const noexcept;
  ExternalScorer* external_peer() const noexcept;
  std::shared_ptr<ExternalScorer> shared_peer() const noexcept;

  /// Short description stamped into reports, e.g. "builtin:kn3".
  std::string identity() const;

 private:
  using Builtin = std::shared_ptr<const LanguageModel>;
  using External = std::shared_ptr<ExternalScorer>;
  explicit ScorerHandle(std::variant<Builtin, External> impl) : impl_(std::move(impl)) {}
  std::variant<Builtin, External> impl_;
};

double sequence_logprob(const ScorerHandle& scorer, std::span<const std::string> tokens);
/// Batched form; external peers receive the requests pipelined.
std::vector<double> sequence_logprobs(const ScorerHandle& scorer, std::span<const Tokens> batch);

/// Number of scored conditional terms for a sentence: tokens plus `</s>`.
inline std::size_t scored_terms(std::size_t token_count) { return token_count + 1; }

/// exp(-logprob / terms). Throws when terms == 0.
double perplexity_from_logprob(double logprob, std::size_t terms);

double perplexity(const ScorerHandle& scorer, std::span<const std::string> tokens);
std::vector<double> perplexities(const ScorerHandle& scorer, std::span<const Tokens> batch);

}  // namespace orderbkd
