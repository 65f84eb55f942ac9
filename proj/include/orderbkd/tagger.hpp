#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "orderbkd/corpus.hpp"

namespace orderbkd {

enum class Upos : std::uint8_t {
  ADJ, ADP, ADV, AUX, CCONJ, DET, INTJ, NOUN, NUM, PART, PRON, PROPN, PUNCT, SCONJ, SYM, VERB, X
};
inline constexpr std::size_t kUposCount = 17;

std::string_view to_string(Upos tag);
std::optional<Upos> parse_upos(std::string_view s);

struct TaggedSentence {
  Tokens tokens;
  std::vector<Upos> tags;
};

/// One sentence from a CoNLL-U file: forms (lowercased) with gold UPOS.
struct GoldSentence {
  Tokens forms;
  std::vector<Upos> tags;
};

/// Reads columns 1, 2 and 4 of a CoNLL-U file. Multiword-token ranges and
/// empty nodes are skipped.
std::vector<GoldSentence> read_conllu(const std::string& path);

/// Averaged-perceptron tagger with a tag dictionary for frequent unambiguous words.
class TaggerModel {
 public:
  static constexpr int kFormatVersion = 1;
  /// Dictionary entries need this many occurrences...
  static constexpr int kDictMinCount = 20;
  /// ...with at least this share carrying a single tag.
  static constexpr double kDictMinShare = 0.97;

  using Scores = std::array<double, kUposCount>;

  const std::map<std::string, Upos>& dictionary() const { return dict_; }
  const std::map<std::string, Scores>& weights() const { return weights_; }

  void save(const std::string& path) const;
  static TaggerModel load(const std::string& path);

  std::string to_json_string() const;

 private:
  friend TaggerModel train_tagger(std::span<const GoldSentence>, int, std::uint64_t);
  friend TaggedSentence tag(const TaggerModel&, std::span<const std::string>);

  std::map<std::string, Upos> dict_;
  std::map<std::string, Scores> weights_;
};

TaggerModel train_tagger(std::span<const GoldSentence> sentences, int epochs, std::uint64_t seed);
TaggerModel train_tagger(const std::string& conllu_path, int epochs, std::uint64_t seed);

/// Greedy left-to-right decoding.
TaggedSentence tag(const TaggerModel& model, std::span<const std::string> tokens);

struct TaggerEvaluation {
  std::size_t tokens = 0;
  std::size_t correct = 0;
  /// Per-tag precision; NaN when the tag was never predicted.
  std::array<double, kUposCount> precision{};
  double accuracy() const { return tokens ? static_cast<double>(correct) / tokens : 0.0; }
};

TaggerEvaluation evaluate_tagger(const TaggerModel& model, std::span<const GoldSentence> gold);

}  // namespace orderbkd
