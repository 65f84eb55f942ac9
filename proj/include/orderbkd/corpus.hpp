#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace orderbkd {

using Tokens = std::vector<std::string>;

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // one past the last byte
  bool operator==(const CharSpan&) const = default;
};

/// Tokenizer output: lowercased tokens plus byte offsets into the source text.
struct TokenSequence {
  Tokens tokens;
  std::vector<CharSpan> spans;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
};

enum class TriggerKind { kOrderBkd, kBadNet, kAddSent };
enum class CandidateKind { kAdverb, kDeterminer, kNone };

std::string_view to_string(TriggerKind kind);
std::string_view to_string(CandidateKind kind);
TriggerKind parse_trigger_kind(std::string_view s);
CandidateKind parse_candidate_kind(std::string_view s);

/// Audit trail of one poisoned sample. The poisoned text and target label are
/// the owning example's text and label.
struct PoisonRecord {
  TriggerKind trigger = TriggerKind::kOrderBkd;
  CandidateKind candidate_kind = CandidateKind::kNone;
  std::optional<int> src;  // reposition only
  std::optional<int> dst;
  int orig_label = 0;
  std::string orig_text;

  bool operator==(const PoisonRecord&) const = default;
};

struct LabeledExample {
  std::string id;
  std::string text;
  int label = 0;
  std::optional<PoisonRecord> provenance;

  bool operator==(const LabeledExample&) const = default;
};

enum class Split { kTrain, kDev, kTest };
enum class DatasetFormat { kTsv, kJsonl };

DatasetFormat parse_dataset_format(std::string_view s);
/// Picks the format from the file extension (.jsonl / .tsv).
DatasetFormat format_from_path(std::string_view path);

struct DatasetMeta {
  std::string name;
  int class_count = 0;
  std::vector<std::string> label_names;
  Split split = Split::kTrain;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<LabeledExample> examples;
};

TokenSequence tokenize(std::string_view text);
std::string detokenize(std::span<const std::string> tokens);

/// True for tokens made only of ASCII punctuation.
bool is_punctuation_token(std::string_view token);

struct LoadOptions {
  /// When unset, the class count is inferred as max(label) + 1.
  std::optional<int> class_count;
  Split split = Split::kTrain;
};

/// Loads a TSV (header `text\tlabel`) or JSONL dataset, preserving file order.
/// CRLF line endings are accepted.
Dataset load_dataset(const std::string& path, DatasetFormat format, const LoadOptions& options = {});

/// Writes examples; TSV cannot carry provenance and emits a warning when any is dropped.
void save_dataset(std::span<const LabeledExample> examples, const std::string& path, DatasetFormat format);

}  // namespace orderbkd
