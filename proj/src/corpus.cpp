#include "orderbkd/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "orderbkd/errors.hpp"
#include "orderbkd/util.hpp"

namespace orderbkd {

using nlohmann::json;

std::string_view to_string(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::kOrderBkd: return "orderbkd";
    case TriggerKind::kBadNet: return "badnet";
    case TriggerKind::kAddSent: return "addsent";
  }
  return "?";
}

std::string_view to_string(CandidateKind kind) {
  switch (kind) {
    case CandidateKind::kAdverb: return "adverb";
    case CandidateKind::kDeterminer: return "determiner";
    case CandidateKind::kNone: return "none";
  }
  return "?";
}

TriggerKind parse_trigger_kind(std::string_view s) {
  if (s == "orderbkd") return TriggerKind::kOrderBkd;
  if (s == "badnet") return TriggerKind::kBadNet;
  if (s == "addsent") return TriggerKind::kAddSent;
  throw ValidationError("unknown trigger kind '" + std::string(s) + "'");
}

CandidateKind parse_candidate_kind(std::string_view s) {
  if (s == "adverb") return CandidateKind::kAdverb;
  if (s == "determiner") return CandidateKind::kDeterminer;
  if (s == "none") return CandidateKind::kNone;
  throw ValidationError("unknown candidate kind '" + std::string(s) + "'");
}

DatasetFormat parse_dataset_format(std::string_view s) {
  if (s == "tsv") return DatasetFormat::kTsv;
  if (s == "jsonl") return DatasetFormat::kJsonl;
  throw ValidationError("unknown dataset format '" + std::string(s) + "'");
}

DatasetFormat format_from_path(std::string_view path) {
  return path.ends_with(".jsonl") ? DatasetFormat::kJsonl : DatasetFormat::kTsv;
}

// ---------------------------------------------------------------------------
// Tokenization

namespace {

bool is_space(unsigned char c) { return c == ' ' || (c >= '\t' && c <= '\r'); }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

bool is_punctuation_token(std::string_view token) {
  return !token.empty() &&
         std::all_of(token.begin(), token.end(), [](char c) { return is_punct(static_cast<unsigned char>(c)); });
}

TokenSequence tokenize(std::string_view text) {
  TokenSequence out;
  auto emit = [&](std::size_t b, std::size_t e) {
    std::string tok(text.substr(b, e - b));
    for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.tokens.push_back(std::move(tok));
    out.spans.push_back({b, e});
  };

  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i == n) break;
    std::size_t end = i;
    while (end < n && !is_space(static_cast<unsigned char>(text[end]))) ++end;

    // leading punctuation, one token per character
    std::size_t core_b = i;
    while (core_b < end && is_punct(static_cast<unsigned char>(text[core_b]))) {
      emit(core_b, core_b + 1);
      ++core_b;
    }
    std::size_t core_e = end;
    while (core_e > core_b && is_punct(static_cast<unsigned char>(text[core_e - 1]))) --core_e;
    if (core_e > core_b) emit(core_b, core_e);
    for (std::size_t k = core_e; k < end; ++k) emit(k, k + 1);
    i = end;
  }
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  static constexpr std::string_view kAttach = ".,!?;:";
  std::string out;
  bool open_double = false;
  bool open_single = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    bool attach = false;
    if (tok.size() == 1 && kAttach.find(tok[0]) != std::string_view::npos) {
      attach = true;
    } else if (tok == "\"") {
      attach = open_double;
      open_double = !open_double;
    } else if (tok == "'") {
      attach = open_single;
      open_single = !open_single;
    }
    if (i > 0 && !attach) out.push_back(' ');
    out += tok;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset I/O

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

int parse_label(const std::string& path, std::size_t line, std::string_view s) {
  std::string t = trim(s);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
      t.size() > 9) {
    throw ParseError(path, line, "label '" + t + "' is not a non-negative integer");
  }
  return std::stoi(t);
}

json record_to_json(const PoisonRecord& r) {
  json j;
  j["trigger"] = std::string(to_string(r.trigger));
  j["candidate_kind"] = std::string(to_string(r.candidate_kind));
  j["src"] = r.src ? json(*r.src) : json(nullptr);
  j["dst"] = r.dst ? json(*r.dst) : json(nullptr);
  j["orig_label"] = r.orig_label;
  j["orig_text"] = r.orig_text;
  return j;
}

PoisonRecord record_from_json(const json& j) {
  PoisonRecord r;
  r.trigger = parse_trigger_kind(j.at("trigger").get<std::string>());
  r.candidate_kind = parse_candidate_kind(j.value("candidate_kind", std::string("none")));
  if (j.contains("src") && !j["src"].is_null()) r.src = j["src"].get<int>();
  if (j.contains("dst") && !j["dst"].is_null()) r.dst = j["dst"].get<int>();
  r.orig_label = j.at("orig_label").get<int>();
  r.orig_text = j.at("orig_text").get<std::string>();
  return r;
}

}  // namespace

Dataset load_dataset(const std::string& path, DatasetFormat format, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path);

  Dataset ds;
  ds.meta.name = std::filesystem::path(path).stem().string();
  ds.meta.split = options.split;

  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;

    LabeledExample ex;
    if (format == DatasetFormat::kTsv) {
      if (!header_seen) {
        if (line != "text\tlabel") throw ParseError(path, line_no, "expected header 'text<TAB>label'");
        header_seen = true;
        continue;
      }
      const auto tab = line.rfind('\t');
      if (tab == std::string::npos) throw ParseError(path, line_no, "expected two tab-separated columns");
      ex.text = line.substr(0, tab);
      if (ex.text.find('\t') != std::string::npos) throw ParseError(path, line_no, "too many columns");
      ex.label = parse_label(path, line_no, std::string_view(line).substr(tab + 1));
      ex.id = std::to_string(ds.examples.size() + 1);
    } else {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(path, line_no, std::string("invalid JSON: ") + e.what());
      }
      try {
        if (!j.is_object() || !j.contains("text") || !j.contains("label")) {
          throw ParseError(path, line_no, "object with 'text' and 'label' required");
        }
        ex.text = j["text"].get<std::string>();
        if (!j["label"].is_number_integer() || j["label"].get<long long>() < 0) {
          throw ParseError(path, line_no, "label must be a non-negative integer");
        }
        ex.label = j["label"].get<int>();
        ex.id = j.contains("id") ? j["id"].get<std::string>() : std::to_string(ds.examples.size() + 1);
        if (j.contains("provenance") && !j["provenance"].is_null()) ex.provenance = record_from_json(j["provenance"]);
      } catch (const json::exception& e) {
        throw ParseError(path, line_no, std::string("bad field: ") + e.what());
      } catch (const ValidationError& e) {
        throw ParseError(path, line_no, e.what());
      }
    }
    if (trim(ex.text).empty()) throw ParseError(path, line_no, "empty text");
    if (options.class_count && ex.label >= *options.class_count) {
      throw ParseError(path, line_no,
                       "label " + std::to_string(ex.label) + " out of range for " +
                           std::to_string(*options.class_count) + " classes");
    }
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.empty()) throw ValidationError("dataset " + path + " is empty");

  int max_label = 0;
  for (const auto& ex : ds.examples) max_label = std::max(max_label, ex.label);
  ds.meta.class_count = options.class_count.value_or(max_label + 1);
  for (int k = 0; k < ds.meta.class_count; ++k) ds.meta.label_names.push_back(std::to_string(k));
  return ds;
}

void save_dataset(std::span<const LabeledExample> examples, const std::string& path, DatasetFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset " + path);

  if (format == DatasetFormat::kTsv) {
    out << "text\tlabel\n";
    std::size_t dropped = 0;
    for (const auto& ex : examples) {
      std::string text = ex.text;
      std::replace_if(text.begin(), text.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
      out << text << '\t' << ex.label << '\n';
      if (ex.provenance) ++dropped;
    }
    if (dropped > 0) {
      warn("TSV cannot store provenance; dropped it for " + std::to_string(dropped) + " example(s) in " + path);
    }
  } else {
    for (const auto& ex : examples) {
      json j;
      j["id"] = ex.id;
      j["text"] = ex.text;
      j["label"] = ex.label;
      if (ex.provenance) j["provenance"] = record_to_json(*ex.provenance);
      out << j.dump() << '\n';
    }
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace orderbkd
