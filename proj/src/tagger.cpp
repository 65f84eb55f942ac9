#include "orderbkd/tagger.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "orderbkd/errors.hpp"
#include "orderbkd/util.hpp"

namespace orderbkd {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kUposCount> kUposNames = {
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
    "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

// Feature strings for position i, given the previously predicted tag.
std::vector<std::string> features(std::span<const std::string> words, std::size_t i, std::string_view prev_tag) {
  const std::string& w = words[i];
  std::vector<std::string> f;
  f.reserve(12);
  f.push_back("w=" + w);
  for (std::size_t k = 1; k <= 3 && k <= w.size(); ++k) {
    f.push_back("p" + std::to_string(k) + "=" + w.substr(0, k));
    f.push_back("s" + std::to_string(k) + "=" + w.substr(w.size() - k));
  }
  f.push_back("pt=" + std::string(prev_tag));
  f.push_back("pw=" + (i > 0 ? words[i - 1] : std::string("-START-")));
  f.push_back("nw=" + (i + 1 < words.size() ? words[i + 1] : std::string("-END-")));
  if (std::any_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) f.push_back("digit");
  if (w.find('-') != std::string::npos) f.push_back("hyphen");
  return f;
}

// Argmax with NOUN as the fallback when every score is equal (e.g. all zero).
Upos best_tag(const TaggerModel::Scores& scores) {
  const bool all_equal = std::all_of(scores.begin(), scores.end(), [&](double s) { return s == scores[0]; });
  if (all_equal) return Upos::NOUN;
  std::size_t best = 0;
  for (std::size_t t = 1; t < kUposCount; ++t) {
    if (scores[t] > scores[best]) best = t;
  }
  return static_cast<Upos>(best);
}

struct Averager {
  std::unordered_map<std::string, TaggerModel::Scores> weights;
  std::unordered_map<std::string, TaggerModel::Scores> totals;
  std::unordered_map<std::string, std::array<long, kUposCount>> stamps;
  long instances = 0;

  TaggerModel::Scores score(const std::vector<std::string>& feats) const {
    TaggerModel::Scores s{};
    for (const auto& f : feats) {
      auto it = weights.find(f);
      if (it == weights.end()) continue;
      for (std::size_t t = 0; t < kUposCount; ++t) s[t] += it->second[t];
    }
    return s;
  }

  void bump(const std::string& f, std::size_t t, double delta) {
    auto& w = weights[f];
    auto& tot = totals[f];
    auto& st = stamps[f];
    tot[t] += static_cast<double>(instances - st[t]) * w[t];
    st[t] = instances;
    w[t] += delta;
  }

  void update(Upos truth, Upos guess, const std::vector<std::string>& feats) {
    ++instances;
    if (truth == guess) return;
    for (const auto& f : feats) {
      bump(f, static_cast<std::size_t>(truth), 1.0);
      bump(f, static_cast<std::size_t>(guess), -1.0);
    }
  }
};

}  // namespace

std::string_view to_string(Upos tag) { return kUposNames[static_cast<std::size_t>(tag)]; }

std::optional<Upos> parse_upos(std::string_view s) {
  for (std::size_t i = 0; i < kUposCount; ++i) {
    if (kUposNames[i] == s) return static_cast<Upos>(i);
  }
  return std::nullopt;
}

std::vector<GoldSentence> read_conllu(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open treebank " + path);

  std::vector<GoldSentence> out;
  GoldSentence cur;
  std::string line;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (!cur.forms.empty()) out.push_back(std::move(cur));
    cur = {};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') continue;
    const auto cols = split_tabs(line);
    if (cols.size() < 4) throw ParseError(path, line_no, "expected at least 4 tab-separated columns");
    const std::string& id = cols[0];
    if (id.empty() || !std::isdigit(static_cast<unsigned char>(id[0]))) {
      throw ParseError(path, line_no, "bad token index '" + id + "'");
    }
    if (id.find('-') != std::string::npos || id.find('.') != std::string::npos) continue;
    if (!std::all_of(id.begin(), id.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      throw ParseError(path, line_no, "bad token index '" + id + "'");
    }
    auto upos = parse_upos(cols[3]);
    if (!upos) throw ParseError(path, line_no, "unknown UPOS '" + cols[3] + "'");
    if (cols[1].empty()) throw ParseError(path, line_no, "empty form");
    cur.forms.push_back(lower(cols[1]));
    cur.tags.push_back(*upos);
  }
  flush();
  return out;
}

TaggerModel train_tagger(std::span<const GoldSentence> sentences, int epochs, std::uint64_t seed) {
  if (sentences.empty()) throw ValidationError("treebank contains no sentences");
  if (epochs < 0) throw ValidationError("epochs must be non-negative");

  TaggerModel model;

  // Tag dictionary from frequent unambiguous words.
  std::map<std::string, std::array<int, kUposCount>> counts;
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.forms.size(); ++i) counts[s.forms[i]][static_cast<std::size_t>(s.tags[i])]++;
  }
  for (const auto& [word, per_tag] : counts) {
    const int total = std::accumulate(per_tag.begin(), per_tag.end(), 0);
    const auto top = std::max_element(per_tag.begin(), per_tag.end());
    if (total >= TaggerModel::kDictMinCount &&
        static_cast<double>(*top) / total >= TaggerModel::kDictMinShare) {
      model.dict_[word] = static_cast<Upos>(top - per_tag.begin());
    }
  }

  Averager avg;
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t idx : order) {
      const auto& s = sentences[idx];
      std::string_view prev = "-START-";
      for (std::size_t i = 0; i < s.forms.size(); ++i) {
        Upos guess;
        if (is_punctuation_token(s.forms[i])) {
          guess = Upos::PUNCT;
        } else if (auto it = model.dict_.find(s.forms[i]); it != model.dict_.end()) {
          guess = it->second;
        } else {
          const auto feats = features(s.forms, i, prev);
          guess = best_tag(avg.score(feats));
          avg.update(s.tags[i], guess, feats);
        }
        prev = to_string(guess);
      }
    }
  }

  // Average and keep non-zero weights.
  for (auto& [feat, w] : avg.weights) {
    auto& tot = avg.totals[feat];
    auto& st = avg.stamps[feat];
    TaggerModel::Scores out{};
    bool nonzero = false;
    for (std::size_t t = 0; t < kUposCount; ++t) {
      tot[t] += static_cast<double>(avg.instances - st[t]) * w[t];
      out[t] = avg.instances > 0 ? tot[t] / static_cast<double>(avg.instances) : 0.0;
      nonzero |= out[t] != 0.0;
    }
    if (nonzero) model.weights_.emplace(feat, out);
  }
  return model;
}

TaggerModel train_tagger(const std::string& conllu_path, int epochs, std::uint64_t seed) {
  return train_tagger(read_conllu(conllu_path), epochs, seed);
}

TaggedSentence tag(const TaggerModel& model, std::span<const std::string> tokens) {
  TaggedSentence out;
  out.tokens.assign(tokens.begin(), tokens.end());
  out.tags.reserve(tokens.size());
  std::string_view prev = "-START-";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Upos t;
    if (is_punctuation_token(tokens[i])) {
      t = Upos::PUNCT;
    } else if (auto it = model.dict_.find(tokens[i]); it != model.dict_.end()) {
      t = it->second;
    } else {
      TaggerModel::Scores s{};
      for (const auto& f : features(tokens, i, prev)) {
        auto w = model.weights_.find(f);
        if (w == model.weights_.end()) continue;
        for (std::size_t k = 0; k < kUposCount; ++k) s[k] += w->second[k];
      }
      t = best_tag(s);
    }
    out.tags.push_back(t);
    prev = to_string(t);
  }
  return out;
}

TaggerEvaluation evaluate_tagger(const TaggerModel& model, std::span<const GoldSentence> gold) {
  TaggerEvaluation ev;
  std::array<std::size_t, kUposCount> predicted{}, hit{};
  for (const auto& s : gold) {
    const auto pred = tag(model, s.forms);
    for (std::size_t i = 0; i < s.forms.size(); ++i) {
      const auto p = static_cast<std::size_t>(pred.tags[i]);
      ++ev.tokens;
      ++predicted[p];
      if (pred.tags[i] == s.tags[i]) {
        ++ev.correct;
        ++hit[p];
      }
    }
  }
  for (std::size_t t = 0; t < kUposCount; ++t) {
    ev.precision[t] = predicted[t] ? static_cast<double>(hit[t]) / predicted[t]
                                   : std::numeric_limits<double>::quiet_NaN();
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Serialization: {"format": "orderbkd-tagger", "version": 1,
//                 "dictionary": {word: TAG}, "weights": {feature: {TAG: w}}}

std::string TaggerModel::to_json_string() const {
  json j;
  j["format"] = "orderbkd-tagger";
  j["version"] = kFormatVersion;
  json dict = json::object();
  for (const auto& [w, t] : dict_) dict[w] = std::string(to_string(t));
  j["dictionary"] = std::move(dict);
  json weights = json::object();
  for (const auto& [f, s] : weights_) {
    json per = json::object();
    for (std::size_t t = 0; t < kUposCount; ++t) {
      if (s[t] != 0.0) per[std::string(kUposNames[t])] = s[t];
    }
    weights[f] = std::move(per);
  }
  j["weights"] = std::move(weights);
  return j.dump();
}

void TaggerModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write tagger model " + path);
  out << to_json_string() << '\n';
  if (!out) throw IoError("write failed for " + path);
}

TaggerModel TaggerModel::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path, 1, std::string("invalid tagger model: ") + e.what());
  }
  if (j.value("format", "") != "orderbkd-tagger" || j.value("version", 0) != kFormatVersion) {
    throw ValidationError(path + ": not a version " + std::to_string(kFormatVersion) + " tagger model");
  }
  TaggerModel m;
  for (const auto& [w, t] : j.at("dictionary").items()) {
    auto tag = parse_upos(t.get<std::string>());
    if (!tag) throw ValidationError(path + ": bad tag in dictionary");
    m.dict_[w] = *tag;
  }
  for (const auto& [f, per] : j.at("weights").items()) {
    Scores s{};
    for (const auto& [t, v] : per.items()) {
      auto tag = parse_upos(t);
      if (!tag) throw ValidationError(path + ": bad tag in weights");
      s[static_cast<std::size_t>(*tag)] = v.get<double>();
      if (!std::isfinite(s[static_cast<std::size_t>(*tag)])) throw ValidationError(path + ": non-finite weight");
    }
    m.weights_.emplace(f, s);
  }
  return m;
}

}  // namespace orderbkd
