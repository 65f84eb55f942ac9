#include "orderbkd/victim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "orderbkd/errors.hpp"
#include "orderbkd/util.hpp"

namespace orderbkd {

namespace {

constexpr char kMagic[8] = {'O', 'B', 'K', 'D', 'V', 'I', 'C', 'T'};

std::uint32_t bucket(std::string_view order_tag, std::span<const std::string_view> gram) {
  std::uint64_t h = fnv1a(order_tag, kFnvOffset ^ kFeatureHashSeed);
  for (auto w : gram) {
    h = fnv1a("\x1f", h);
    h = fnv1a(w, h);
  }
  return static_cast<std::uint32_t>((h ^ (h >> 32)) & (kFeatureDim - 1));
}

std::vector<double> softmax(const std::vector<double>& scores) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t c = 0; c < scores.size(); ++c) z += p[c] = std::exp(scores[c] - mx);
  for (double& v : p) v /= z;
  return p;
}

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError(path + ": truncated victim checkpoint");
  return v;
}

}  // namespace

FeatureVector featurize(std::span<const std::string> tokens) {
  std::vector<std::string_view> padded;
  padded.reserve(tokens.size() + 2);
  padded.push_back("<s>");
  for (const auto& t : tokens) padded.push_back(t);
  padded.push_back("</s>");

  std::vector<std::uint32_t> ids;
  ids.reserve(tokens.size() * 3 + 1);
  for (std::size_t i = 1; i + 1 < padded.size(); ++i) ids.push_back(bucket("1", std::span(&padded[i], 1)));
  for (std::size_t i = 0; i + 1 < padded.size(); ++i) ids.push_back(bucket("2", std::span(&padded[i], 2)));
  for (std::size_t i = 0; i + 2 < padded.size(); ++i) ids.push_back(bucket("3", std::span(&padded[i], 3)));
  std::sort(ids.begin(), ids.end());

  FeatureVector fv;
  for (std::uint32_t id : ids) {
    if (!fv.empty() && fv.back().first == id) {
      ++fv.back().second;
    } else {
      fv.emplace_back(id, 1u);
    }
  }
  return fv;
}

VictimModel::VictimModel(int class_count)
    : class_count_(class_count),
      weights_(static_cast<std::size_t>(class_count) * kFeatureDim, 0.0),
      bias_(static_cast<std::size_t>(class_count), 0.0) {}

Prediction VictimModel::predict(const FeatureVector& x) const {
  Prediction p;
  p.scores.assign(bias_.begin(), bias_.end());
  for (int c = 0; c < class_count_; ++c) {
    const double* w = weights_.data() + static_cast<std::size_t>(c) * kFeatureDim;
    for (const auto& [idx, cnt] : x) p.scores[static_cast<std::size_t>(c)] += w[idx] * cnt;
  }
  p.label = static_cast<int>(std::max_element(p.scores.begin(), p.scores.end()) - p.scores.begin());
  return p;
}

Prediction predict(const VictimModel& model, std::span<const std::string> tokens) {
  return model.predict(featurize(tokens));
}

VictimModel train_victim(std::span<const LabeledExample> data, int class_count, const VictimHyperparams& hp) {
  if (data.empty()) throw ValidationError("cannot train a victim on an empty dataset");
  if (class_count < 2) throw ValidationError("victim needs at least two classes");
  if (hp.epochs < 0 || hp.batch_size < 1 || !(hp.learning_rate > 0.0) || !std::isfinite(hp.learning_rate)) {
    throw ValidationError("invalid victim hyperparameters");
  }
  std::set<int> labels;
  for (const auto& ex : data) {
    if (ex.label < 0 || ex.label >= class_count) throw ValidationError("label out of range in victim training data");
    labels.insert(ex.label);
  }
  if (labels.size() < 2) throw ValidationError("victim training data contains a single class");

  std::vector<FeatureVector> xs;
  xs.reserve(data.size());
  for (const auto& ex : data) xs.push_back(featurize(tokenize(ex.text).tokens));

  VictimModel m(class_count);
  m.hyper_ = hp;
  const auto C = static_cast<std::size_t>(class_count);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hp.seed);
  std::vector<std::vector<double>> grads;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(order);
    double loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
      // Gradients for the whole batch are taken at the same weights.
      grads.clear();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const auto scores = m.predict(xs[i]).scores;
        const auto y = static_cast<std::size_t>(data[i].label);
        const double top = *std::max_element(scores.begin(), scores.end());
        double z = 0.0;
        for (double s : scores) z += std::exp(s - top);
        loss += top + std::log(z) - scores[y];
        auto p = softmax(scores);
        p[y] -= 1.0;
        grads.push_back(std::move(p));
      }
      const double step = hp.learning_rate / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& g = grads[k - start];
        for (std::size_t c = 0; c < C; ++c) {
          if (g[c] == 0.0) continue;
          double* w = m.weights_.data() + c * kFeatureDim;
          for (const auto& [idx, cnt] : xs[order[k]]) w[idx] -= step * g[c] * cnt;
          m.bias_[c] -= step * g[c];
        }
      }
    }
    loss /= static_cast<double>(data.size());
    const bool finite_weights = std::all_of(m.weights_.begin(), m.weights_.end(), [](double w) { return std::isfinite(w); });
    if (!std::isfinite(loss) || !finite_weights) throw DivergenceError("victim training diverged at epoch " + std::to_string(epoch + 1));
    m.loss_curve_.push_back(loss);
  }
  return m;
}

void VictimModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write victim checkpoint " + path);
  out.write(kMagic, sizeof kMagic);
  put(out, kFormatVersion);
  put(out, kFeatureDim);
  put(out, static_cast<std::uint32_t>(class_count_));
  put(out, kFeatureHashSeed);
  put(out, static_cast<std::uint32_t>(hyper_.epochs));
  put(out, hyper_.learning_rate);
  put(out, static_cast<std::uint32_t>(hyper_.batch_size));
  put(out, hyper_.seed);
  put(out, static_cast<std::uint32_t>(loss_curve_.size()));
  for (double v : loss_curve_) put(out, v);
  out.write(reinterpret_cast<const char*>(bias_.data()), static_cast<std::streamsize>(bias_.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(weights_.data()),
            static_cast<std::streamsize>(weights_.size() * sizeof(double)));
  if (!out) throw IoError("write failed for " + path);
}

VictimModel VictimModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open victim checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ValidationError(path + ": not a victim checkpoint");
  }
  if (get<std::uint32_t>(in, path) != kFormatVersion) throw ValidationError(path + ": unsupported checkpoint version");
  if (get<std::uint32_t>(in, path) != kFeatureDim) throw ValidationError(path + ": feature dimension mismatch");
  const auto classes = get<std::uint32_t>(in, path);
  if (get<std::uint64_t>(in, path) != kFeatureHashSeed) throw ValidationError(path + ": hash seed mismatch");
  if (classes < 2 || classes > 1024) throw ValidationError(path + ": bad class count");

  VictimModel m(static_cast<int>(classes));
  m.hyper_.epochs = static_cast<int>(get<std::uint32_t>(in, path));
  m.hyper_.learning_rate = get<double>(in, path);
  m.hyper_.batch_size = static_cast<int>(get<std::uint32_t>(in, path));
  m.hyper_.seed = get<std::uint64_t>(in, path);
  const auto n = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n; ++i) m.loss_curve_.push_back(get<double>(in, path));
  if (!in.read(reinterpret_cast<char*>(m.bias_.data()), static_cast<std::streamsize>(m.bias_.size() * sizeof(double))) ||
      !in.read(reinterpret_cast<char*>(m.weights_.data()),
               static_cast<std::streamsize>(m.weights_.size() * sizeof(double)))) {
    throw IoError(path + ": truncated victim checkpoint");
  }
  return m;
}

}  // namespace orderbkd
