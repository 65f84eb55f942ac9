#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "orderbkd/corpus.hpp"

namespace orderbkd {

/// Hashed n-gram space: 2^18 buckets.
inline constexpr std::uint32_t kFeatureBits = 18;
inline constexpr std::uint32_t kFeatureDim = 1u << kFeatureBits;
/// Mixed into the FNV-1a offset basis before hashing every n-gram.
inline constexpr std::uint64_t kFeatureHashSeed = 0x0b5e55ed5eed1234ULL;

/// Sorted (bucket, count) pairs.
using FeatureVector = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

/// Unigrams of the tokens plus bigrams and trigrams of `<s> tokens </s>`.
FeatureVector featurize(std::span<const std::string> tokens);

struct VictimHyperparams {
  int epochs = 13;
  double learning_rate = 0.1;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool operator==(const VictimHyperparams&) const = default;
};

struct Prediction {
  int label = 0;
  std::vector<double> scores;
};

/// Multinomial logistic regression over hashed n-gram counts.
class VictimModel {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  VictimModel() = default;
  explicit VictimModel(int class_count);

  int class_count() const noexcept { return class_count_; }
  const VictimHyperparams& hyperparams() const noexcept { return hyper_; }
  const std::vector<double>& loss_curve() const noexcept { return loss_curve_; }
  double weight(int cls, std::uint32_t bucket) const { return weights_[static_cast<std::size_t>(cls) * kFeatureDim + bucket]; }
  double bias(int cls) const { return bias_[static_cast<std::size_t>(cls)]; }

  Prediction predict(const FeatureVector& x) const;

  /// Binary checkpoint, little-endian:
  ///   "OBKDVICT" u32 version u32 dim u32 classes u64 hash_seed
  ///   u32 epochs f64 lr u32 batch u64 seed u32 n f64[n] loss curve
  ///   f64[classes] bias  f64[classes * dim] weights (class-major)
  void save(const std::string& path) const;
  static VictimModel load(const std::string& path);

  bool operator==(const VictimModel&) const = default;

 private:
  friend VictimModel train_victim(std::span<const LabeledExample>, int, const VictimHyperparams&);

  int class_count_ = 0;
  std::vector<double> weights_;
  std::vector<double> bias_;
  VictimHyperparams hyper_;
  std::vector<double> loss_curve_;
};

/// Mini-batch gradient descent on cross-entropy, shuffled per epoch.
VictimModel train_victim(std::span<const LabeledExample> data, int class_count, const VictimHyperparams& hp);

Prediction predict(const VictimModel& model, std::span<const std::string> tokens);

}  // namespace orderbkd
