#pragma once

#include "ssgan/models.hpp"
#include "ssgan/optimizer.hpp"
#include "ssgan/synthdata.hpp"
#include "ssgan/training.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ssgan {

using nlohmann::json;

/// Class-stratified k-fold partition. Members of each class are shuffled
/// and all classes dealt round-robin in turn, so fold sizes and per-fold
/// class counts are each within one of even.
std::vector<std::vector<std::size_t>> kfold_split(std::span<const int> labels, int k,
                                                  std::uint64_t seed);

double top1_accuracy(std::span<const int> predictions, std::span<const int> truth);

struct ProbeConfig {
  int hidden = 256;
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  void validate() const;
};

json to_json(const ProbeConfig& config);
ProbeConfig probe_config_from_json(const json& j, ProbeConfig base = {});

/// Two-layer MLP (rectified hidden layer, softmax output) over features
/// standardized with the training set's per-dimension mean and deviation.
class Probe {
 public:
  Probe(Index input_dim, int classes, int hidden, Rng& rng);

  MatrixX<double> logits(const MatrixX<double>& features) const;
  /// Argmax per row; ties go to the lowest class id.
  std::vector<int> predict(const MatrixX<double>& features) const;

  /// One pass over `features` in shuffled minibatches; returns the mean loss.
  double train_epoch(const MatrixX<double>& standardized, std::span<const int> labels,
                     int batch_size, Adam<double>& opt, Rng& rng);

  void set_standardization(const MatrixX<double>& train_features);
  MatrixX<double> standardize(const MatrixX<double>& features) const;

  std::vector<Parameter<double>*> parameters() { return {&w1_, &b1_, &w2_, &b2_}; }
  int classes() const { return classes_; }

 private:
  MatrixX<double> forward_standardized(const MatrixX<double>& x, MatrixX<double>* hidden) const;

  int classes_ = 0;
  Parameter<double> w1_, b1_, w2_, b2_;
  Eigen::RowVectorXd mean_, inv_scale_;
};

Probe train_probe(const MatrixX<double>& features, std::span<const int> labels,
                  const ProbeConfig& config, std::uint64_t seed);

/// Per-fold held-out top-1 for a probe trained on the other k-1 folds.
std::vector<double> cross_validate(const MatrixX<double>& features, std::span<const int> labels,
                                   int k, const ProbeConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct FeatureSet {
  MatrixX<double> values;          // one row per clip
  std::vector<int> labels;         // activity ids
  std::vector<std::string> clips;  // manifest-relative paths
  std::string checkpoint_hash;
  std::string manifest_hash;
};

/// Flattened trunk output in eval mode; leaves the network untouched.
MatrixX<double> extract_features(Discriminator<float>& disc, std::span<const VideoClip> clips);

/// Features for the labeled splits (probe-train followed by probe-test).
FeatureSet extract_probe_features(GanState& state, const DatasetManifest& manifest);

/// features.f32 (row-major float32, little-endian) plus features.json.
void save_feature_set(const std::filesystem::path& dir, const FeatureSet& set);
FeatureSet load_feature_set(const std::filesystem::path& dir);

struct EvalReport {
  std::vector<double> folds;
  double mean = 0.0;
  double std = 0.0;  // population deviation over the folds
  std::string variant;
  json config;
  std::uint64_t seed = 0;
  std::string checkpoint_hash;

  json to_json() const;
  static EvalReport from_json(const json& j);
};

EvalReport summarize_folds(std::vector<double> folds);

EvalReport evaluate_features(const FeatureSet& features, const ProbeConfig& config,
                             std::uint64_t seed, int k = 5);

/// Loads a checkpoint, extracts probe features and cross-validates. Throws
/// ContractError if the parameters change during extraction.
EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint,
                               const DatasetManifest& manifest, const ProbeConfig& config,
                               std::uint64_t seed, FeatureSet* features_out = nullptr,
                               int k = 5);

}  // namespace ssgan
