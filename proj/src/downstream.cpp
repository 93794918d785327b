#include "ssgan/downstream.hpp"

#include "ssgan/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

namespace ssgan {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kFoldStream = 0x666f6c64;   // "fold"
constexpr std::uint64_t kProbeStream = 0x70726f62;  // "prob"

int class_count(std::span<const int> labels) {
  int classes = 0;
  for (int l : labels) {
    if (l < 0) throw ContractError("class labels must be non-negative");
    classes = std::max(classes, l + 1);
  }
  return classes;
}

MatrixX<double> rows_of(const MatrixX<double>& m, std::span<const std::size_t> rows) {
  MatrixX<double> out(Index(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(Index(i)) = m.row(Index(rows[i]));
  return out;
}

/// Row-wise softmax cross-entropy; writes d(mean loss)/d(logits) to `grad`.
double softmax_xent(const MatrixX<double>& logits, std::span<const int> labels,
                    MatrixX<double>& grad) {
  const Index n = logits.rows();
  grad.resize(n, logits.cols());
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
    const double z = e.sum();
    total += m + std::log(z) - logits(i, labels[std::size_t(i)]);
    grad.row(i) = e / (z * double(n));
    grad(i, labels[std::size_t(i)]) -= 1.0 / double(n);
  }
  return total / double(n);
}

}  // namespace

std::vector<std::vector<std::size_t>> kfold_split(std::span<const int> labels, int k,
                                                  std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be at least 2");
  if (labels.size() < std::size_t(k)) {
    throw ConfigError("need at least " + std::to_string(k) + " samples for " + std::to_string(k) +
                      " folds, got " + std::to_string(labels.size()));
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw ContractError("class labels must be non-negative");
    by_class[labels[i]].push_back(i);
  }
  Rng rng = derive_rng(seed, {kFoldStream});
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::size_t next = 0;
  for (auto& [label, members] : by_class) {
    if (members.size() < std::size_t(k)) {
      throw ConfigError("class " + std::to_string(label) + " has " +
                        std::to_string(members.size()) + " members, fewer than " +
                        std::to_string(k) + " folds");
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i : members) folds[next++ % std::size_t(k)].push_back(i);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

double top1_accuracy(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size()) {
    throw ContractError("prediction and truth lengths differ (" +
                        std::to_string(predictions.size()) + " vs " +
                        std::to_string(truth.size()) + ")");
  }
  if (truth.empty()) throw ContractError("accuracy over an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i];
  return double(hits) / double(truth.size());
}

void ProbeConfig::validate() const {
  if (hidden < 1) throw ConfigError("probe hidden width must be positive");
  if (epochs < 0) throw ConfigError("probe epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("probe batch size must be positive");
  if (!(learning_rate > 0)) throw ConfigError("probe learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("probe moment coefficients must lie in [0, 1)");
  }
}

json to_json(const ProbeConfig& c) {
  return {{"hidden", c.hidden},       {"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2}};
}

ProbeConfig probe_config_from_json(const json& j, ProbeConfig c) {
  if (!j.is_object()) throw ConfigError("probe config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "hidden") c.hidden = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else throw ConfigError("unknown probe config key '" + key + "'");
    } catch (const json::exception&) {
      throw ConfigError("probe config key '" + key + "' has the wrong type");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Probe::Probe(Index input_dim, int classes, int hidden, Rng& rng)
    : classes_(classes),
      w1_("probe/w1", input_dim, hidden),
      b1_("probe/b1", 1, hidden),
      w2_("probe/w2", hidden, classes),
      b2_("probe/b2", 1, classes),
      mean_(Eigen::RowVectorXd::Zero(input_dim)),
      inv_scale_(Eigen::RowVectorXd::Ones(input_dim)) {
  fill_normal(w1_.value, std::sqrt(2.0 / double(input_dim)), rng);
  fill_normal(w2_.value, std::sqrt(1.0 / double(hidden)), rng);
}

void Probe::set_standardization(const MatrixX<double>& x) {
  mean_ = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean_).array().square().colwise().mean();
  inv_scale_.resize(x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const double sd = std::sqrt(var[c]);
    inv_scale_[c] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
}

MatrixX<double> Probe::standardize(const MatrixX<double>& x) const {
  if (x.cols() != mean_.size()) {
    throw ShapeError("probe expects " + std::to_string(mean_.size()) + " features, got " +
                     std::to_string(x.cols()));
  }
  return ((x.rowwise() - mean_).array().rowwise() * inv_scale_.array()).matrix();
}

MatrixX<double> Probe::forward_standardized(const MatrixX<double>& x,
                                            MatrixX<double>* hidden) const {
  MatrixX<double> h = (x * w1_.value).rowwise() + b1_.value.row(0);
  h = h.cwiseMax(0.0);
  MatrixX<double> out = (h * w2_.value).rowwise() + b2_.value.row(0);
  if (hidden) *hidden = std::move(h);
  return out;
}

MatrixX<double> Probe::logits(const MatrixX<double>& features) const {
  return forward_standardized(standardize(features), nullptr);
}

std::vector<int> Probe::predict(const MatrixX<double>& features) const {
  const MatrixX<double> l = logits(features);
  std::vector<int> out(std::size_t(l.rows()));
  for (Index i = 0; i < l.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < classes_; ++c) {
      if (l(i, c) > l(i, best)) best = c;
    }
    out[std::size_t(i)] = best;
  }
  return out;
}

double Probe::train_epoch(const MatrixX<double>& x, std::span<const int> labels, int batch_size,
                          Adam<double>& opt, Rng& rng) {
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::shuffle(order.begin(), order.end(), rng);
  double loss_sum = 0;
  int batches = 0;
  for (std::size_t start = 0; start < order.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(order.size(), start + std::size_t(batch_size));
    const std::span<const std::size_t> rows(order.data() + start, end - start);
    const MatrixX<double> xb = rows_of(x, rows);
    std::vector<int> yb(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) yb[i] = labels[rows[i]];

    MatrixX<double> h, g;
    const MatrixX<double> out = forward_standardized(xb, &h);
    loss_sum += softmax_xent(out, yb, g);
    ++batches;
    w2_.grad = h.transpose() * g;
    b2_.grad = g.colwise().sum();
    const MatrixX<double> gh = (g * w2_.value.transpose()).cwiseProduct(
        (h.array() > 0.0).cast<double>().matrix());
    w1_.grad = xb.transpose() * gh;
    b1_.grad = gh.colwise().sum();
    opt.step(parameters());
  }
  return batches ? loss_sum / batches : 0.0;
}

Probe train_probe(const MatrixX<double>& features, std::span<const int> labels,
                  const ProbeConfig& config, std::uint64_t seed) {
  config.validate();
  if (features.rows() != Index(labels.size())) {
    throw ContractError("one label per feature row required");
  }
  if (!features.allFinite()) throw NumericError("non-finite probe features");
  const int classes = class_count(labels);
  if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end()) {
    throw ConfigError("probe training needs at least two classes");
  }
  Rng rng = derive_rng(seed, {kProbeStream});
  Probe probe(features.cols(), classes, config.hidden, rng);
  probe.set_standardization(features);
  const MatrixX<double> x = probe.standardize(features);
  Adam<double> opt({config.learning_rate, config.beta1, config.beta2}, probe.parameters());
  for (int e = 0; e < config.epochs; ++e) {
    probe.train_epoch(x, labels, config.batch_size, opt, rng);
  }
  return probe;
}

std::vector<double> cross_validate(const MatrixX<double>& features, std::span<const int> labels,
                                   int k, const ProbeConfig& config, std::uint64_t seed) {
  const auto folds = kfold_split(labels, k, seed);
  std::vector<double> acc;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> train_rows;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) train_rows.insert(train_rows.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::vector<int> train_labels, test_labels;
    for (std::size_t i : train_rows) train_labels.push_back(labels[i]);
    for (std::size_t i : folds[f]) test_labels.push_back(labels[i]);
    const Probe probe = train_probe(rows_of(features, train_rows), train_labels, config,
                                    derive_rng(seed, {kProbeStream, f})());
    acc.push_back(top1_accuracy(probe.predict(rows_of(features, folds[f])), test_labels));
  }
  return acc;
}

// ---------------------------------------------------------------------------

MatrixX<double> extract_features(Discriminator<float>& disc, std::span<const VideoClip> clips) {
  constexpr std::size_t kChunk = 64;
  MatrixX<double> out(Index(clips.size()), disc.feature_dim());
  for (std::size_t start = 0; start < clips.size(); start += kChunk) {
    const std::size_t end = std::min(clips.size(), start + kChunk);
    const std::vector<VideoClip> chunk(clips.begin() + std::ptrdiff_t(start),
                                       clips.begin() + std::ptrdiff_t(end));
    const DiscriminatorOutput<float> o = disc.forward(to_activation<float>(chunk), Mode::eval);
    out.middleRows(Index(start), Index(end - start)) = o.features.cast<double>();
  }
  if (!out.allFinite()) throw NumericError("non-finite features extracted");
  return out;
}

FeatureSet extract_probe_features(GanState& state, const DatasetManifest& manifest) {
  if (state.model.clip != manifest.config.shape) {
    throw ConfigError("checkpoint expects clips of shape " + state.model.clip.str() +
                      ", dataset has " + manifest.config.shape.str());
  }
  FeatureSet set;
  std::vector<VideoClip> clips;
  for (Split split : {Split::probe_train, Split::probe_test}) {
    const auto members = manifest.split_indices(split);
    std::vector<std::size_t> positions(members.size());
    std::iota(positions.begin(), positions.end(), std::size_t(0));
    LabeledBatch batch = load_batch(manifest, split, positions);
    for (std::size_t i = 0; i < members.size(); ++i) {
      clips.push_back(std::move(batch.clips[i]));
      set.labels.push_back(static_cast<int>(batch.labels[i]));
      set.clips.push_back(manifest.clips[members[i]].path);
    }
  }
  set.values = extract_features(state.disc, clips);
  set.checkpoint_hash = hex64(parameter_hash(state));
  set.manifest_hash = manifest_hash(manifest);
  return set;
}

void save_feature_set(const fs::path& dir, const FeatureSet& set) {
  fs::create_directories(dir);
  std::string bytes;
  bytes.reserve(std::size_t(set.values.size()) * 4);
  for (Index r = 0; r < set.values.rows(); ++r) {
    for (Index c = 0; c < set.values.cols(); ++c) {
      const float v = static_cast<float>(set.values(r, c));
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      for (int b = 0; b < 4; ++b) bytes.push_back(char((bits >> (8 * b)) & 0xff));
    }
  }
  write_text_atomic(dir / "features.f32", bytes);
  json clips = json::array();
  for (std::size_t i = 0; i < set.clips.size(); ++i) {
    clips.push_back({{"path", set.clips[i]}, {"activity_class", set.labels[i]}});
  }
  const json sidecar = {{"format", "ssgan-features"},
                        {"dtype", "float32"},
                        {"order", "row-major"},
                        {"count", set.values.rows()},
                        {"dim", set.values.cols()},
                        {"checkpoint_hash", set.checkpoint_hash},
                        {"manifest_hash", set.manifest_hash},
                        {"clips", clips}};
  write_text_atomic(dir / "features.json", sidecar.dump(1) + "\n");
}

FeatureSet load_feature_set(const fs::path& dir) {
  FeatureSet set;
  json sidecar;
  try {
    sidecar = json::parse(read_text(dir / "features.json"));
    set.checkpoint_hash = sidecar.at("checkpoint_hash").get<std::string>();
    set.manifest_hash = sidecar.at("manifest_hash").get<std::string>();
    for (const json& c : sidecar.at("clips")) {
      set.clips.push_back(c.at("path").get<std::string>());
      set.labels.push_back(c.at("activity_class").get<int>());
    }
  } catch (const json::exception& e) {
    throw LoadError("malformed feature sidecar in " + dir.string() + ": " + e.what());
  }
  const Index rows = sidecar.at("count").get<Index>(), cols = sidecar.at("dim").get<Index>();
  if (Index(set.clips.size()) != rows) {
    throw LoadError("feature sidecar in " + dir.string() + " lists the wrong number of clips");
  }
  const std::string bytes = read_text(dir / "features.f32");
  if (Index(bytes.size()) != rows * cols * 4) {
    throw LoadError("feature file " + (dir / "features.f32").string() + " has " +
                    std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(rows * cols * 4));
  }
  set.values.resize(rows, cols);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c, p += 4) {
      const std::uint32_t bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                                 std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
      float v;
      std::memcpy(&v, &bits, 4);
      set.values(r, c) = v;
    }
  }
  return set;
}

// ---------------------------------------------------------------------------

json EvalReport::to_json() const {
  return {{"variant", variant},     {"seed", seed},  {"folds", folds},
          {"mean", mean},           {"std", std},    {"checkpoint_hash", checkpoint_hash},
          {"config", config.is_null() ? json::object() : config}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  try {
    r.variant = j.at("variant").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.folds = j.at("folds").get<std::vector<double>>();
    r.mean = j.at("mean").get<double>();
    r.std = j.at("std").get<double>();
    r.checkpoint_hash = j.value("checkpoint_hash", std::string());
    r.config = j.value("config", json::object());
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

EvalReport summarize_folds(std::vector<double> folds) {
  if (folds.empty()) throw ContractError("no folds to summarize");
  EvalReport r;
  double sum = 0;
  for (double f : folds) sum += f;
  r.mean = sum / double(folds.size());
  double var = 0;
  for (double f : folds) var += (f - r.mean) * (f - r.mean);
  r.std = std::sqrt(var / double(folds.size()));
  r.folds = std::move(folds);
  return r;
}

EvalReport evaluate_features(const FeatureSet& features, const ProbeConfig& config,
                             std::uint64_t seed, int k) {
  EvalReport r = summarize_folds(cross_validate(features.values, features.labels, k, config, seed));
  r.seed = seed;
  r.checkpoint_hash = features.checkpoint_hash;
  r.config = {{"probe", to_json(config)}, {"folds", k}};
  return r;
}

EvalReport evaluate_checkpoint(const fs::path& checkpoint, const DatasetManifest& manifest,
                               const ProbeConfig& config, std::uint64_t seed,
                               FeatureSet* features_out, int k) {
  CheckpointInfo info;
  GanState state = load_checkpoint(checkpoint, &info);
  const std::uint64_t before = parameter_hash(state);
  FeatureSet features = extract_probe_features(state, manifest);
  if (parameter_hash(state) != before) {
    throw ContractError("feature extraction modified the checkpoint parameters");
  }
  EvalReport r = evaluate_features(features, config, seed, k);
  r.config["train"] = to_json(info.config);
  r.config["epoch"] = info.epoch;
  if (features_out) *features_out = std::move(features);
  return r;
}

}  // namespace ssgan
