#include "ssgan/training.hpp"

#include "ssgan/serialization.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ssgan {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;          // "init"
constexpr std::uint64_t kNoiseStream = 0x6e6f6973;         // "nois"
constexpr std::uint64_t kTransformStream = 0x7866726d;     // "xfrm"
constexpr std::uint64_t kShuffleStream = 0x73687566;       // "shuf"
constexpr std::uint64_t kHoldoutStream = 0x686f6c64;       // "hold"
constexpr std::uint64_t kHoldoutLabelStream = 0x686c626c;  // "hlbl"

std::string breakdown_text(const LossBreakdown& l) {
  std::ostringstream out;
  out << "adversarial_g=" << l.adversarial_g << " adversarial_d=" << l.adversarial_d
      << " aux_g=" << l.aux_g << " aux_d=" << l.aux_d << " total_g=" << l.total_g
      << " total_d=" << l.total_d;
  return out.str();
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.adversarial_g) && std::isfinite(l.adversarial_d) &&
         std::isfinite(l.aux_g) && std::isfinite(l.aux_d) && std::isfinite(l.total_g) &&
         std::isfinite(l.total_d);
}

void check_parameters(const std::vector<Parameter<float>*>& params, const LossBreakdown& l) {
  for (const auto* p : params) {
    if (!p->value.allFinite()) {
      throw NumericError("parameter " + p->name + " became non-finite (" + breakdown_text(l) + ")");
    }
  }
}

/// Rewrites `path` keeping only lines whose "epoch" is at most `epoch`.
void truncate_jsonl(const fs::path& path, int epoch) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      break;  // a torn final line from an interrupted run
    }
    if (j.value("epoch", 0) <= epoch) kept += line + "\n";
  }
  in.close();
  write_text_atomic(path, kept);
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for appending");
  out << line << '\n';
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

void require_compatible(const TrainConfig& saved, const TrainConfig& wanted, const fs::path& path) {
  TrainConfig a = saved, b = wanted;
  a.epochs = b.epochs = 0;
  a.checkpoint_every = b.checkpoint_every = 1;
  if (to_json(a) != to_json(b)) {
    throw ConfigError("checkpoint " + path.string() +
                      " was trained with a different configuration: " + to_json(saved).dump());
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (!(std::isfinite(alpha) && alpha >= 0)) fail("alpha must be a finite non-negative number");
  if (!(std::isfinite(beta) && beta >= 0)) fail("beta must be a finite non-negative number");
  if (!(g_lr > 0 && std::isfinite(g_lr))) fail("g_lr must be positive");
  if (!(d_lr > 0 && std::isfinite(d_lr))) fail("d_lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) fail("beta2 must lie in [0, 1)");
  if (epochs < 0) fail("epochs must be non-negative");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (checkpoint_every < 1) fail("checkpoint_every must be at least 1");
  if (!(holdout_fraction >= 0 && holdout_fraction < 0.5)) fail("holdout_fraction must lie in [0, 0.5)");
  if (base_width < 1) fail("base_width must be at least 1");
  if (latent_dim < 1) fail("latent_dim must be at least 1");
}

GanState init_state(const TrainConfig& config, const ClipShape& clip) {
  config.validate();
  GanState state;
  state.config = config;
  state.model = default_model_config(clip, config.base_width, config.latent_dim);
  Rng rng = derive_rng(config.seed, {kInitStream});
  state.gen = Generator<float>(state.model, rng);
  state.disc = Discriminator<float>(state.model, rng);
  state.g_opt = Adam<float>({config.g_lr, config.beta1, config.beta2}, state.gen.parameters());
  state.d_opt = Adam<float>({config.d_lr, config.beta1, config.beta2}, state.disc.parameters());
  state.epoch = 0;
  return state;
}

std::uint64_t parameter_hash(GanState& state) {
  std::uint64_t h = fnv1a(nullptr, 0);
  auto mix = [&h](const std::vector<Parameter<float>*>& params) {
    for (const auto* p : params) {
      h = fnv1a(p->value.data(), std::size_t(p->value.size()) * sizeof(float), h);
    }
  };
  mix(state.gen.parameters());
  mix(state.disc.parameters());
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

StepStreams StepStreams::for_step(std::uint64_t seed, int epoch, std::int64_t step) {
  return {derive_rng(seed, {kNoiseStream, std::uint64_t(epoch), std::uint64_t(step)}),
          derive_rng(seed, {kTransformStream, std::uint64_t(epoch), std::uint64_t(step)})};
}

template <AuxPath Path>
LossBreakdown train_step(GanState& state, const Activation<float>& real, StepStreams& streams) {
  const Index n = real.geo.batch;
  const ClipShape shape = state.model.clip;
  const LossWeights weights = state.config.weights();
  const FamilySet families = state.config.families;
  ClassMask mask{};
  if constexpr (Path == AuxPath::enabled) mask = class_mask(families);
  LossBreakdown losses;

  const MatrixX<float> z_d = sample_latent<float>(n, state.model.gen.latent_dim, streams.noise);
  const Activation<float> fake = state.gen.forward(z_d, Mode::train);
  TransformedBatch<float> real_t;
  if constexpr (Path == AuxPath::enabled) {
    const std::vector<TransformLabel> labels = sample_labels(n, families, shape, streams.transforms);
    real_t = transform_batch(real, labels);
  }
  state.disc.zero_grad();
  discriminator_objective<Path, float>(state.disc, real, fake, &real_t, weights, mask, Mode::train,
                                       losses);
  if (!finite(losses)) throw NumericError("non-finite discriminator loss (" + breakdown_text(losses) + ")");
  state.d_opt.step(state.disc.parameters());
  check_parameters(state.disc.parameters(), losses);

  const MatrixX<float> z_g = sample_latent<float>(n, state.model.gen.latent_dim, streams.noise);
  std::vector<TransformLabel> fake_labels;
  if constexpr (Path == AuxPath::enabled) {
    fake_labels = sample_labels(n, families, shape, streams.transforms);
  }
  state.gen.zero_grad();
  generator_objective<Path, float>(state.gen, state.disc, z_g, fake_labels, weights, mask, losses);
  if (!finite(losses)) throw NumericError("non-finite generator loss (" + breakdown_text(losses) + ")");
  state.g_opt.step(state.gen.parameters());
  check_parameters(state.gen.parameters(), losses);
  return losses;
}

template LossBreakdown train_step<AuxPath::enabled>(GanState&, const Activation<float>&, StepStreams&);
template LossBreakdown train_step<AuxPath::disabled>(GanState&, const Activation<float>&, StepStreams&);

LossBreakdown train_step(GanState& state, const Activation<float>& real, StepStreams& streams) {
  return state.config.aux_enabled() ? train_step<AuxPath::enabled>(state, real, streams)
                                    : train_step<AuxPath::disabled>(state, real, streams);
}

std::string metrics_line(const EpochMetrics& m) {
  json j = {{"epoch", m.epoch},
            {"adversarial_g", m.losses.adversarial_g},
            {"adversarial_d", m.losses.adversarial_d},
            {"aux_g", m.losses.aux_g},
            {"aux_d", m.losses.aux_d},
            {"total_g", m.losses.total_g},
            {"total_d", m.losses.total_d},
            {"aux_accuracy", m.aux_accuracy ? json(*m.aux_accuracy) : json(nullptr)}};
  return j.dump();
}

double aux_accuracy(Discriminator<float>& disc, std::span<const VideoClip> clips,
                    std::span<const TransformLabel> labels, FamilySet families) {
  if (clips.size() != labels.size()) throw ContractError("one label per clip required");
  if (clips.empty()) throw ContractError("accuracy over an empty set");
  const ClassMask mask = class_mask(families);
  constexpr std::size_t kChunk = 64;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < clips.size(); start += kChunk) {
    const std::size_t end = std::min(clips.size(), start + kChunk);
    std::vector<VideoClip> chunk;
    for (std::size_t i = start; i < end; ++i) {
      if (!mask[labels[i].class_id]) {
        throw ContractError("label class " + std::to_string(labels[i].class_id) + " is disabled");
      }
      chunk.push_back(apply(labels[i], clips[i]));
    }
    const DiscriminatorOutput<float> out = disc.forward(to_activation<float>(chunk), Mode::eval);
    for (std::size_t i = start; i < end; ++i) {
      const VectorX<float> row = out.transform_logits.row(Index(i - start)).transpose();
      if (masked_argmax<float>(row, mask) == labels[i].class_id) ++correct;
    }
  }
  return double(correct) / double(clips.size());
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  const std::vector<std::size_t> pretrain = manifest.split_indices(Split::pretrain);
  const std::size_t total = pretrain.size();
  const auto holdout_count = static_cast<std::size_t>(std::lround(double(total) * config.holdout_fraction));
  if (total - holdout_count < std::size_t(config.batch_size)) {
    throw ConfigError("pretraining split has " + std::to_string(total - holdout_count) +
                      " clips after holdout, fewer than one batch of " +
                      std::to_string(config.batch_size));
  }

  // Fixed held-back slice and its fixed transformations.
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t(0));
  Rng holdout_rng = derive_rng(config.seed, {kHoldoutStream});
  std::shuffle(order.begin(), order.end(), holdout_rng);
  std::vector<std::size_t> holdout(order.begin(), order.begin() + std::ptrdiff_t(holdout_count));
  std::vector<std::size_t> train_pos(order.begin() + std::ptrdiff_t(holdout_count), order.end());
  std::sort(holdout.begin(), holdout.end());
  std::sort(train_pos.begin(), train_pos.end());

  std::vector<std::size_t> all(total);
  std::iota(all.begin(), all.end(), std::size_t(0));
  const LabeledBatch data = load_batch(manifest, Split::pretrain, all);
  const ClipShape shape = manifest.config.shape;

  std::vector<VideoClip> holdout_clips;
  std::vector<TransformLabel> holdout_labels;
  if (config.aux_enabled() && holdout_count > 0) {
    for (std::size_t p : holdout) holdout_clips.push_back(data.clips[p]);
    Rng label_rng = derive_rng(config.seed, {kHoldoutLabelStream});
    holdout_labels = sample_labels(Index(holdout_count), config.families, shape, label_rng);
  }

  GanState state;
  if (options.resume) {
    CheckpointInfo info;
    state = load_checkpoint(*options.resume, &info);
    require_compatible(info.config, config, *options.resume);
    if (state.model.clip != shape) {
      throw ConfigError("checkpoint clip shape " + state.model.clip.str() +
                        " does not match the dataset's " + shape.str());
    }
    state.config = config;
  } else {
    state = init_state(config, shape);
  }

  const fs::path run_dir = options.run_dir;
  const fs::path ckpt_dir = run_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  const fs::path metrics_path = run_dir / "metrics.jsonl";
  const fs::path timing_path = run_dir / "timing.jsonl";
  if (options.resume) {
    truncate_jsonl(metrics_path, state.epoch);
    truncate_jsonl(timing_path, state.epoch);
  } else {
    write_text_atomic(metrics_path, "");
    write_text_atomic(timing_path, "");
  }
  const json extra = {{"manifest_hash", manifest_hash(manifest)}};
  auto checkpoint_path = [&](int epoch) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch-%04d.ssgc", epoch);
    return ckpt_dir / name;
  };

  TrainResult result;
  const std::int64_t steps = std::int64_t(train_pos.size()) / config.batch_size;
  bool stopped = false;
  if (state.epoch == 0) save_checkpoint(checkpoint_path(0), state, extra);

  for (int epoch = state.epoch + 1; epoch <= config.epochs && !stopped; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> perm = train_pos;
    Rng shuffle_rng = derive_rng(config.seed, {kShuffleStream, std::uint64_t(epoch)});
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);

    LossBreakdown sum;
    std::int64_t done = 0;
    for (std::int64_t s = 0; s < steps; ++s) {
      std::vector<VideoClip> batch;
      batch.reserve(std::size_t(config.batch_size));
      for (int i = 0; i < config.batch_size; ++i) {
        batch.push_back(data.clips[perm[std::size_t(s * config.batch_size + i)]]);
      }
      StepStreams streams = StepStreams::for_step(config.seed, epoch, s);
      const LossBreakdown l = train_step(state, to_activation<float>(batch), streams);
      sum.adversarial_g += l.adversarial_g;
      sum.adversarial_d += l.adversarial_d;
      sum.aux_g += l.aux_g;
      sum.aux_d += l.aux_d;
      sum.total_g += l.total_g;
      sum.total_d += l.total_d;
      ++done;
      if (options.on_step && !options.on_step((epoch - 1) * steps + s, l)) {
        stopped = true;
        break;
      }
    }
    if (stopped) break;

    EpochMetrics m;
    m.epoch = epoch;
    const double inv = 1.0 / double(done);
    m.losses = {sum.adversarial_g * inv, sum.adversarial_d * inv, sum.aux_g * inv,
                sum.aux_d * inv,         sum.total_g * inv,       sum.total_d * inv};
    if (!holdout_clips.empty()) {
      m.aux_accuracy = aux_accuracy(state.disc, holdout_clips, holdout_labels, config.families);
    }
    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.epoch = epoch;

    append_line(metrics_path, metrics_line(m));
    append_line(timing_path, json{{"epoch", epoch}, {"wall_seconds", m.wall_seconds}}.dump());
    if (epoch % config.checkpoint_every == 0 || epoch == config.epochs) {
      save_checkpoint(checkpoint_path(epoch), state, extra);
    }
    result.history.push_back(m);
    if (options.on_epoch) options.on_epoch(m);
  }

  // A run cut short mid-epoch leaves no final checkpoint.
  if (!stopped) {
    result.final_checkpoint = ckpt_dir / "final.ssgc";
    save_checkpoint(result.final_checkpoint, state, extra);
  }
  result.epochs_completed = state.epoch;
  return result;
}

}  // namespace ssgan
