#pragma once

#include "ssgan/objective.hpp"
#include "ssgan/optimizer.hpp"
#include "ssgan/synthdata.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace ssgan {

struct TrainConfig {
  double alpha = 0.25;
  double beta = 1.0;
  double g_lr = 1e-4;
  double d_lr = 4e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int epochs = 30;
  int batch_size = 32;
  FamilySet families = FamilySet::all();
  std::uint64_t seed = 0;
  int checkpoint_every = 5;
  double holdout_fraction = 0.05;
  int base_width = 16;
  int latent_dim = 128;

  /// Empty family set means the plain adversarial baseline.
  bool aux_enabled() const { return !families.empty(); }
  LossWeights weights() const { return {alpha, beta}; }
  void validate() const;
};

/// Everything a checkpoint restores: both networks, their spectral-norm
/// vectors, both optimizers and the number of completed epochs.
struct GanState {
  ModelConfig model;
  TrainConfig config;
  Discriminator<float> disc;
  Generator<float> gen;
  Adam<float> d_opt;
  Adam<float> g_opt;
  int epoch = 0;
};

/// Fresh models for `config` on clips of `clip` shape. Initialization draws
/// from its own stream of the run seed.
GanState init_state(const TrainConfig& config, const ClipShape& clip);

/// FNV-1a over generator then discriminator parameter bytes.
std::uint64_t parameter_hash(GanState& state);
std::string hex64(std::uint64_t v);

/// Per-step random sources. Noise and transformation draws come from
/// separate streams so enabling the auxiliary path never shifts the noise.
struct StepStreams {
  Rng noise;
  Rng transforms;
  static StepStreams for_step(std::uint64_t seed, int epoch, std::int64_t step);
};

/// One discriminator update then one generator update (on fresh fakes).
/// Throws NumericError with the loss breakdown if any loss is non-finite.
template <AuxPath Path>
LossBreakdown train_step(GanState& state, const Activation<float>& real, StepStreams& streams);

/// Dispatches on config.aux_enabled().
LossBreakdown train_step(GanState& state, const Activation<float>& real, StepStreams& streams);

struct EpochMetrics {
  int epoch = 0;
  LossBreakdown losses;                 // means over the epoch's steps
  std::optional<double> aux_accuracy;   // held-back transformed real clips; none for the baseline
  double wall_seconds = 0.0;
};

std::string metrics_line(const EpochMetrics& m);

struct TrainOptions {
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> resume;
  std::function<void(const EpochMetrics&)> on_epoch;
  /// Called after every step; returning false stops training early (tests).
  std::function<bool(std::int64_t step, const LossBreakdown&)> on_step;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  int epochs_completed = 0;
  std::vector<EpochMetrics> history;  // epochs run by this call
};

/// Epoch loop over the pretrain split minus a fixed held-back slice.
/// Writes run_dir/metrics.jsonl, run_dir/timing.jsonl and
/// run_dir/checkpoints/epoch-NNNN.ssgc plus final.ssgc.
TrainResult train(const DatasetManifest& manifest, const TrainConfig& config,
                  const TrainOptions& options);

/// Aux-head top-1 on transformed clips under the family mask.
double aux_accuracy(Discriminator<float>& disc, std::span<const VideoClip> clips,
                    std::span<const TransformLabel> labels, FamilySet families);

}  // namespace ssgan
