#pragma once

#include "ssgan/downstream.hpp"
#include "ssgan/synthdata.hpp"
#include "ssgan/training.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ssgan {

using nlohmann::json;

// Variant names. Canonical: "GAN", "GAN+Rotation", "GAN+Spatial",
// "GAN+Temporal", "GAN+SpatioTemporal", otherwise "GAN+" joined from
// Rotate, Translate, Shear, Temporal. Parsing also accepts the long and
// short family spellings in any order ("GAN+Rotate+Translate+Shear").
std::string variant_name(FamilySet families);
FamilySet variant_families(std::string_view name);
std::vector<std::string> table1_variants();
std::vector<std::string> table2_variants();
/// Comma-separated names, or the presets "table1" / "table2".
std::vector<std::string> parse_variant_list(std::string_view list);

/// Families from the variant; the plain GAN also gets alpha = beta = 0.
TrainConfig train_config_for_variant(TrainConfig base, FamilySet families);

struct ExperimentConfig {
  std::string variant = "GAN+SpatioTemporal";
  TrainConfig train;
  DataConfig data;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  ProbeConfig probe;
  int folds = 5;
  std::filesystem::path out = "runs";

  /// Checks the variant against train.families and everything else.
  void validate() const;
  json to_json() const;
  /// Missing keys keep the defaults of `base`; unknown keys are rejected.
  static ExperimentConfig from_json(const json& j, ExperimentConfig base);
  static ExperimentConfig from_json(const json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// out/<variant>/<seed>
std::filesystem::path run_directory(const std::filesystem::path& out, std::string_view variant,
                                    std::uint64_t seed);

struct CellResult {
  std::string variant;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalReport report;

  json to_json() const;
  static CellResult from_json(const json& j);
};

struct CellOptions {
  /// Reuse eval.json from an earlier identical run instead of retraining.
  bool reuse = true;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// train -> extract -> evaluate for one variant and seed. Failures are
/// captured in the result rather than thrown.
CellResult run_cell(const DatasetManifest& manifest, const ExperimentConfig& config,
                    std::string_view variant, std::uint64_t seed, const CellOptions& options = {});

struct VariantSummary {
  std::string variant;
  int seeds = 0;
  int failed = 0;
  double mean = 0.0;  // over every fold of every successful seed
  double std = 0.0;   // population deviation over the same folds
};

/// One row per variant in first-seen order.
std::vector<VariantSummary> summarize_variants(std::span<const CellResult> cells);
/// "Method | Accuracy" table in percent, mean ± std.
std::string format_table(std::span<const VariantSummary> rows);

std::vector<CellResult> read_results(const std::filesystem::path& path);

/// Loss-curve and accuracy-bar SVGs plus summary.txt under `out_dir`.
/// Loss curves come from each cell's metrics.jsonl under `runs_root` when
/// present. Returns the summary text.
std::string write_report(std::span<const CellResult> cells, const std::filesystem::path& runs_root,
                         const std::filesystem::path& out_dir);

}  // namespace ssgan
