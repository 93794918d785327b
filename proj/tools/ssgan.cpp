// ssgan: dataset synthesis, training, feature extraction, probing and the
// ablation matrix.
//
// Exit codes: 0 success, 1 usage, 2 config or parameter error, 3 load or
// I/O error, 4 numeric failure, 5 anything else (including failed ablation
// cells).

#include "ssgan/downstream.hpp"
#include "ssgan/experiment.hpp"
#include "ssgan/serialization.hpp"
#include "ssgan/synthdata.hpp"
#include "ssgan/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using namespace ssgan;
namespace fs = std::filesystem;

namespace {

enum Exit : int { ok = 0, usage = 1, config = 2, data = 3, numeric = 4, other = 5 };

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string variant;
  std::optional<int> epochs;
  std::optional<std::string> families;
  std::string data;
};

void add_common(CLI::App* app, Common& c, bool with_variant) {
  app->add_option("--config", c.config_path, "JSON experiment config; flags override it");
  app->add_option("--seed", c.seed, "Seed");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--epochs", c.epochs, "Training epochs");
  if (with_variant) {
    app->add_option("--variant", c.variant, "Variant name, e.g. GAN+Temporal");
    app->add_option("--families", c.families,
                    "Comma list of rotation,translation,shear,temporal (or none)");
  }
}

FamilySet parse_families_flag(const std::string& s) {
  if (s == "none" || s.empty()) return {};
  if (s == "all") return FamilySet::all();
  return FamilySet::parse(s);
}

/// File config first, then flags on top.
ExperimentConfig resolve(const Common& c) {
  ExperimentConfig e = c.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config_path);
  if (c.epochs) e.train.epochs = *c.epochs;
  if (!c.variant.empty() && c.families) {
    if (!(variant_families(c.variant) == parse_families_flag(*c.families))) {
      throw ConfigError("--variant " + c.variant + " disagrees with --families " + *c.families);
    }
  }
  FamilySet families = variant_families(e.variant);
  if (c.families) families = parse_families_flag(*c.families);
  if (!c.variant.empty()) families = variant_families(c.variant);
  e.variant = variant_name(families);
  e.train = train_config_for_variant(e.train, families);
  if (c.seed) {
    e.train.seed = *c.seed;
    e.seeds = {*c.seed};
  }
  if (!c.out.empty()) e.out = c.out;
  return e;
}

DatasetManifest open_manifest(const std::string& data) {
  fs::path p = data.empty() ? fs::path("data") : fs::path(data);
  if (fs::is_directory(p)) p /= "manifest.json";
  return load_manifest(p);
}

void print_epoch(const EpochMetrics& m) {
  std::cout << metrics_line(m) << std::endl;
}

// --- commands -------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::optional<int> clips, frames, size, channels;
};

int cmd_synth(const SynthArgs& a) {
  ExperimentConfig e = a.common.config_path.empty() ? ExperimentConfig{}
                                                     : ExperimentConfig::load(a.common.config_path);
  DataConfig d = e.data;
  if (a.common.seed) d.seed = *a.common.seed;
  if (a.clips) d.clips = *a.clips;
  if (a.frames) d.shape.frames = *a.frames;
  if (a.channels) d.shape.channels = *a.channels;
  if (a.size) d.shape.height = d.shape.width = *a.size;
  const fs::path out = a.common.out.empty() ? fs::path("data") : fs::path(a.common.out);
  const DatasetManifest m = build_dataset(d, out);
  const SplitCounts s = split_counts(d.clips);
  auto pct = [&](int n) { return 100.0 * n / d.clips; };
  std::printf("manifest: %s\n", (out / "manifest.json").string().c_str());
  std::printf("pretrain: %d (%.0f%%)\n", s.pretrain, pct(s.pretrain));
  std::printf("probe-train: %d (%.0f%%)\n", s.probe_train, pct(s.probe_train));
  std::printf("probe-test: %d (%.0f%%)\n", s.probe_test, pct(s.probe_test));
  std::printf("manifest hash: %s\n", manifest_hash(m).c_str());
  return ok;
}

struct TrainArgs {
  Common common;
  std::string resume;
  bool overwrite = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const ExperimentConfig e = resolve(a.common);
  e.validate();
  const DatasetManifest m = open_manifest(a.common.data);
  const fs::path dir = run_directory(e.out, e.variant, e.train.seed);
  if (a.resume.empty() && !a.overwrite && fs::exists(dir / "checkpoints/final.ssgc")) {
    std::cerr << "ssgan: " << (dir / "checkpoints/final.ssgc").string()
              << " already exists; pass --overwrite or --resume\n";
    return config;
  }
  TrainOptions opts;
  opts.run_dir = dir;
  if (!a.resume.empty()) opts.resume = fs::path(a.resume);
  if (!a.quiet) opts.on_epoch = print_epoch;
  const TrainResult r = train(m, e.train, opts);
  std::cout << "variant: " << e.variant << "\n";
  std::cout << "final checkpoint: " << r.final_checkpoint.string() << "\n";
  return ok;
}

struct ExtractArgs {
  std::string checkpoint, data, out;
};

int cmd_extract(const ExtractArgs& a) {
  const DatasetManifest m = open_manifest(a.data);
  GanState s = load_checkpoint(a.checkpoint);
  const FeatureSet f = extract_probe_features(s, m);
  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() / "features" : fs::path(a.out);
  save_feature_set(out, f);
  std::cout << "features: " << out.string() << " (" << f.values.rows() << " x " << f.values.cols()
            << ")\n";
  return ok;
}

struct ProbeArgs {
  Common common;
  std::string features, checkpoint;
  std::optional<int> folds;
};

int cmd_probe(const ProbeArgs& a) {
  ExperimentConfig e = a.common.config_path.empty() ? ExperimentConfig{}
                                                     : ExperimentConfig::load(a.common.config_path);
  if (a.common.epochs) e.probe.epochs = *a.common.epochs;
  if (a.folds) e.folds = *a.folds;
  e.probe.validate();
  const std::uint64_t seed = a.common.seed.value_or(e.seeds.front());
  EvalReport r;
  if (!a.features.empty()) {
    r = evaluate_features(load_feature_set(a.features), e.probe, seed, e.folds);
  } else if (!a.checkpoint.empty()) {
    r = evaluate_checkpoint(a.checkpoint, open_manifest(a.common.data), e.probe, seed, nullptr,
                            e.folds);
  } else {
    throw ConfigError("probe needs --features or --checkpoint");
  }
  const std::string text = r.to_json().dump(2) + "\n";
  if (!a.common.out.empty()) write_text_atomic(a.common.out, text);
  std::cout << text;
  return ok;
}

struct AblateArgs {
  Common common;
  std::string variants = "table1";
  std::string seeds;
  bool no_reuse = false;
};

int cmd_ablate(const AblateArgs& a) {
  ExperimentConfig e = resolve(a.common);
  if (!a.seeds.empty()) {
    e.seeds.clear();
    std::string rest = a.seeds;
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      const auto comma = rest.find(',', pos);
      const std::string item = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      if (!item.empty()) {
        try {
          e.seeds.push_back(std::stoull(item));
        } catch (const std::exception&) {
          throw ConfigError("bad seed '" + item + "'");
        }
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  } else if (a.common.seed) {
    e.seeds = {*a.common.seed};
  }
  const std::vector<std::string> variants = parse_variant_list(a.variants);
  for (const auto& v : variants) {
    ExperimentConfig check = e;
    check.variant = v;
    check.train = train_config_for_variant(e.train, variant_families(v));
    check.validate();
  }
  const DatasetManifest m = open_manifest(a.common.data);
  fs::create_directories(e.out);
  const fs::path results = e.out / "results.jsonl";
  std::string lines;
  std::vector<CellResult> cells;
  CellOptions opts;
  opts.reuse = !a.no_reuse;
  opts.on_epoch = [](const EpochMetrics& m) { std::cerr << metrics_line(m) << std::endl; };
  for (const auto& v : variants) {
    for (std::uint64_t seed : e.seeds) {
      std::cerr << "[" << v << " seed " << seed << "]\n";
      CellResult c = run_cell(m, e, v, seed, opts);
      if (!c.ok) std::cerr << "ssgan: cell " << v << "/" << seed << " failed: " << c.error << "\n";
      lines += c.to_json().dump() + "\n";
      write_text_atomic(results, lines);
      cells.push_back(std::move(c));
    }
  }
  const std::vector<VariantSummary> rows = summarize_variants(cells);
  const std::string table = format_table(rows);
  write_text_atomic(e.out / "table.txt", table);
  std::cout << table;
  for (const auto& c : cells) {
    if (!c.ok) return other;
  }
  return ok;
}

struct ReportArgs {
  std::string results, runs, out;
};

int cmd_report(const ReportArgs& a) {
  const fs::path results = a.results.empty() ? fs::path("runs/results.jsonl") : fs::path(a.results);
  const std::vector<CellResult> cells = read_results(results);
  const fs::path runs = a.runs.empty() ? results.parent_path() : fs::path(a.runs);
  const fs::path out = a.out.empty() ? runs / "report" : fs::path(a.out);
  std::cout << write_report(cells, runs, out);
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised video GAN pretraining and evaluation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate the synthetic clip dataset");
  add_common(s, synth.common, false);
  s->add_option("--clips", synth.clips, "Number of clips (multiple of 25, at least 75)");
  s->add_option("--frames", synth.frames, "Frames per clip");
  s->add_option("--size", synth.size, "Frame height and width");
  s->add_option("--channels", synth.channels, "Channels");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one variant");
  add_common(t, tr.common, true);
  t->add_option("--data", tr.common.data, "Dataset directory or manifest.json");
  t->add_option("--resume", tr.resume, "Checkpoint to continue from");
  t->add_flag("--overwrite", tr.overwrite, "Replace an existing finished run");
  t->add_flag("--quiet", tr.quiet, "Do not print per-epoch metrics");

  ExtractArgs ex;
  auto* x = app.add_subcommand("extract", "Extract probe features from a checkpoint");
  x->add_option("--checkpoint", ex.checkpoint, "Checkpoint file")->required();
  x->add_option("--data", ex.data, "Dataset directory or manifest.json");
  x->add_option("--out", ex.out, "Feature directory");

  ProbeArgs pr;
  auto* p = app.add_subcommand("probe", "Cross-validate the probe on features");
  add_common(p, pr.common, false);
  p->add_option("--features", pr.features, "Feature directory from extract");
  p->add_option("--checkpoint", pr.checkpoint, "Checkpoint (features extracted on the fly)");
  p->add_option("--data", pr.common.data, "Dataset directory or manifest.json");
  p->add_option("--folds", pr.folds, "Cross-validation folds");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train, extract and probe every variant and seed");
  add_common(a, ab.common, true);
  a->add_option("--data", ab.common.data, "Dataset directory or manifest.json");
  a->add_option("--variants", ab.variants, "Comma list of variants, or table1 / table2");
  a->add_option("--seeds", ab.seeds, "Comma list of seeds");
  a->add_flag("--no-reuse", ab.no_reuse, "Retrain cells that already have eval.json");

  ReportArgs re;
  auto* r = app.add_subcommand("report", "Plots and summary from a results table");
  r->add_option("--results", re.results, "results.jsonl from ablate");
  r->add_option("--runs", re.runs, "Run root holding the metrics streams");
  r->add_option("--out", re.out, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(tr);
    if (*x) return cmd_extract(ex);
    if (*p) return cmd_probe(pr);
    if (*a) return cmd_ablate(ab);
    if (*r) return cmd_report(re);
  } catch (const ConfigError& e) {
    std::cerr << "ssgan: config error: " << e.what() << "\n";
    return config;
  } catch (const ParameterError& e) {
    std::cerr << "ssgan: parameter error: " << e.what() << "\n";
    return config;
  } catch (const LoadError& e) {
    std::cerr << "ssgan: load error: " << e.what() << "\n";
    return data;
  } catch (const IoError& e) {
    std::cerr << "ssgan: I/O error: " << e.what() << "\n";
    return data;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "ssgan: I/O error: " << e.what() << "\n";
    return data;
  } catch (const NumericError& e) {
    std::cerr << "ssgan: numeric failure: " << e.what() << "\n";
    return numeric;
  } catch (const std::exception& e) {
    std::cerr << "ssgan: " << e.what() << "\n";
    return other;
  }
  return usage;
}
