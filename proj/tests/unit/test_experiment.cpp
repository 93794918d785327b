#include "doctest.h"

#include "helpers.hpp"
#include "ssgan/experiment.hpp"
#include "ssgan/serialization.hpp"

#include <set>

using namespace ssgan;
namespace fs = std::filesystem;

namespace {

std::vector<FamilySet> all_subsets() {
  std::vector<FamilySet> out;
  const Family fams[] = {Family::rotation, Family::translation, Family::shear, Family::temporal};
  for (int bits = 0; bits < 16; ++bits) {
    FamilySet s;
    for (int i = 0; i < 4; ++i) {
      if (bits & (1 << i)) s.insert(fams[i]);
    }
    out.push_back(s);
  }
  return out;
}

CellResult cell(const std::string& variant, std::uint64_t seed, std::vector<double> folds) {
  CellResult c;
  c.variant = variant;
  c.seed = seed;
  c.ok = true;
  c.report = summarize_folds(std::move(folds));
  return c;
}

ExperimentConfig tiny_experiment(const fs::path& out) {
  ExperimentConfig e;
  e.train.base_width = 4;
  e.train.latent_dim = 16;
  e.train.batch_size = 8;
  e.train.epochs = 1;
  e.train.checkpoint_every = 1;
  e.probe.epochs = 5;
  e.seeds = {0};
  e.out = out;
  return e;
}

}  // namespace

TEST_CASE("variant names are a bijection over family subsets") {
  std::set<std::string> names;
  for (const FamilySet f : all_subsets()) {
    const std::string name = variant_name(f);
    CHECK(names.insert(name).second);
    CHECK(variant_families(name) == f);
  }
  CHECK(variant_name({}) == "GAN");
  CHECK(variant_name({Family::rotation}) == "GAN+Rotation");
  CHECK(variant_name(FamilySet::spatial()) == "GAN+Spatial");
  CHECK(variant_name({Family::temporal}) == "GAN+Temporal");
  CHECK(variant_name(FamilySet::all()) == "GAN+SpatioTemporal");
  CHECK(variant_name({Family::translation, Family::shear}) == "GAN+Translate+Shear");
}

TEST_CASE("variant parsing accepts the long and combined spellings") {
  CHECK(variant_families("GAN+Rotate+Translate+Shear") == FamilySet::spatial());
  CHECK(variant_families("GAN+Shear+Rotate+Translate") == FamilySet::spatial());
  CHECK(variant_families("GAN+Rotate") == FamilySet{Family::rotation});
  CHECK(variant_families("GAN+Translation") == FamilySet{Family::translation});
  CHECK(variant_families("GAN+Spatial+Temporal") == FamilySet::all());
  CHECK(variant_families("gan") == FamilySet{});
  CHECK_THROWS_AS(variant_families("GAN+Zoom"), ConfigError);
  CHECK_THROWS_AS(variant_families("Rotation"), ConfigError);
  CHECK_THROWS_AS(variant_families("GAN+"), ConfigError);
  CHECK_THROWS_AS(variant_families("GAN++Shear"), ConfigError);
}

TEST_CASE("table presets") {
  CHECK(table1_variants() == std::vector<std::string>{"GAN", "GAN+Rotation", "GAN+Spatial",
                                                      "GAN+Temporal", "GAN+SpatioTemporal"});
  const auto t2 = table2_variants();
  CHECK(t2 == std::vector<std::string>{"GAN", "GAN+Rotation", "GAN+Translate", "GAN+Shear",
                                       "GAN+Rotate+Translate", "GAN+Translate+Shear",
                                       "GAN+Rotate+Shear", "GAN+Spatial"});
  CHECK(parse_variant_list("table2") == t2);
  CHECK(parse_variant_list(" GAN , GAN+Rotate ,GAN") ==
        std::vector<std::string>{"GAN", "GAN+Rotation"});
  CHECK(parse_variant_list("").empty());
}

TEST_CASE("plain GAN variant zeroes the auxiliary weights") {
  const TrainConfig base;
  const TrainConfig g = train_config_for_variant(base, {});
  CHECK(g.alpha == 0.0);
  CHECK(g.beta == 0.0);
  CHECK(g.families.empty());
  const TrainConfig t = train_config_for_variant(base, {Family::temporal});
  CHECK(t.alpha == base.alpha);
  CHECK(t.beta == base.beta);
}

TEST_CASE("experiment config JSON") {
  ExperimentConfig e;
  e.variant = "GAN+Temporal";
  e.train = train_config_for_variant(e.train, {Family::temporal});
  e.train.epochs = 4;
  e.data.clips = 300;
  e.seeds = {4, 5};
  e.folds = 3;
  e.out = "somewhere";
  e.validate();
  const ExperimentConfig back = ExperimentConfig::from_json(e.to_json());
  CHECK(back.to_json() == e.to_json());

  const ExperimentConfig g = ExperimentConfig::from_json(json{{"variant", "GAN"}});
  CHECK(g.train.alpha == 0.0);
  CHECK(g.train.families.empty());
  CHECK(g.seeds == std::vector<std::uint64_t>{0, 1, 2});
  g.validate();

  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"variant", "GAN+Temporal"},
                                                   {"train", {{"families", "rotation"}}}}),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"colour", 1}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"folds", "five"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"data", {{"depth", 3}}}}), ConfigError);

  ExperimentConfig bad = e;
  bad.train.families = FamilySet::all();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = e;
  bad.seeds.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("run directory layout") {
  CHECK(run_directory("runs", "GAN+Temporal", 2) == fs::path("runs/GAN+Temporal/2"));
}

TEST_CASE("table one layout has five rows") {
  std::vector<CellResult> cells;
  for (const auto& v : table1_variants()) {
    for (std::uint64_t s : {0, 1, 2}) cells.push_back(cell(v, s, {0.5, 0.6, 0.7, 0.8, 0.9}));
  }
  const auto rows = summarize_variants(cells);
  REQUIRE(rows.size() == 5);
  const std::string table = format_table(rows);
  int lines = 0;
  for (char c : table) lines += c == '\n';
  CHECK(lines == 7);  // header, rule, five rows
  CHECK(table.find("GAN+SpatioTemporal | 70.00 ± 14.14") != std::string::npos);
}

TEST_CASE("variant summaries pool folds over seeds") {
  const std::vector<CellResult> cells = {cell("GAN", 0, {0.2, 0.4}), cell("GAN", 1, {0.6, 0.8}),
                                         cell("GAN+Temporal", 0, {1.0, 1.0})};
  const auto rows = summarize_variants(cells);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == "GAN");
  CHECK(rows[0].seeds == 2);
  // Bar height equals the mean of the per-seed means.
  CHECK(rows[0].mean == doctest::Approx((0.3 + 0.7) / 2));
  CHECK(rows[0].std == doctest::Approx(std::sqrt((0.09 + 0.01 + 0.01 + 0.09) / 4)));
  CHECK(rows[1].mean == 1.0);

  CellResult failed;
  failed.variant = "GAN+Shear";
  failed.error = "boom";
  const std::vector<CellResult> with_failure = {cells[0], failed};
  const auto r2 = summarize_variants(with_failure);
  CHECK(r2[1].seeds == 0);
  CHECK(r2[1].failed == 1);
  CHECK(format_table(r2).find("failed") != std::string::npos);
}

TEST_CASE("results lines round trip") {
  test::TempDir dir("results");
  CellResult failed;
  failed.variant = "GAN";
  failed.seed = 3;
  failed.error = "numeric failure";
  const std::vector<CellResult> cells = {cell("GAN+Temporal", 1, {0.5, 1.0}), failed};
  write_text_atomic(dir / "r.jsonl", cells[0].to_json().dump() + "\n" + cells[1].to_json().dump() + "\n");
  const auto back = read_results(dir / "r.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].report.folds == cells[0].report.folds);
  CHECK(back[0].report.mean == 0.75);
  CHECK_FALSE(back[1].ok);
  CHECK(back[1].error == "numeric failure");
  CHECK_THROWS_AS(read_results(dir / "missing.jsonl"), LoadError);
  write_text_atomic(dir / "bad.jsonl", "{not json\n");
  CHECK_THROWS_AS(read_results(dir / "bad.jsonl"), LoadError);
}

TEST_CASE("report is deterministic and read-only") {
  test::TempDir dir("report");
  const std::vector<CellResult> cells = {cell("GAN", 0, {0.4, 0.6}), cell("GAN", 1, {0.5, 0.7}),
                                         cell("GAN+SpatioTemporal", 0, {0.8, 0.9})};
  fs::create_directories(dir / "runs/GAN/0");
  write_text_atomic(dir / "runs/GAN/0/metrics.jsonl",
                    "{\"epoch\":1,\"total_d\":1.2,\"total_g\":0.8}\n"
                    "{\"epoch\":2,\"total_d\":1.1,\"total_g\":0.9}\n");
  const std::string a = write_report(cells, dir / "runs", dir / "rep1");
  const std::string b = write_report(cells, dir / "runs", dir / "rep2");
  CHECK(a == b);
  CHECK(read_text(dir / "rep1/summary.txt") == read_text(dir / "rep2/summary.txt"));
  CHECK(read_text(dir / "rep1/loss_curves.svg") == read_text(dir / "rep2/loss_curves.svg"));
  CHECK(read_text(dir / "rep1/accuracy_bars.svg") == read_text(dir / "rep2/accuracy_bars.svg"));
  CHECK(read_text(dir / "rep1/loss_curves.svg").find("polyline") != std::string::npos);
  // GAN bar shows the seed-averaged 55.0.
  CHECK(read_text(dir / "rep1/accuracy_bars.svg").find(">55.0<") != std::string::npos);
  CHECK(a.find("GAN seed 1: 60.00 ± 10.00") != std::string::npos);
}

TEST_CASE("empty report") {
  test::TempDir dir("empty");
  const std::string s = write_report({}, dir.path(), dir / "rep");
  CHECK(s.empty());
  CHECK(read_text(dir / "rep/summary.txt").empty());
  CHECK(fs::exists(dir / "rep/accuracy_bars.svg"));
}

TEST_CASE("one cell equals train plus evaluate run by hand") {
  test::TempDir dir("cell");
  const DatasetManifest m = build_dataset({{8, 1, 32, 32}, 75, 5}, dir / "data");
  const ExperimentConfig e = tiny_experiment(dir / "runs");

  const CellResult c = run_cell(m, e, "GAN+Rotate", 0);
  REQUIRE_MESSAGE(c.ok, c.error);
  CHECK(c.variant == "GAN+Rotation");
  const fs::path run = run_directory(dir / "runs", "GAN+Rotation", 0);
  CHECK(fs::exists(run / "metrics.jsonl"));
  CHECK(fs::exists(run / "checkpoints/final.ssgc"));
  CHECK(fs::exists(run / "features/features.json"));
  CHECK(fs::exists(run / "eval.json"));

  TrainConfig tc = train_config_for_variant(e.train, {Family::rotation});
  tc.seed = 0;
  TrainOptions opts;
  opts.run_dir = dir / "manual";
  const TrainResult r = train(m, tc, opts);
  const EvalReport manual = evaluate_checkpoint(r.final_checkpoint, m, e.probe, 0, nullptr, e.folds);
  CHECK(manual.folds == c.report.folds);
  CHECK(read_text(opts.run_dir / "metrics.jsonl") == read_text(run / "metrics.jsonl"));

  // Second call reuses eval.json without retraining.
  const auto stamp = fs::last_write_time(run / "checkpoints/final.ssgc");
  const CellResult again = run_cell(m, e, "GAN+Rotation", 0);
  CHECK(again.report.folds == c.report.folds);
  CHECK(fs::last_write_time(run / "checkpoints/final.ssgc") == stamp);

  // Failures are captured, not thrown.
  ExperimentConfig broken = e;
  broken.train.batch_size = 4096;
  const CellResult f = run_cell(m, broken, "GAN", 0, {false, {}});
  CHECK_FALSE(f.ok);
  CHECK_FALSE(f.error.empty());
}
