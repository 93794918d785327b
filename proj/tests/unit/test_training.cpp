#include "doctest.h"

#include "helpers.hpp"
#include "ssgan/serialization.hpp"
#include "ssgan/training.hpp"

#include <cmath>
#include <fstream>

using namespace ssgan;
namespace fs = std::filesystem;

namespace {

const ClipShape kClip{8, 1, 32, 32};

TrainConfig small_config() {
  TrainConfig c;
  c.base_width = 4;
  c.latent_dim = 16;
  c.batch_size = 8;
  c.epochs = 3;
  c.checkpoint_every = 1;
  c.seed = 11;
  return c;
}

Activation<float> real_batch(int n, std::uint64_t seed) {
  std::vector<VideoClip> clips;
  for (int i = 0; i < n; ++i) {
    clips.push_back(generate_clip(activity_from_id(i % 3), seed + std::uint64_t(i), kClip));
  }
  return to_activation<float>(clips);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_bits(const LossBreakdown& a, const LossBreakdown& b) {
  return std::memcmp(&a, &b, sizeof a) == 0;
}

/// Shared 75-clip dataset for the run-level tests.
const DatasetManifest& dataset() {
  static test::TempDir dir("train-data");
  static const DatasetManifest m = build_dataset({kClip, 75, 5}, dir.path());
  return m;
}

}  // namespace

TEST_CASE("train config validation") {
  CHECK_NOTHROW(TrainConfig{}.validate());
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](TrainConfig& c) { c.alpha = -0.1; });
  bad([](TrainConfig& c) { c.beta = -1; });
  bad([](TrainConfig& c) { c.g_lr = 0; });
  bad([](TrainConfig& c) { c.d_lr = -1e-4; });
  bad([](TrainConfig& c) { c.beta1 = 1.0; });
  bad([](TrainConfig& c) { c.beta2 = -0.1; });
  bad([](TrainConfig& c) { c.epochs = -1; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.checkpoint_every = 0; });
  bad([](TrainConfig& c) { c.holdout_fraction = 0.6; });
  bad([](TrainConfig& c) { c.alpha = std::nan(""); });
}

TEST_CASE("train config defaults") {
  const TrainConfig c;
  CHECK(c.alpha == 0.25);
  CHECK(c.beta == 1.0);
  CHECK(c.g_lr == 1e-4);
  CHECK(c.d_lr == 4e-4);
  CHECK(c.beta1 == 0.5);
  CHECK(c.beta2 == 0.999);
  CHECK(c.families == FamilySet::all());
  CHECK(c.aux_enabled());
  TrainConfig baseline;
  baseline.families = {};
  CHECK_FALSE(baseline.aux_enabled());
}

TEST_CASE("config JSON round trips") {
  TrainConfig c = small_config();
  c.families = {Family::rotation, Family::temporal};
  c.alpha = 0.5;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.families == c.families);

  TrainConfig none = c;
  none.families = {};
  CHECK(train_config_from_json(to_json(none)).families.empty());

  const TrainConfig partial = train_config_from_json(json{{"epochs", 7}}, c);
  CHECK(partial.epochs == 7);
  CHECK(partial.alpha == 0.5);
  CHECK_THROWS_AS(train_config_from_json(json{{"epoch", 7}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(json{{"alpha", "high"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(json{{"families", "rotation,zoom"}}), ConfigError);

  const ModelConfig m = default_model_config({16, 1, 32, 32}, 16, 128);
  CHECK(to_json(model_config_from_json(to_json(m))) == to_json(m));
}

TEST_CASE("initialization is a function of the seed") {
  TrainConfig c = small_config();
  GanState a = init_state(c, kClip), b = init_state(c, kClip);
  CHECK(parameter_hash(a) == parameter_hash(b));
  c.seed = 12;
  GanState d = init_state(c, kClip);
  CHECK(parameter_hash(a) != parameter_hash(d));
  CHECK(hex64(0x1f) == "000000000000001f");
}

TEST_CASE("one training step is reproducible bit for bit") {
  const Activation<float> real = real_batch(8, 100);
  GanState a = init_state(small_config(), kClip), b = init_state(small_config(), kClip);
  StepStreams sa = StepStreams::for_step(11, 1, 0), sb = StepStreams::for_step(11, 1, 0);
  const LossBreakdown la = train_step(a, real, sa);
  const LossBreakdown lb = train_step(b, real, sb);
  CHECK(same_bits(la, lb));
  CHECK(parameter_hash(a) == parameter_hash(b));
  CHECK(la.aux_d >= 0.0);
  CHECK(la.aux_g >= 0.0);
}

TEST_CASE("training steps satisfy the loss-total identity") {
  TrainConfig c = small_config();
  c.alpha = 0.3;
  c.beta = 0.7;
  GanState s = init_state(c, kClip);
  for (int step = 0; step < 4; ++step) {
    StepStreams st = StepStreams::for_step(c.seed, 1, step);
    const LossBreakdown l = train_step(s, real_batch(8, 200 + 8 * step), st);
    CHECK(l.total_g == l.adversarial_g + c.alpha * l.aux_g);
    CHECK(l.total_d == l.adversarial_d + c.beta * l.aux_d);
    CHECK(std::isfinite(l.total_g));
    CHECK(std::isfinite(l.total_d));
  }
}

TEST_CASE("zero auxiliary weights reduce to the plain adversarial path") {
  TrainConfig c = small_config();
  c.alpha = 0.0;
  c.beta = 0.0;
  c.families = {Family::rotation};
  GanState with_aux = init_state(c, kClip), without = init_state(c, kClip);
  for (int step = 0; step < 10; ++step) {
    const Activation<float> real = real_batch(8, 300 + 8 * step);
    StepStreams sa = StepStreams::for_step(c.seed, 1, step);
    StepStreams sb = StepStreams::for_step(c.seed, 1, step);
    const LossBreakdown la = train_step<AuxPath::enabled>(with_aux, real, sa);
    const LossBreakdown lb = train_step<AuxPath::disabled>(without, real, sb);
    CHECK(la.adversarial_d == lb.adversarial_d);
    CHECK(la.adversarial_g == lb.adversarial_g);
    CHECK(parameter_hash(with_aux) == parameter_hash(without));
  }
}

TEST_CASE("a non-finite discriminator aborts the step") {
  GanState s = init_state(small_config(), kClip);
  s.disc.parameters().front()->value(0, 0) = std::nanf("");
  StepStreams st = StepStreams::for_step(1, 1, 0);
  CHECK_THROWS_AS(train_step(s, real_batch(8, 400), st), NumericError);
}

TEST_CASE("checkpoints round trip bit for bit") {
  test::TempDir dir("ckpt");
  GanState s = init_state(small_config(), kClip);
  for (int step = 0; step < 2; ++step) {
    StepStreams st = StepStreams::for_step(11, 1, step);
    train_step(s, real_batch(8, 500 + 8 * step), st);
  }
  s.epoch = 4;
  const fs::path path = dir / "c.ssgc";
  save_checkpoint(path, s, json{{"note", "x"}});
  CHECK_FALSE(fs::exists(dir / "c.ssgc.tmp"));

  CheckpointInfo info;
  GanState r = load_checkpoint(path, &info);
  CHECK(info.epoch == 4);
  CHECK(info.extra.at("note") == "x");
  CHECK(info.parameter_hash == hex64(parameter_hash(s)));
  CHECK(parameter_hash(r) == parameter_hash(s));
  CHECK(to_json(r.config) == to_json(s.config));
  CHECK(to_json(r.model) == to_json(s.model));
  CHECK(r.d_opt.steps() == s.d_opt.steps());
  CHECK(r.g_opt.steps() == s.g_opt.steps());
  for (std::size_t i = 0; i < s.d_opt.first_moments().size(); ++i) {
    CHECK(r.d_opt.first_moments()[i] == s.d_opt.first_moments()[i]);
    CHECK(r.d_opt.second_moments()[i] == s.d_opt.second_moments()[i]);
  }
  auto rw = r.disc.normalized_weights(), sw = s.disc.normalized_weights();
  for (std::size_t i = 0; i < sw.size(); ++i) {
    CHECK(rw[i]->state().u == sw[i]->state().u);
    CHECK(rw[i]->state().v == sw[i]->state().v);
  }

  // Continuing from the restored state matches continuing in memory.
  StepStreams a = StepStreams::for_step(11, 1, 2), b = StepStreams::for_step(11, 1, 2);
  const Activation<float> real = real_batch(8, 600);
  CHECK(same_bits(train_step(s, real, a), train_step(r, real, b)));
  CHECK(parameter_hash(r) == parameter_hash(s));

  // Saving the restored state reproduces the file.
  GanState again = load_checkpoint(path);
  save_checkpoint(dir / "d.ssgc", again, json{{"note", "x"}});
  CHECK(slurp(path) == slurp(dir / "d.ssgc"));
  CHECK(read_checkpoint_info(path).epoch == 4);
}

TEST_CASE("corrupt checkpoints are rejected") {
  test::TempDir dir("ckbad");
  GanState s = init_state(small_config(), kClip);
  const fs::path path = dir / "c.ssgc";
  save_checkpoint(path, s);
  const std::string bytes = slurp(path);
  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream(dir / name, std::ios::binary) << data;
    return dir / name;
  };
  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x40;
  std::string bad_magic = bytes;
  bad_magic[1] = 'X';
  std::string bad_version = bytes;
  bad_version[4] = 7;
  for (const fs::path& p : {write("trunc", bytes.substr(0, bytes.size() - 8)), write("flip", flipped),
                            write("magic", bad_magic), write("version", bad_version),
                            write("short", bytes.substr(0, 12)), dir / "missing"}) {
    try {
      load_checkpoint(p);
      FAIL("expected a load error for " << p);
    } catch (const LoadError& e) {
      CHECK(std::string(e.what()).find(p.string()) != std::string::npos);
    }
  }
}

TEST_CASE("metrics lines carry the loss breakdown") {
  EpochMetrics m;
  m.epoch = 3;
  m.losses = {1.5, 2.5, 0.25, 0.5, 1.5625, 3.0};
  m.wall_seconds = 9.0;
  const json j = json::parse(metrics_line(m));
  CHECK(j.at("epoch") == 3);
  CHECK(j.at("adversarial_g") == 1.5);
  CHECK(j.at("total_d") == 3.0);
  CHECK(j.at("aux_accuracy").is_null());
  CHECK_FALSE(j.contains("wall_seconds"));
  m.aux_accuracy = 0.75;
  CHECK(json::parse(metrics_line(m)).at("aux_accuracy") == 0.75);
}

TEST_CASE("zero epochs writes the initialization and no metrics") {
  test::TempDir dir("e0");
  TrainConfig c = small_config();
  c.epochs = 0;
  const TrainResult r = train(dataset(), c, {dir.path()});
  CHECK(r.epochs_completed == 0);
  CHECK(fs::exists(r.final_checkpoint));
  CHECK(fs::exists(dir / "checkpoints/epoch-0000.ssgc"));
  CHECK(slurp(dir / "metrics.jsonl").empty());
  GanState init = init_state(c, kClip);
  GanState saved = load_checkpoint(r.final_checkpoint);
  CHECK(parameter_hash(saved) == parameter_hash(init));
  CHECK(saved.epoch == 0);
}

TEST_CASE("resuming reproduces an uninterrupted run") {
  test::TempDir full("full"), part("part");
  const TrainConfig c = small_config();
  std::vector<EpochMetrics> seen;
  TrainOptions opts{full.path()};
  opts.on_epoch = [&](const EpochMetrics& m) { seen.push_back(m); };
  const TrainResult a = train(dataset(), c, opts);
  CHECK(a.epochs_completed == 3);
  REQUIRE(seen.size() == 3);
  for (const auto& m : seen) {
    REQUIRE(m.aux_accuracy.has_value());
    CHECK(*m.aux_accuracy >= 0.0);
    CHECK(*m.aux_accuracy <= 1.0);
  }
  for (int e = 0; e <= 3; ++e) {
    char name[32];
    std::snprintf(name, sizeof name, "checkpoints/epoch-%04d.ssgc", e);
    CHECK(fs::exists(full / name));
  }

  TrainConfig shorter = c;
  shorter.epochs = 2;
  train(dataset(), shorter, {part.path()});
  // A stale line past the resume point is dropped.
  std::ofstream(part / "metrics.jsonl", std::ios::app) << R"({"epoch":3,"stale":true})" << "\n";
  TrainOptions resume{part.path()};
  resume.resume = part / "checkpoints/epoch-0002.ssgc";
  const TrainResult b = train(dataset(), c, resume);
  CHECK(b.epochs_completed == 3);
  CHECK(b.history.size() == 1);

  CHECK(slurp(full / "metrics.jsonl") == slurp(part / "metrics.jsonl"));
  GanState fa = load_checkpoint(a.final_checkpoint), fb = load_checkpoint(b.final_checkpoint);
  CHECK(parameter_hash(fa) == parameter_hash(fb));
  CHECK(slurp(a.final_checkpoint) == slurp(b.final_checkpoint));

  // Repeating the whole run reproduces the metrics stream byte for byte.
  test::TempDir again("again");
  train(dataset(), c, {again.path()});
  CHECK(slurp(again / "metrics.jsonl") == slurp(full / "metrics.jsonl"));

  TrainConfig other = c;
  other.alpha = 0.5;
  TrainOptions bad{part.path()};
  bad.resume = part / "checkpoints/epoch-0002.ssgc";
  CHECK_THROWS_AS(train(dataset(), other, bad), ConfigError);
}

TEST_CASE("the baseline variant reports no auxiliary accuracy") {
  test::TempDir dir("base");
  TrainConfig c = small_config();
  c.families = {};
  c.epochs = 1;
  const TrainResult r = train(dataset(), c, {dir.path()});
  REQUIRE(r.history.size() == 1);
  CHECK_FALSE(r.history[0].aux_accuracy.has_value());
  CHECK(r.history[0].losses.aux_d == 0.0);
  CHECK(r.history[0].losses.aux_g == 0.0);
  const json line = json::parse(slurp(dir / "metrics.jsonl"));
  CHECK(line.at("aux_accuracy").is_null());
}

TEST_CASE("training needs at least one batch") {
  test::TempDir dir("nobatch");
  TrainConfig c = small_config();
  c.batch_size = 64;
  CHECK_THROWS_AS(train(dataset(), c, {dir.path()}), ConfigError);
}

TEST_CASE("auxiliary loss falls below chance within 200 steps") {
  // Width-8 model on 8-frame clips, batch 16; the held-back accuracy is not
  // asserted here, only that the head is learning.
  TrainConfig c = small_config();
  c.base_width = 8;
  c.batch_size = 16;
  GanState s = init_state(c, kClip);
  const LabeledBatch data = [] {
    std::vector<std::size_t> idx(dataset().split_indices(Split::pretrain).size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return load_batch(dataset(), Split::pretrain, idx);
  }();
  double tail = 0;
  for (int step = 0; step < 200; ++step) {
    std::vector<VideoClip> batch;
    for (int i = 0; i < c.batch_size; ++i) {
      batch.push_back(data.clips[std::size_t(step * c.batch_size + i) % data.clips.size()]);
    }
    StepStreams st = StepStreams::for_step(c.seed, 0, step);
    const LossBreakdown l = train_step(s, to_activation<float>(batch), st);
    if (step >= 180) tail += l.aux_d / 20.0;
  }
  CAPTURE(tail);
  CHECK(tail < std::log(11.0));
}
