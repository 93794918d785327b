#include "doctest.h"
#include "gradcheck.hpp"
#include "helpers.hpp"

#include "ssgan/models.hpp"

using namespace ssgan;

namespace {

const ClipShape kDesk{16, 1, 32, 32};

}  // namespace

TEST_CASE("default architecture shapes and parameter counts") {
  const ModelConfig config = default_model_config(kDesk, 16);
  CHECK(config.disc.layers.size() == 6);
  CHECK(config.gen.layers.size() == 6);
  CHECK(config.gen.seed_size == 4);
  const TrunkShape trunk = discriminator_trunk_shape(config);
  CHECK(trunk.channels == 128);
  CHECK(trunk.geo.height == 2);
  CHECK(trunk.feature_dim() == 512);
  CHECK(generator_output_shape(config) == kDesk);

  // Hand-derived: weights (in * kernel volume * out) + biases, per layer.
  const Index d = (1 * 48 * 16 + 16) + (16 * 48 * 32 + 32) + (128 * 16 * 64 + 64) +
                  (64 * 9 * 64 + 64) + (64 * 16 * 128 + 128) + (128 * 9 * 128 + 128) +
                  (512 + 1) + (512 * 11 + 11);
  CHECK(discriminator_parameter_count(config) == d);
  const Index g = (128 * 2048 + 2048) + (128 * 9 * 128 + 128) + (128 * 9 * 64 + 64) +
                  (64 * 16 * 64 + 64) + (64 * 9 * 128 + 128) + (32 * 64 * 16 + 16) +
                  (16 * 64 * 1 + 1);
  CHECK(generator_parameter_count(config) == g);

  Rng rng(1);
  Discriminator<float> disc(config, rng);
  Generator<float> gen(config, rng);
  Index counted = 0;
  for (auto* p : disc.parameters()) counted += p->value.size();
  CHECK(counted == d);
  counted = 0;
  for (auto* p : gen.parameters()) counted += p->value.size();
  CHECK(counted == g);
}

TEST_CASE("architecture preconditions") {
  CHECK_THROWS_AS(default_model_config(ClipShape{6, 1, 32, 32}), ConfigError);
  CHECK_THROWS_AS(default_model_config(ClipShape{16, 1, 24, 24}), ConfigError);
  CHECK_NOTHROW(default_model_config(ClipShape{8, 3, 64, 64}, 4));
}

TEST_CASE("layout conversions round trip") {
  std::vector<VideoClip> clips{test::random_clip(ClipShape{4, 3, 5, 5}, 1),
                               test::random_clip(ClipShape{4, 3, 5, 5}, 2)};
  const Activation<float> act = to_activation<float>(clips);
  CHECK(act.channels() == 3);
  CHECK(act.values(2, act.geo.columns() - 1) == clips[1](3, 2, 4, 4));
  CHECK(to_clips(act) == clips);
  const Activation<float> folded = fold_time(act);
  CHECK(folded.channels() == 12);
  CHECK(folded.geo.frames == 1);
  const Activation<float> unfolded = unfold_time(folded, 4);
  CHECK(unfolded.values == act.values);
  CHECK_THROWS_AS(unfold_time(folded, 5), ShapeError);
  std::vector<VideoClip> mixed{clips[0], test::random_clip(ClipShape{4, 3, 6, 6}, 3)};
  CHECK_THROWS_AS(to_activation<float>(mixed), ShapeError);
}

TEST_CASE("discriminator forward") {
  const ModelConfig config = default_model_config(kDesk, 8);
  Rng rng(2);
  Discriminator<float> disc(config, rng);
  std::vector<VideoClip> clips;
  for (int i = 0; i < 3; ++i) clips.push_back(test::random_clip(kDesk, 10 + i));
  const Activation<float> batch = to_activation<float>(clips);

  SUBCASE("head shapes") {
    const auto out = disc.forward(batch, Mode::eval);
    CHECK(out.transform_logits.rows() == 3);
    CHECK(out.transform_logits.cols() == kTransformClasses);
    CHECK(out.realfake_logits.size() == 3);
    CHECK(out.features.cols() == disc.feature_dim());
  }
  SUBCASE("eval mode is repeatable") {
    const auto a = disc.forward(batch, Mode::eval);
    const auto b = disc.forward(batch, Mode::eval);
    CHECK(a.features == b.features);
    CHECK(a.transform_logits == b.transform_logits);
  }
  SUBCASE("batched outputs equal single-clip outputs") {
    const auto all = disc.forward(batch, Mode::eval);
    for (int i = 0; i < 3; ++i) {
      const auto one = disc.forward(to_activation<float>(std::span(&clips[i], 1)), Mode::eval);
      CHECK((one.features.row(0) - all.features.row(i)).cwiseAbs().maxCoeff() < 1e-5f);
      CHECK(std::abs(one.realfake_logits[0] - all.realfake_logits[i]) < 1e-5f);
    }
  }
  SUBCASE("wrong shape is rejected") {
    std::vector<VideoClip> wrong{test::random_clip(ClipShape{8, 1, 32, 32}, 1)};
    CHECK_THROWS_AS(disc.forward(to_activation<float>(wrong), Mode::eval), ShapeError);
  }
  SUBCASE("normalized weights have unit top singular value after convergence") {
    for (int i = 0; i < 60; ++i) disc.power_iteration();
    for (auto* w : disc.normalized_weights()) {
      const MatrixX<double> eff = w->effective(Mode::eval).cast<double>();
      Eigen::JacobiSVD<MatrixX<double>> svd(eff);
      CHECK(svd.singularValues()[0] == doctest::Approx(1.0).epsilon(0.02));
    }
  }
}

TEST_CASE("generator forward") {
  const ModelConfig config = default_model_config(kDesk, 8);
  Rng rng(3);
  Generator<float> gen(config, rng);
  Discriminator<float> disc(config, rng);
  const MatrixX<float> z = sample_latent<float>(2, config.gen.latent_dim, rng);
  const Activation<float> out = gen.forward(z, Mode::eval);
  CHECK(out.values.maxCoeff() <= 1.0f);
  CHECK(out.values.minCoeff() >= -1.0f);
  const auto clips = to_clips(out);
  REQUIRE(clips.size() == 2);
  CHECK(clips[0].shape() == kDesk);
  CHECK_FALSE(clips[0] == clips[1]);
  CHECK(gen.forward(z, Mode::eval).values == out.values);
  CHECK_NOTHROW(disc.forward(out, Mode::eval));
  CHECK_THROWS_AS(gen.forward(MatrixX<float>::Zero(1, 7), Mode::eval), ShapeError);
}

TEST_CASE("composed loss gradients match central differences") {
  const test::GradCheckReport report = test::check_composed_gradients(7, 1e-3);
  INFO(report.worst);
  CHECK(report.checked > 1000);
  CHECK(report.max_relative_error < 1e-4);
}
