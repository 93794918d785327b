#include "ssgan/models.hpp"

namespace ssgan {

namespace {

ConvSpec spec3d(int out, std::array<int, 3> k, std::array<int, 3> s, std::array<int, 3> p) {
  ConvSpec spec;
  spec.out_channels = out;
  spec.kernel = k;
  spec.stride = s;
  spec.padding = p;
  return spec;
}

ConvSpec spec2d(int out, int k, int s, int p) { return spec3d(out, {1, k, k}, {1, s, s}, {0, p, p}); }

}  // namespace

ModelConfig default_model_config(ClipShape clip, int base_width, int latent_dim) {
  if (clip.frames % 4 != 0 || clip.frames < 4) {
    throw ConfigError("default architecture needs a frame count divisible by 4");
  }
  if (!clip.square() || clip.height % 16 != 0) {
    throw ConfigError("default architecture needs square frames with side divisible by 16");
  }
  if (base_width <= 0 || latent_dim <= 0) throw ConfigError("widths must be positive");
  const int w = base_width;
  ModelConfig config;
  config.clip = clip;
  config.base_width = base_width;

  auto& d = config.disc;
  d.temporal_layers = 2;
  d.layers = {
      spec3d(w, {3, 4, 4}, {2, 2, 2}, {1, 1, 1}),
      spec3d(2 * w, {3, 4, 4}, {2, 2, 2}, {1, 1, 1}),
      spec2d(4 * w, 4, 2, 1),
      spec2d(4 * w, 3, 1, 1),
      spec2d(8 * w, 4, 2, 1),
      spec2d(8 * w, 3, 1, 1),
  };

  auto& g = config.gen;
  g.latent_dim = latent_dim;
  g.seed_channels = 8 * w;
  g.seed_size = clip.height / 8;
  g.seed_frames = clip.frames / 4;
  g.spatial_layers = 4;
  g.layers = {
      spec2d(8 * w, 3, 1, 1),
      spec2d(4 * w, 3, 1, 1),
      spec2d(4 * w, 4, 2, 1),
      spec2d(2 * w * g.seed_frames, 3, 1, 1),
      spec3d(w, {4, 4, 4}, {2, 2, 2}, {1, 1, 1}),
      spec3d(clip.channels, {4, 4, 4}, {2, 2, 2}, {1, 1, 1}),
  };
  validate_model_config(config);
  return config;
}

TrunkShape discriminator_trunk_shape(const ModelConfig& config) {
  const auto& arch = config.disc;
  if (arch.temporal_layers < 0 || arch.temporal_layers > static_cast<int>(arch.layers.size())) {
    throw ConfigError("temporal layer count out of range");
  }
  Geometry g{1, config.clip.frames, config.clip.height, config.clip.width};
  Index channels = config.clip.channels;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (static_cast<int>(i) == arch.temporal_layers) {
      channels *= g.frames;
      g.frames = 1;
    }
    g = conv_output(g, arch.layers[i]);
    channels = arch.layers[i].out_channels;
  }
  if (static_cast<int>(arch.layers.size()) == arch.temporal_layers) {
    channels *= g.frames;
    g.frames = 1;
  }
  return {channels, g};
}

ClipShape generator_output_shape(const ModelConfig& config) {
  const auto& arch = config.gen;
  if (arch.spatial_layers < 0 || arch.spatial_layers > static_cast<int>(arch.layers.size())) {
    throw ConfigError("spatial layer count out of range");
  }
  if (arch.layers.empty()) throw ConfigError("generator needs at least one layer");
  Geometry g{1, 1, arch.seed_size, arch.seed_size};
  Index channels = arch.seed_channels;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (static_cast<int>(i) == arch.spatial_layers) {
      if (arch.seed_frames <= 0 || channels % arch.seed_frames != 0) {
        throw ConfigError("generator channels not divisible by seed frames");
      }
      channels /= arch.seed_frames;
      g.frames = arch.seed_frames;
    }
    g = conv_transpose_output(g, arch.layers[i]);
    channels = arch.layers[i].out_channels;
  }
  return ClipShape{int(g.frames), int(channels), int(g.height), int(g.width)};
}

void validate_model_config(const ModelConfig& config) {
  const ClipShape& clip = config.clip;
  if (clip.frames < 2 || !clip.square() || clip.channels <= 0 || clip.height <= 0) {
    throw ConfigError("invalid clip shape " + clip.str());
  }
  if (config.disc.layers.empty()) throw ConfigError("discriminator needs at least one layer");
  (void)discriminator_trunk_shape(config);
  const ClipShape out = generator_output_shape(config);
  if (out.channels != clip.channels || out.height != clip.height || out.width != clip.width ||
      out.frames < clip.frames) {
    throw ConfigError("generator output " + out.str() + " incompatible with clip shape " +
                      clip.str());
  }
}

Index discriminator_parameter_count(const ModelConfig& config) {
  const auto& arch = config.disc;
  Index count = 0;
  Geometry g{1, config.clip.frames, config.clip.height, config.clip.width};
  Index channels = config.clip.channels;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (static_cast<int>(i) == arch.temporal_layers) {
      channels *= g.frames;
      g.frames = 1;
    }
    g = conv_output(g, arch.layers[i]);
    count += channels * arch.layers[i].kernel_volume() * arch.layers[i].out_channels +
             arch.layers[i].out_channels;
    channels = arch.layers[i].out_channels;
  }
  const Index features = discriminator_trunk_shape(config).feature_dim();
  return count + (features + 1) + (features * kTransformClasses + kTransformClasses);
}

Index generator_parameter_count(const ModelConfig& config) {
  const auto& arch = config.gen;
  const Index seed_out = Index(arch.seed_channels) * arch.seed_size * arch.seed_size;
  Index count = arch.latent_dim * seed_out + seed_out;
  Index channels = arch.seed_channels;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (static_cast<int>(i) == arch.spatial_layers) channels /= arch.seed_frames;
    count += channels * arch.layers[i].kernel_volume() * arch.layers[i].out_channels +
             arch.layers[i].out_channels;
    channels = arch.layers[i].out_channels;
  }
  return count;
}

}  // namespace ssgan
