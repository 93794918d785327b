#pragma once

#include "ssgan/nn.hpp"
#include "ssgan/transforms.hpp"
#include "ssgan/video_clip.hpp"

#include <span>
#include <string>
#include <vector>

namespace ssgan {

struct DiscriminatorArch {
  std::vector<ConvSpec> layers;
  int temporal_layers = 2;  // leading 3D layers; time folds into channels after them
  double leaky_slope = 0.2;
  bool spectral_norm = true;
};

struct GeneratorArch {
  int latent_dim = 128;
  int seed_channels = 256;
  int seed_size = 4;
  int seed_frames = 4;     // time slices unfolded from channels before the first 3D layer
  int spatial_layers = 4;  // leading 2D layers
  std::vector<ConvSpec> layers;
  bool spectral_norm = false;
};

struct ModelConfig {
  ClipShape clip;
  int base_width = 32;
  DiscriminatorArch disc;
  GeneratorArch gen;
};

/// Six-layer discriminator (two 3D, four 2D) with widths
/// w, 2w, 4w, 4w, 8w, 8w and a mirrored generator. Needs T % 4 == 0 and
/// H = W divisible by 16.
ModelConfig default_model_config(ClipShape clip, int base_width = 32, int latent_dim = 128);

/// Geometry of the discriminator trunk output; features = channels * h * w.
struct TrunkShape {
  Index channels = 0;
  Geometry geo;
  Index feature_dim() const { return channels * geo.positions(); }
};

TrunkShape discriminator_trunk_shape(const ModelConfig& config);
ClipShape generator_output_shape(const ModelConfig& config);
/// Throws ConfigError unless generator output and discriminator input agree.
void validate_model_config(const ModelConfig& config);
Index discriminator_parameter_count(const ModelConfig& config);
Index generator_parameter_count(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Batch layout conversions: clips (T,C,H,W) <-> activation (C, N*T*H*W).

template <typename Scalar>
Activation<Scalar> to_activation(std::span<const BasicVideoClip<Scalar>> clips) {
  if (clips.empty()) throw ShapeError("empty clip batch");
  const ClipShape s = clips.front().shape();
  Activation<Scalar> act;
  act.geo = Geometry{Index(clips.size()), s.frames, s.height, s.width};
  act.values.resize(s.channels, act.geo.columns());
  const Index plane = Index(s.height) * s.width;
  for (std::size_t n = 0; n < clips.size(); ++n) {
    if (clips[n].shape() != s) throw ShapeError("mixed clip shapes in batch");
    for (int t = 0; t < s.frames; ++t) {
      const Index col0 = (Index(n) * s.frames + t) * plane;
      for (int c = 0; c < s.channels; ++c) {
        const Scalar* src = clips[n].data().data() + clips[n].offset(t, c, 0, 0);
        for (Index p = 0; p < plane; ++p) act.values(c, col0 + p) = src[p];
      }
    }
  }
  return act;
}

template <typename Scalar>
std::vector<BasicVideoClip<Scalar>> to_clips(const Activation<Scalar>& act) {
  const ClipShape s{int(act.geo.frames), int(act.channels()), int(act.geo.height),
                    int(act.geo.width)};
  const Index plane = Index(s.height) * s.width;
  std::vector<BasicVideoClip<Scalar>> clips;
  clips.reserve(act.geo.batch);
  for (Index n = 0; n < act.geo.batch; ++n) {
    BasicVideoClip<Scalar> clip(s);
    for (int t = 0; t < s.frames; ++t) {
      const Index col0 = (n * s.frames + t) * plane;
      for (int c = 0; c < s.channels; ++c) {
        Scalar* dst = clip.data().data() + clip.offset(t, c, 0, 0);
        for (Index p = 0; p < plane; ++p) dst[p] = act.values(c, col0 + p);
      }
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

/// Concatenates two activations along the batch axis.
template <typename Scalar>
Activation<Scalar> concat_batch(const Activation<Scalar>& a, const Activation<Scalar>& b) {
  if (a.channels() != b.channels() || a.geo.positions() != b.geo.positions() ||
      a.geo.frames != b.geo.frames) {
    throw ShapeError("cannot concatenate activations of different shape");
  }
  Activation<Scalar> out;
  out.geo = a.geo;
  out.geo.batch = a.geo.batch + b.geo.batch;
  out.values.resize(a.channels(), out.geo.columns());
  out.values << a.values, b.values;
  return out;
}

/// Folds time into channels: (C, N, T, H, W) -> (T*C, N, 1, H, W), channel t*C + c.
template <typename Scalar>
Activation<Scalar> fold_time(const Activation<Scalar>& in) {
  const Index C = in.channels(), T = in.geo.frames, plane = in.geo.height * in.geo.width;
  Activation<Scalar> out;
  out.geo = Geometry{in.geo.batch, 1, in.geo.height, in.geo.width};
  out.values.resize(T * C, out.geo.columns());
  for (Index n = 0; n < in.geo.batch; ++n) {
    for (Index t = 0; t < T; ++t) {
      out.values.block(t * C, n * plane, C, plane) = in.values.middleCols((n * T + t) * plane, plane);
    }
  }
  return out;
}

/// Inverse of fold_time.
template <typename Scalar>
Activation<Scalar> unfold_time(const Activation<Scalar>& in, Index frames) {
  if (in.geo.frames != 1 || in.channels() % frames != 0) {
    throw ShapeError("cannot unfold " + std::to_string(in.channels()) + " channels into " +
                     std::to_string(frames) + " frames");
  }
  const Index C = in.channels() / frames, plane = in.geo.height * in.geo.width;
  Activation<Scalar> out;
  out.geo = Geometry{in.geo.batch, frames, in.geo.height, in.geo.width};
  out.values.resize(C, out.geo.columns());
  for (Index n = 0; n < in.geo.batch; ++n) {
    for (Index t = 0; t < frames; ++t) {
      out.values.middleCols((n * frames + t) * plane, plane) = in.values.block(t * C, n * plane, C, plane);
    }
  }
  return out;
}

template <typename Scalar>
MatrixX<Scalar> sample_latent(Index count, int dim, Rng& rng) {
  MatrixX<Scalar> z(count, dim);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<Scalar>(dist(rng));
  return z;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
struct DiscriminatorOutput {
  MatrixX<Scalar> features;          // N x feature_dim
  VectorX<Scalar> realfake_logits;   // N
  MatrixX<Scalar> transform_logits;  // N x 11
};

/// Two-head discriminator: a shared convolutional trunk feeding a real/fake
/// logit and an 11-way transformation classifier.
template <typename Scalar>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const ModelConfig& config, Rng& rng) : config_(config) {
    validate_model_config(config);
    const auto& arch = config.disc;
    int channels = config.clip.channels;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
      if (static_cast<int>(i) == arch.temporal_layers) {
        channels *= static_cast<int>(fold_frames());
      }
      layers_.emplace_back("discriminator/conv" + std::to_string(i), channels, arch.layers[i],
                           arch.spectral_norm, rng);
      channels = arch.layers[i].out_channels;
    }
    trunk_ = discriminator_trunk_shape(config);
    realfake_ = Linear<Scalar>("discriminator/realfake", trunk_.feature_dim(), 1,
                               arch.spectral_norm, rng);
    transform_ = Linear<Scalar>("discriminator/transform", trunk_.feature_dim(),
                                kTransformClasses, arch.spectral_norm, rng);
  }

  const ModelConfig& config() const { return config_; }
  Index feature_dim() const { return trunk_.feature_dim(); }

  /// Train mode advances every spectral-norm power iteration once.
  DiscriminatorOutput<Scalar> forward(const Activation<Scalar>& clips, Mode mode) {
    const ClipShape& s = config_.clip;
    if (clips.channels() != s.channels || clips.geo.frames != s.frames ||
        clips.geo.height != s.height || clips.geo.width != s.width) {
      throw ShapeError("discriminator input does not match configured clip shape " + s.str());
    }
    const auto& arch = config_.disc;
    Activation<Scalar> x = clips;
    outputs_.clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (static_cast<int>(i) == arch.temporal_layers) x = fold_time(x);
      x = layers_[i].forward(x, mode);
      leaky_relu_inplace(x.values, arch.leaky_slope);
      outputs_.push_back(x.values);
    }
    if (static_cast<int>(layers_.size()) == arch.temporal_layers) x = fold_time(x);
    last_geo_ = x.geo;

    DiscriminatorOutput<Scalar> out;
    out.features = flatten_features(x);
    out.realfake_logits = realfake_.forward(out.features, mode).col(0);
    out.transform_logits = transform_.forward(out.features, mode);
    return out;
  }

  /// Backpropagates head gradients (either may be empty to skip that head)
  /// from the most recent forward call. Returns the input gradient when
  /// requested.
  Activation<Scalar> backward(const VectorX<Scalar>& grad_realfake,
                              const MatrixX<Scalar>& grad_transform, BackwardFlags flags) {
    const Index n = last_geo_.batch;
    MatrixX<Scalar> grad_features = MatrixX<Scalar>::Zero(n, feature_dim());
    const BackwardFlags head_flags{flags.param_grads, true};
    if (grad_realfake.size() > 0) {
      MatrixX<Scalar> g = grad_realfake;
      grad_features += realfake_.backward(g, head_flags);
    }
    if (grad_transform.size() > 0) {
      grad_features += transform_.backward(grad_transform, head_flags);
    }

    const auto& arch = config_.disc;
    Activation<Scalar> grad = unflatten_features(grad_features);
    if (static_cast<int>(layers_.size()) == arch.temporal_layers) {
      grad = unfold_time(grad, fold_frames());
    }
    for (std::size_t k = layers_.size(); k-- > 0;) {
      grad.values = leaky_relu_backward(grad.values, outputs_[k], arch.leaky_slope);
      const bool need_input = k > 0 || flags.input_grad;
      grad = layers_[k].backward(grad, {flags.param_grads, need_input});
      if (!need_input) return {};
      if (static_cast<int>(k) == arch.temporal_layers) grad = unfold_time(grad, fold_frames());
    }
    return grad;
  }

  /// Post-activation outputs of every trunk layer from the last forward call.
  const std::vector<MatrixX<Scalar>>& layer_outputs() const { return outputs_; }

  void power_iteration() {
    for (auto& layer : layers_) layer.weight().advance_power_iteration();
    realfake_.weight().advance_power_iteration();
    transform_.weight().advance_power_iteration();
  }

  std::vector<Parameter<Scalar>*> parameters() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& layer : layers_) layer.collect(out);
    realfake_.collect(out);
    transform_.collect(out);
    return out;
  }

  std::vector<NormalizedWeight<Scalar>*> normalized_weights() {
    std::vector<NormalizedWeight<Scalar>*> out;
    for (auto& layer : layers_) out.push_back(&layer.weight());
    out.push_back(&realfake_.weight());
    out.push_back(&transform_.weight());
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.setZero();
  }

 private:
  Index fold_frames() const {
    Geometry g{1, config_.clip.frames, config_.clip.height, config_.clip.width};
    for (int i = 0; i < config_.disc.temporal_layers; ++i) g = conv_output(g, config_.disc.layers[i]);
    return g.frames;
  }

  MatrixX<Scalar> flatten_features(const Activation<Scalar>& x) const {
    const Index plane = x.geo.positions();
    MatrixX<Scalar> f(x.geo.batch, x.channels() * plane);
    for (Index n = 0; n < x.geo.batch; ++n) {
      for (Index c = 0; c < x.channels(); ++c) {
        f.row(n).segment(c * plane, plane) = x.values.row(c).segment(n * plane, plane);
      }
    }
    return f;
  }

  Activation<Scalar> unflatten_features(const MatrixX<Scalar>& f) const {
    Activation<Scalar> x;
    x.geo = last_geo_;
    const Index plane = x.geo.positions();
    const Index channels = f.cols() / plane;
    x.values.resize(channels, x.geo.columns());
    for (Index n = 0; n < x.geo.batch; ++n) {
      for (Index c = 0; c < channels; ++c) {
        x.values.row(c).segment(n * plane, plane) = f.row(n).segment(c * plane, plane);
      }
    }
    return x;
  }

  ModelConfig config_;
  std::vector<Conv<Scalar>> layers_;
  Linear<Scalar> realfake_;
  Linear<Scalar> transform_;
  TrunkShape trunk_;
  std::vector<MatrixX<Scalar>> outputs_;
  Geometry last_geo_;
};

/// Generator: latent -> learned seed map -> 2D transposed convolutions ->
/// channels unfolded into time -> 3D transposed convolutions -> tanh.
template <typename Scalar>
class Generator {
 public:
  Generator() = default;
  Generator(const ModelConfig& config, Rng& rng) : config_(config) {
    validate_model_config(config);
    const auto& arch = config.gen;
    seed_ = Linear<Scalar>("generator/seed", arch.latent_dim,
                           Index(arch.seed_channels) * arch.seed_size * arch.seed_size,
                           arch.spectral_norm, rng);
    int channels = arch.seed_channels;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
      if (static_cast<int>(i) == arch.spatial_layers) channels /= arch.seed_frames;
      layers_.emplace_back("generator/deconv" + std::to_string(i), channels, arch.layers[i],
                           arch.spectral_norm, rng);
      channels = arch.layers[i].out_channels;
    }
  }

  const ModelConfig& config() const { return config_; }
  int latent_dim() const { return config_.gen.latent_dim; }

  /// Returns (C, N, T, H, W) activations with values in [-1, 1].
  Activation<Scalar> forward(const MatrixX<Scalar>& z, Mode mode) {
    const auto& arch = config_.gen;
    if (z.cols() != arch.latent_dim) {
      throw ShapeError("latent dimension " + std::to_string(z.cols()) + " != " +
                       std::to_string(arch.latent_dim));
    }
    MatrixX<Scalar> seed = seed_.forward(z, mode);
    relu_inplace(seed);
    seed_out_ = seed;

    Activation<Scalar> x;
    const Index plane = Index(arch.seed_size) * arch.seed_size;
    x.geo = Geometry{z.rows(), 1, arch.seed_size, arch.seed_size};
    x.values.resize(arch.seed_channels, x.geo.columns());
    for (Index n = 0; n < z.rows(); ++n) {
      for (Index c = 0; c < arch.seed_channels; ++c) {
        x.values.row(c).segment(n * plane, plane) = seed.row(n).segment(c * plane, plane);
      }
    }

    outputs_.clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (static_cast<int>(i) == arch.spatial_layers) x = unfold_time(x, arch.seed_frames);
      x = layers_[i].forward(x, mode);
      if (i + 1 == layers_.size()) {
        x.values = x.values.array().tanh().matrix();
      } else {
        relu_inplace(x.values);
      }
      outputs_.push_back(x.values);
    }
    full_geo_ = x.geo;
    return crop_frames(x, config_.clip.frames);
  }

  /// Accumulates parameter gradients from d(loss)/d(output).
  void backward(const Activation<Scalar>& grad_out) {
    const auto& arch = config_.gen;
    Activation<Scalar> grad = pad_frames(grad_out, full_geo_);
    for (std::size_t k = layers_.size(); k-- > 0;) {
      grad.values = (k + 1 == layers_.size()) ? tanh_backward(grad.values, outputs_[k])
                                              : relu_backward(grad.values, outputs_[k]);
      grad = layers_[k].backward(grad, {true, true});
      if (static_cast<int>(k) == arch.spatial_layers) grad = fold_time(grad);
    }
    const Index plane = Index(arch.seed_size) * arch.seed_size;
    MatrixX<Scalar> grad_seed(grad.geo.batch, Index(arch.seed_channels) * plane);
    for (Index n = 0; n < grad.geo.batch; ++n) {
      for (Index c = 0; c < arch.seed_channels; ++c) {
        grad_seed.row(n).segment(c * plane, plane) = grad.values.row(c).segment(n * plane, plane);
      }
    }
    grad_seed = relu_backward(grad_seed, seed_out_);
    seed_.backward(grad_seed, {true, false});
  }

  const MatrixX<Scalar>& seed_output() const { return seed_out_; }
  const std::vector<MatrixX<Scalar>>& layer_outputs() const { return outputs_; }

  std::vector<Parameter<Scalar>*> parameters() {
    std::vector<Parameter<Scalar>*> out;
    seed_.collect(out);
    for (auto& layer : layers_) layer.collect(out);
    return out;
  }

  std::vector<NormalizedWeight<Scalar>*> normalized_weights() {
    std::vector<NormalizedWeight<Scalar>*> out{&seed_.weight()};
    for (auto& layer : layers_) out.push_back(&layer.weight());
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.setZero();
  }

 private:
  static Activation<Scalar> crop_frames(const Activation<Scalar>& x, Index frames) {
    if (x.geo.frames == frames) return x;
    const Index plane = x.geo.height * x.geo.width;
    Activation<Scalar> out;
    out.geo = x.geo;
    out.geo.frames = frames;
    out.values.resize(x.channels(), out.geo.columns());
    for (Index n = 0; n < x.geo.batch; ++n) {
      out.values.middleCols(n * frames * plane, frames * plane) =
          x.values.middleCols(n * x.geo.frames * plane, frames * plane);
    }
    return out;
  }

  static Activation<Scalar> pad_frames(const Activation<Scalar>& g, const Geometry& full) {
    if (g.geo.frames == full.frames) return g;
    const Index plane = full.height * full.width;
    Activation<Scalar> out;
    out.geo = full;
    out.geo.batch = g.geo.batch;
    out.values = MatrixX<Scalar>::Zero(g.channels(), out.geo.columns());
    for (Index n = 0; n < g.geo.batch; ++n) {
      out.values.middleCols(n * full.frames * plane, g.geo.frames * plane) =
          g.values.middleCols(n * g.geo.frames * plane, g.geo.frames * plane);
    }
    return out;
  }

  ModelConfig config_;
  Linear<Scalar> seed_;
  std::vector<ConvTranspose<Scalar>> layers_;
  MatrixX<Scalar> seed_out_;
  std::vector<MatrixX<Scalar>> outputs_;
  Geometry full_geo_;
};

}  // namespace ssgan
