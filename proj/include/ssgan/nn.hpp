#pragma once

#include "ssgan/core.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace ssgan {

/// Batch geometry of an activation whose values are laid out as
/// channels x (batch, frames, height, width).
struct Geometry {
  Index batch = 0;
  Index frames = 1;
  Index height = 1;
  Index width = 1;

  Index positions() const { return frames * height * width; }
  Index columns() const { return batch * positions(); }
  bool operator==(const Geometry&) const = default;
};

template <typename Scalar>
struct Activation {
  MatrixX<Scalar> values;
  Geometry geo;

  Index channels() const { return values.rows(); }
};

/// Kernel/stride/padding triples are ordered (time, height, width).
struct ConvSpec {
  int out_channels = 1;
  std::array<int, 3> kernel{1, 3, 3};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{0, 1, 1};
  std::array<int, 3> output_padding{0, 0, 0};

  Index kernel_volume() const { return Index(kernel[0]) * kernel[1] * kernel[2]; }
  bool operator==(const ConvSpec&) const = default;
};

Geometry conv_output(const Geometry& in, const ConvSpec& spec);
Geometry conv_transpose_output(const Geometry& in, const ConvSpec& spec);

template <typename Scalar>
struct Parameter {
  std::string name;
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols)
      : name(std::move(n)), value(MatrixX<Scalar>::Zero(rows, cols)),
        grad(MatrixX<Scalar>::Zero(rows, cols)) {}
};

template <typename Scalar>
void fill_normal(MatrixX<Scalar>& m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
}

// ---------------------------------------------------------------------------
// im2col / col2im

namespace detail {

// Output positions [begin, end) whose input index o*stride - pad + offset lies in [0, extent).
inline std::pair<Index, Index> valid_range(Index out_extent, Index in_extent, int stride, int pad,
                                           int offset) {
  Index begin = 0;
  while (begin < out_extent && begin * stride - pad + offset < 0) ++begin;
  Index end = out_extent;
  while (end > begin && (end - 1) * stride - pad + offset >= in_extent) --end;
  return {begin, end};
}

}  // namespace detail

/// Unfolds `input` (channels x in_geo.columns()) into a
/// (kernel volume * channels) x out_geo.columns() patch matrix. Patch rows
/// are ordered (dt, dy, dx, channel).
template <typename Scalar>
void im2col(const MatrixX<Scalar>& input, const Geometry& in_geo, const ConvSpec& spec,
            const Geometry& out_geo, MatrixX<Scalar>& cols) {
  const Index C = input.rows();
  const auto [kt, kh, kw] = spec.kernel;
  const auto [st, sh, sw] = spec.stride;
  const auto [pt, ph, pw] = spec.padding;
  const Index T = in_geo.frames, H = in_geo.height, W = in_geo.width;
  cols.resize(C * spec.kernel_volume(), out_geo.columns());
  const Scalar* in = input.data();
  Scalar* dst = cols.data();
  for (Index n = 0; n < out_geo.batch; ++n) {
    for (Index to = 0; to < out_geo.frames; ++to) {
      for (Index ho = 0; ho < out_geo.height; ++ho) {
        for (Index wo = 0; wo < out_geo.width; ++wo) {
          for (int dt = 0; dt < kt; ++dt) {
            const Index ti = to * st - pt + dt;
            const bool t_ok = ti >= 0 && ti < T;
            for (int dy = 0; dy < kh; ++dy) {
              const Index hi = ho * sh - ph + dy;
              const bool h_ok = t_ok && hi >= 0 && hi < H;
              for (int dx = 0; dx < kw; ++dx, dst += C) {
                const Index wi = wo * sw - pw + dx;
                if (h_ok && wi >= 0 && wi < W) {
                  const Scalar* src = in + (((n * T + ti) * H + hi) * W + wi) * C;
                  if (C == 1) *dst = *src;
                  else std::copy(src, src + C, dst);
                } else {
                  if (C == 1) *dst = Scalar(0);
                  else std::fill(dst, dst + C, Scalar(0));
                }
              }
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters patch columns back and accumulates into `target`.
template <typename Scalar>
void col2im(const MatrixX<Scalar>& cols, const Geometry& in_geo, const ConvSpec& spec,
            const Geometry& out_geo, MatrixX<Scalar>& target) {
  const Index C = target.rows();
  const auto [kt, kh, kw] = spec.kernel;
  const auto [st, sh, sw] = spec.stride;
  const auto [pt, ph, pw] = spec.padding;
  const Index T = in_geo.frames, H = in_geo.height, W = in_geo.width;
  Scalar* out = target.data();
  const Scalar* src = cols.data();
  for (Index n = 0; n < out_geo.batch; ++n) {
    for (Index to = 0; to < out_geo.frames; ++to) {
      for (Index ho = 0; ho < out_geo.height; ++ho) {
        for (Index wo = 0; wo < out_geo.width; ++wo) {
          for (int dt = 0; dt < kt; ++dt) {
            const Index ti = to * st - pt + dt;
            const bool t_ok = ti >= 0 && ti < T;
            for (int dy = 0; dy < kh; ++dy) {
              const Index hi = ho * sh - ph + dy;
              const bool h_ok = t_ok && hi >= 0 && hi < H;
              for (int dx = 0; dx < kw; ++dx, src += C) {
                const Index wi = wo * sw - pw + dx;
                if (h_ok && wi >= 0 && wi < W) {
                  Scalar* dst = out + (((n * T + ti) * H + hi) * W + wi) * C;
                  if (C == 1) *dst += *src;
                  else for (Index c = 0; c < C; ++c) dst[c] += src[c];
                }
              }
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Spectral normalization

inline constexpr double kSpectralEpsilon = 1e-12;

template <typename Scalar>
struct SpectralState {
  VectorX<Scalar> u;  // left singular vector estimate (rows)
  VectorX<Scalar> v;  // right singular vector estimate (cols)
};

template <typename Scalar>
VectorX<Scalar> normalized(const VectorX<Scalar>& x) {
  const Scalar norm = std::max<Scalar>(x.norm(), Scalar(kSpectralEpsilon));
  return x / norm;
}

template <typename Scalar>
SpectralState<Scalar> init_spectral_state(const MatrixX<Scalar>& weight, Rng& rng) {
  SpectralState<Scalar> state;
  state.u.resize(weight.rows());
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Index i = 0; i < state.u.size(); ++i) state.u[i] = static_cast<Scalar>(dist(rng));
  state.u = normalized<Scalar>(state.u);
  state.v = normalized<Scalar>(weight.transpose() * state.u);
  return state;
}

/// One power-iteration step on the stored singular vectors.
template <typename Scalar>
void power_iteration(const MatrixX<Scalar>& weight, SpectralState<Scalar>& state) {
  state.v = normalized<Scalar>(weight.transpose() * state.u);
  state.u = normalized<Scalar>(weight * state.v);
}

/// Current top singular value estimate u^T W v, floored at epsilon.
template <typename Scalar>
Scalar spectral_sigma(const MatrixX<Scalar>& weight, const SpectralState<Scalar>& state) {
  const Scalar sigma = state.u.dot(weight * state.v);
  return std::max<Scalar>(sigma, Scalar(kSpectralEpsilon));
}

/// W / sigma. Train mode advances the power iteration first; eval mode uses
/// the stored vectors unchanged.
template <typename Scalar>
MatrixX<Scalar> spectral_normalize(const MatrixX<Scalar>& weight, SpectralState<Scalar>& state,
                                   Mode mode, Scalar* sigma_out = nullptr) {
  if (mode == Mode::train) power_iteration(weight, state);
  const Scalar sigma = spectral_sigma(weight, state);
  if (sigma_out) *sigma_out = sigma;
  return weight / sigma;
}

/// Gradient w.r.t. the raw weight given the gradient w.r.t. W / sigma,
/// with u and v held constant: (G - <G, W_sn> u v^T) / sigma.
template <typename Scalar>
MatrixX<Scalar> spectral_backward(const MatrixX<Scalar>& grad_normalized,
                                  const MatrixX<Scalar>& weight_normalized,
                                  const SpectralState<Scalar>& state, Scalar sigma) {
  const Scalar inner = grad_normalized.cwiseProduct(weight_normalized).sum();
  MatrixX<Scalar> grad = grad_normalized;
  grad.noalias() -= inner * (state.u * state.v.transpose());
  return grad / sigma;
}

/// Holds a weight that is optionally spectrally normalized before use.
template <typename Scalar>
class NormalizedWeight {
 public:
  NormalizedWeight() = default;
  NormalizedWeight(std::string name, Index rows, Index cols, double init_std, bool spectral,
                   Rng& rng)
      : param_(std::move(name), rows, cols), spectral_(spectral) {
    fill_normal(param_.value, init_std, rng);
    if (spectral_) state_ = init_spectral_state(param_.value, rng);
  }

  const MatrixX<Scalar>& effective(Mode mode) {
    if (!spectral_) return param_.value;
    effective_ = spectral_normalize(param_.value, state_, mode, &sigma_);
    return effective_;
  }
  const MatrixX<Scalar>& last_effective() const { return spectral_ ? effective_ : param_.value; }

  void accumulate_grad(const MatrixX<Scalar>& grad_effective) {
    if (spectral_) {
      param_.grad += spectral_backward(grad_effective, effective_, state_, sigma_);
    } else {
      param_.grad += grad_effective;
    }
  }

  void advance_power_iteration() {
    if (spectral_) power_iteration(param_.value, state_);
  }

  Parameter<Scalar>& param() { return param_; }
  const Parameter<Scalar>& param() const { return param_; }
  bool spectral() const { return spectral_; }
  SpectralState<Scalar>& state() { return state_; }
  const SpectralState<Scalar>& state() const { return state_; }

 private:
  Parameter<Scalar> param_;
  bool spectral_ = false;
  SpectralState<Scalar> state_;
  MatrixX<Scalar> effective_;
  Scalar sigma_ = Scalar(1);
};

struct BackwardFlags {
  bool param_grads = true;
  bool input_grad = true;
};

// ---------------------------------------------------------------------------
// Layers

/// Strided 3D convolution; a 2D convolution is the kernel-depth-1 case.
template <typename Scalar>
class Conv {
 public:
  Conv() = default;
  Conv(const std::string& name, int in_channels, const ConvSpec& spec, bool spectral, Rng& rng)
      : spec_(spec), in_channels_(in_channels),
        weight_(name + "/weight", spec.out_channels, in_channels * spec.kernel_volume(),
                std::sqrt(2.0 / double(in_channels * spec.kernel_volume())), spectral, rng),
        bias_(name + "/bias", spec.out_channels, 1) {}

  Activation<Scalar> forward(const Activation<Scalar>& in, Mode mode) {
    if (in.channels() != in_channels_) {
      throw ShapeError("conv expected " + std::to_string(in_channels_) + " channels, got " +
                       std::to_string(in.channels()));
    }
    in_geo_ = in.geo;
    Activation<Scalar> out;
    out.geo = conv_output(in.geo, spec_);
    im2col(in.values, in.geo, spec_, out.geo, cols_);
    out.values.noalias() = weight_.effective(mode) * cols_;
    out.values.colwise() += bias_.value.col(0);
    return out;
  }

  Activation<Scalar> backward(const Activation<Scalar>& grad_out, BackwardFlags flags) {
    Activation<Scalar> grad_in;
    if (flags.param_grads) {
      MatrixX<Scalar> grad_w = grad_out.values * cols_.transpose();
      weight_.accumulate_grad(grad_w);
      bias_.grad.col(0) += grad_out.values.rowwise().sum();
    }
    if (flags.input_grad) {
      MatrixX<Scalar> grad_cols = weight_.last_effective().transpose() * grad_out.values;
      grad_in.geo = in_geo_;
      grad_in.values = MatrixX<Scalar>::Zero(in_channels_, in_geo_.columns());
      col2im(grad_cols, in_geo_, spec_, grad_out.geo, grad_in.values);
    }
    return grad_in;
  }

  void collect(std::vector<Parameter<Scalar>*>& out) {
    out.push_back(&weight_.param());
    out.push_back(&bias_);
  }
  NormalizedWeight<Scalar>& weight() { return weight_; }
  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  int in_channels_ = 0;
  NormalizedWeight<Scalar> weight_;
  Parameter<Scalar> bias_;
  Geometry in_geo_;
  MatrixX<Scalar> cols_;
};

/// Transposed (fractionally strided) convolution: the adjoint of Conv's
/// input map. Weight is in_channels x (out_channels * kernel volume).
template <typename Scalar>
class ConvTranspose {
 public:
  ConvTranspose() = default;
  ConvTranspose(const std::string& name, int in_channels, const ConvSpec& spec, bool spectral,
                Rng& rng)
      : spec_(spec), in_channels_(in_channels),
        weight_(name + "/weight", in_channels, spec.out_channels * spec.kernel_volume(),
                std::sqrt(2.0 * double(spec.stride[0]) * spec.stride[1] * spec.stride[2] /
                          double(in_channels * spec.kernel_volume())),
                spectral, rng),
        bias_(name + "/bias", spec.out_channels, 1) {}

  Activation<Scalar> forward(const Activation<Scalar>& in, Mode mode) {
    if (in.channels() != in_channels_) {
      throw ShapeError("transposed conv expected " + std::to_string(in_channels_) +
                       " channels, got " + std::to_string(in.channels()));
    }
    input_ = in;
    Activation<Scalar> out;
    out.geo = conv_transpose_output(in.geo, spec_);
    MatrixX<Scalar> cols = weight_.effective(mode).transpose() * in.values;
    out.values = MatrixX<Scalar>::Zero(spec_.out_channels, out.geo.columns());
    col2im(cols, out.geo, spec_, in.geo, out.values);
    out.values.colwise() += bias_.value.col(0);
    return out;
  }

  Activation<Scalar> backward(const Activation<Scalar>& grad_out, BackwardFlags flags) {
    MatrixX<Scalar> grad_cols;
    im2col(grad_out.values, grad_out.geo, spec_, input_.geo, grad_cols);
    Activation<Scalar> grad_in;
    if (flags.param_grads) {
      MatrixX<Scalar> grad_w = input_.values * grad_cols.transpose();
      weight_.accumulate_grad(grad_w);
      bias_.grad.col(0) += grad_out.values.rowwise().sum();
    }
    if (flags.input_grad) {
      grad_in.geo = input_.geo;
      grad_in.values.noalias() = weight_.last_effective() * grad_cols;
    }
    return grad_in;
  }

  void collect(std::vector<Parameter<Scalar>*>& out) {
    out.push_back(&weight_.param());
    out.push_back(&bias_);
  }
  NormalizedWeight<Scalar>& weight() { return weight_; }
  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  int in_channels_ = 0;
  NormalizedWeight<Scalar> weight_;
  Parameter<Scalar> bias_;
  Activation<Scalar> input_;
};

/// Affine map on rows: Y = X W^T + b. Inputs are samples x features.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in_features, Index out_features, bool spectral, Rng& rng)
      : weight_(name + "/weight", out_features, in_features, std::sqrt(1.0 / double(in_features)),
                spectral, rng),
        bias_(name + "/bias", out_features, 1) {}

  MatrixX<Scalar> forward(const MatrixX<Scalar>& x, Mode mode) {
    input_ = x;
    MatrixX<Scalar> y = x * weight_.effective(mode).transpose();
    y.rowwise() += bias_.value.col(0).transpose();
    return y;
  }

  MatrixX<Scalar> backward(const MatrixX<Scalar>& grad_out, BackwardFlags flags) {
    if (flags.param_grads) {
      MatrixX<Scalar> grad_w = grad_out.transpose() * input_;
      weight_.accumulate_grad(grad_w);
      bias_.grad.col(0) += grad_out.colwise().sum().transpose();
    }
    if (!flags.input_grad) return {};
    return grad_out * weight_.last_effective();
  }

  void collect(std::vector<Parameter<Scalar>*>& out) {
    out.push_back(&weight_.param());
    out.push_back(&bias_);
  }
  NormalizedWeight<Scalar>& weight() { return weight_; }
  Index in_features() const { return weight_.param().value.cols(); }
  Index out_features() const { return weight_.param().value.rows(); }

 private:
  NormalizedWeight<Scalar> weight_;
  Parameter<Scalar> bias_;
  MatrixX<Scalar> input_;
};

// ---------------------------------------------------------------------------
// Pointwise nonlinearities. Backward passes take the forward output.

template <typename Derived>
void leaky_relu_inplace(Eigen::MatrixBase<Derived>& x, double slope) {
  using Scalar = typename Derived::Scalar;
  x = x.unaryExpr([s = Scalar(slope)](Scalar v) { return v > Scalar(0) ? v : s * v; });
}

template <typename Scalar>
MatrixX<Scalar> leaky_relu_backward(const MatrixX<Scalar>& grad, const MatrixX<Scalar>& out,
                                    double slope) {
  return grad.binaryExpr(out, [s = Scalar(slope)](Scalar g, Scalar o) {
    return o > Scalar(0) ? g : s * g;
  });
}

template <typename Derived>
void relu_inplace(Eigen::MatrixBase<Derived>& x) {
  x = x.cwiseMax(typename Derived::Scalar(0));
}

template <typename Scalar>
MatrixX<Scalar> relu_backward(const MatrixX<Scalar>& grad, const MatrixX<Scalar>& out) {
  return grad.binaryExpr(out, [](Scalar g, Scalar o) { return o > Scalar(0) ? g : Scalar(0); });
}

template <typename Scalar>
MatrixX<Scalar> tanh_backward(const MatrixX<Scalar>& grad, const MatrixX<Scalar>& out) {
  return grad.binaryExpr(out, [](Scalar g, Scalar o) { return g * (Scalar(1) - o * o); });
}

}  // namespace ssgan
