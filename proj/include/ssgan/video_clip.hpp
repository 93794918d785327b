#pragma once

#include "ssgan/core.hpp"

#include <cmath>
#include <compare>
#include <string>

namespace ssgan {

struct ClipShape {
  int frames = 0;
  int channels = 0;
  int height = 0;
  int width = 0;

  Index frame_size() const { return Index(channels) * height * width; }
  Index size() const { return Index(frames) * frame_size(); }
  bool square() const { return height == width; }
  std::string str() const {
    return "(" + std::to_string(frames) + "," + std::to_string(channels) + "," +
           std::to_string(height) + "," + std::to_string(width) + ")";
  }
  auto operator<=>(const ClipShape&) const = default;
};

/// A T x C x H x W block of pixels, frame-major then channel, row, column.
template <typename Scalar>
class BasicVideoClip {
 public:
  BasicVideoClip() = default;
  explicit BasicVideoClip(ClipShape shape, Scalar fill = Scalar(-1))
      : shape_(shape), data_(VectorX<Scalar>::Constant(shape.size(), fill)) {
    if (shape.frames <= 0 || shape.channels <= 0 || shape.height <= 0 || shape.width <= 0) {
      throw ShapeError("clip dimensions must be positive, got " + shape.str());
    }
  }

  const ClipShape& shape() const { return shape_; }
  int frames() const { return shape_.frames; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }

  Index offset(int t, int c, int y, int x) const {
    return ((Index(t) * shape_.channels + c) * shape_.height + y) * shape_.width + x;
  }
  Scalar& operator()(int t, int c, int y, int x) { return data_[offset(t, c, y, x)]; }
  Scalar operator()(int t, int c, int y, int x) const { return data_[offset(t, c, y, x)]; }

  VectorX<Scalar>& data() { return data_; }
  const VectorX<Scalar>& data() const { return data_; }

  auto frame(int t) { return data_.segment(Index(t) * shape_.frame_size(), shape_.frame_size()); }
  auto frame(int t) const {
    return data_.segment(Index(t) * shape_.frame_size(), shape_.frame_size());
  }

  template <typename Other>
  BasicVideoClip<Other> cast() const {
    BasicVideoClip<Other> out(shape_);
    out.data() = data_.template cast<Other>();
    return out;
  }

  bool operator==(const BasicVideoClip& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  ClipShape shape_{};
  VectorX<Scalar> data_;
};

using VideoClip = BasicVideoClip<float>;

/// Checks the clip invariants: T >= 2, square frames, finite values in [-1, 1].
template <typename Scalar>
void validate_clip(const BasicVideoClip<Scalar>& clip) {
  if (clip.frames() < 2) throw ShapeError("clip needs at least 2 frames, got " + clip.shape().str());
  if (!clip.shape().square()) throw ShapeError("clip frames must be square, got " + clip.shape().str());
  for (Index i = 0; i < clip.data().size(); ++i) {
    const Scalar v = clip.data()[i];
    if (!std::isfinite(static_cast<double>(v)) || v < Scalar(-1) || v > Scalar(1)) {
      throw ParameterError("clip pixel out of [-1, 1] at flat index " + std::to_string(i));
    }
  }
}

}  // namespace ssgan
