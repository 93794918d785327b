#pragma once

#include "ssgan/core.hpp"
#include "ssgan/video_clip.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ssgan {

enum class Family : std::uint8_t { rotation = 0, translation = 1, shear = 2, temporal = 3 };
enum class Axis : std::uint8_t { vertical = 0, horizontal = 1, both = 2 };

inline constexpr int kTransformClasses = 11;
inline constexpr int kFamilies = 4;
using ClassMask = std::array<bool, kTransformClasses>;

std::string_view family_name(Family f);
Family parse_family(std::string_view name);
std::string_view axis_name(Axis a);

/// Set of enabled transformation families.
class FamilySet {
 public:
  constexpr FamilySet() = default;
  constexpr FamilySet(std::initializer_list<Family> families) {
    for (Family f : families) insert(f);
  }
  static constexpr FamilySet all() {
    return {Family::rotation, Family::translation, Family::shear, Family::temporal};
  }
  static constexpr FamilySet spatial() {
    return {Family::rotation, Family::translation, Family::shear};
  }

  constexpr void insert(Family f) { bits_ |= std::uint8_t(1u << unsigned(f)); }
  constexpr bool contains(Family f) const { return (bits_ >> unsigned(f)) & 1u; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }
  int size() const;
  std::vector<Family> members() const;

  /// Comma separated, in canonical family order ("rotation,temporal").
  std::string str() const;
  static FamilySet parse(std::string_view list);

  constexpr bool operator==(const FamilySet&) const = default;

 private:
  std::uint8_t bits_ = 0;
};

/// Categorical part of a transformation class.
struct ClassInfo {
  Family family = Family::rotation;
  int quarter_turns = 0;
  Axis axis = Axis::vertical;
  bool operator==(const ClassInfo&) const = default;
};

// 0-3 rotation by k quarter turns, 4-6 translation, 7-9 shear
// (vertical/horizontal/both), 10 temporal shuffle.
int encode_class(const ClassInfo& info);
ClassInfo decode_class(int class_id);
ClassMask class_mask(FamilySet families);
std::vector<int> enabled_classes(FamilySet families);

struct TransformLabel {
  int class_id = 0;
  Family family = Family::rotation;
  int quarter_turns = 0;
  Axis axis = Axis::vertical;
  int shift_rows = 0;
  int shift_cols = 0;
  double shear_vertical = 0.0;
  double shear_horizontal = 0.0;
  std::vector<int> permutation;

  static TransformLabel rotation(int quarter_turns);
  static TransformLabel translation(Axis axis, int rows, int cols);
  static TransformLabel shear(Axis axis, double vertical, double horizontal);
  static TransformLabel shuffle(std::vector<int> permutation);
  bool operator==(const TransformLabel&) const = default;
};

inline constexpr double kMaxShiftFraction = 0.25;
inline constexpr double kMinShiftFraction = 0.10;
inline constexpr double kMaxShear = 0.3;
inline constexpr double kMinShear = 0.1;

int max_shift(int side);
int min_shift(int side);

/// Gather map from output to input indices. The same spatial map is used for
/// every frame and channel; an empty map means identity.
struct ResamplePlan {
  ClipShape shape;
  std::vector<int> frame_source;    // output frame i reads input frame frame_source[i]
  std::vector<Index> pixel_source;  // output pixel p reads input pixel; -1 reads fill
  double fill = -1.0;

  template <typename Scalar>
  BasicVideoClip<Scalar> apply(const BasicVideoClip<Scalar>& clip) const;

  /// Transpose of the linear part of apply (the fill constant drops out).
  template <typename Scalar>
  BasicVideoClip<Scalar> adjoint(const BasicVideoClip<Scalar>& grad_out) const;
};

ResamplePlan rotation_plan(const ClipShape& shape, int quarter_turns);
ResamplePlan translation_plan(const ClipShape& shape, Axis axis, int rows, int cols);
ResamplePlan shear_plan(const ClipShape& shape, Axis axis, double vertical, double horizontal);
ResamplePlan shuffle_plan(const ClipShape& shape, std::span<const int> permutation);
ResamplePlan plan_for(const TransformLabel& label, const ClipShape& shape);

/// Throws ParameterError/ShapeError if the label cannot be applied to clips of this shape.
void validate_label(const TransformLabel& label, const ClipShape& shape);

template <typename Scalar>
BasicVideoClip<Scalar> apply_rotation(const BasicVideoClip<Scalar>& clip, int quarter_turns) {
  return rotation_plan(clip.shape(), quarter_turns).apply(clip);
}

template <typename Scalar>
BasicVideoClip<Scalar> apply_translation(const BasicVideoClip<Scalar>& clip, Axis axis, int rows,
                                         int cols) {
  return translation_plan(clip.shape(), axis, rows, cols).apply(clip);
}

template <typename Scalar>
BasicVideoClip<Scalar> apply_shear(const BasicVideoClip<Scalar>& clip, Axis axis, double vertical,
                                   double horizontal) {
  return shear_plan(clip.shape(), axis, vertical, horizontal).apply(clip);
}

template <typename Scalar>
BasicVideoClip<Scalar> apply_shuffle(const BasicVideoClip<Scalar>& clip,
                                     std::span<const int> permutation) {
  return shuffle_plan(clip.shape(), permutation).apply(clip);
}

template <typename Scalar>
BasicVideoClip<Scalar> apply(const TransformLabel& label, const BasicVideoClip<Scalar>& clip) {
  return plan_for(label, clip.shape()).apply(clip);
}

/// Label that undoes `label` exactly (rotation and shuffle only).
TransformLabel inverse(const TransformLabel& label);

/// Draws a class uniformly over the enabled classes, then its continuous
/// parameters uniformly from their legal ranges.
TransformLabel sample_transform(FamilySet enabled, const ClipShape& shape, Rng& rng);

// ---------------------------------------------------------------------------

template <typename Scalar>
BasicVideoClip<Scalar> ResamplePlan::apply(const BasicVideoClip<Scalar>& clip) const {
  if (clip.shape() != shape) {
    throw ShapeError("plan built for " + shape.str() + " applied to " + clip.shape().str());
  }
  BasicVideoClip<Scalar> out(shape);
  const Index plane = Index(shape.height) * shape.width;
  const Scalar fill_value = static_cast<Scalar>(fill);
  for (int t = 0; t < shape.frames; ++t) {
    const int src_t = frame_source.empty() ? t : frame_source[t];
    for (int c = 0; c < shape.channels; ++c) {
      const Scalar* src = clip.data().data() + clip.offset(src_t, c, 0, 0);
      Scalar* dst = out.data().data() + out.offset(t, c, 0, 0);
      if (pixel_source.empty()) {
        std::copy(src, src + plane, dst);
      } else {
        for (Index p = 0; p < plane; ++p) {
          const Index s = pixel_source[p];
          dst[p] = s < 0 ? fill_value : src[s];
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
BasicVideoClip<Scalar> ResamplePlan::adjoint(const BasicVideoClip<Scalar>& grad_out) const {
  if (grad_out.shape() != shape) {
    throw ShapeError("plan built for " + shape.str() + " adjoint on " + grad_out.shape().str());
  }
  BasicVideoClip<Scalar> grad_in(shape, Scalar(0));
  const Index plane = Index(shape.height) * shape.width;
  for (int t = 0; t < shape.frames; ++t) {
    const int src_t = frame_source.empty() ? t : frame_source[t];
    for (int c = 0; c < shape.channels; ++c) {
      const Scalar* g = grad_out.data().data() + grad_out.offset(t, c, 0, 0);
      Scalar* dst = grad_in.data().data() + grad_in.offset(src_t, c, 0, 0);
      if (pixel_source.empty()) {
        for (Index p = 0; p < plane; ++p) dst[p] += g[p];
      } else {
        for (Index p = 0; p < plane; ++p) {
          const Index s = pixel_source[p];
          if (s >= 0) dst[s] += g[p];
        }
      }
    }
  }
  return grad_in;
}

}  // namespace ssgan
