#include "ssgan/transforms.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace ssgan {

namespace {

constexpr std::array<std::string_view, kFamilies> kFamilyNames = {"rotation", "translation",
                                                                  "shear", "temporal"};

bool has_vertical(Axis a) { return a == Axis::vertical || a == Axis::both; }
bool has_horizontal(Axis a) { return a == Axis::horizontal || a == Axis::both; }

Index round_half_up(double v) { return static_cast<Index>(std::floor(v + 0.5)); }

void require_spatial(const ClipShape& shape) {
  if (shape.frames <= 0 || shape.channels <= 0 || shape.height <= 0 || shape.width <= 0) {
    throw ShapeError("invalid clip shape " + shape.str());
  }
}

}  // namespace

std::string_view family_name(Family f) { return kFamilyNames[static_cast<int>(f)]; }

Family parse_family(std::string_view name) {
  for (int i = 0; i < kFamilies; ++i) {
    if (kFamilyNames[i] == name) return static_cast<Family>(i);
  }
  throw ConfigError("unknown transformation family '" + std::string(name) + "'");
}

std::string_view axis_name(Axis a) {
  switch (a) {
    case Axis::vertical: return "vertical";
    case Axis::horizontal: return "horizontal";
    case Axis::both: return "both";
  }
  return "?";
}

int FamilySet::size() const { return std::popcount(bits_); }

std::vector<Family> FamilySet::members() const {
  std::vector<Family> out;
  for (int i = 0; i < kFamilies; ++i) {
    if (contains(static_cast<Family>(i))) out.push_back(static_cast<Family>(i));
  }
  return out;
}

std::string FamilySet::str() const {
  std::string out;
  for (Family f : members()) {
    if (!out.empty()) out += ',';
    out += family_name(f);
  }
  return out;
}

FamilySet FamilySet::parse(std::string_view list) {
  FamilySet set;
  while (!list.empty()) {
    const auto comma = list.find(',');
    std::string_view item = list.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) set.insert(parse_family(item));
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 1);
  }
  return set;
}

int encode_class(const ClassInfo& info) {
  switch (info.family) {
    case Family::rotation:
      if (info.quarter_turns < 0 || info.quarter_turns > 3) {
        throw ParameterError("rotation quarter turns must be in 0..3");
      }
      return info.quarter_turns;
    case Family::translation: return 4 + static_cast<int>(info.axis);
    case Family::shear: return 7 + static_cast<int>(info.axis);
    case Family::temporal: return 10;
  }
  throw ParameterError("unknown family");
}

ClassInfo decode_class(int class_id) {
  if (class_id < 0 || class_id >= kTransformClasses) {
    throw ParameterError("class id out of range: " + std::to_string(class_id));
  }
  if (class_id < 4) return {Family::rotation, class_id, Axis::vertical};
  if (class_id < 7) return {Family::translation, 0, static_cast<Axis>(class_id - 4)};
  if (class_id < 10) return {Family::shear, 0, static_cast<Axis>(class_id - 7)};
  return {Family::temporal, 0, Axis::vertical};
}

ClassMask class_mask(FamilySet families) {
  ClassMask mask{};
  for (int id = 0; id < kTransformClasses; ++id) mask[id] = families.contains(decode_class(id).family);
  return mask;
}

std::vector<int> enabled_classes(FamilySet families) {
  std::vector<int> ids;
  const ClassMask mask = class_mask(families);
  for (int id = 0; id < kTransformClasses; ++id) {
    if (mask[id]) ids.push_back(id);
  }
  return ids;
}

TransformLabel TransformLabel::rotation(int quarter_turns) {
  TransformLabel label;
  label.family = Family::rotation;
  label.quarter_turns = quarter_turns;
  label.class_id = encode_class({Family::rotation, quarter_turns, Axis::vertical});
  return label;
}

TransformLabel TransformLabel::translation(Axis axis, int rows, int cols) {
  TransformLabel label;
  label.family = Family::translation;
  label.axis = axis;
  label.shift_rows = rows;
  label.shift_cols = cols;
  label.class_id = encode_class({Family::translation, 0, axis});
  return label;
}

TransformLabel TransformLabel::shear(Axis axis, double vertical, double horizontal) {
  TransformLabel label;
  label.family = Family::shear;
  label.axis = axis;
  label.shear_vertical = vertical;
  label.shear_horizontal = horizontal;
  label.class_id = encode_class({Family::shear, 0, axis});
  return label;
}

TransformLabel TransformLabel::shuffle(std::vector<int> permutation) {
  TransformLabel label;
  label.family = Family::temporal;
  label.permutation = std::move(permutation);
  label.class_id = encode_class({Family::temporal, 0, Axis::vertical});
  return label;
}

int max_shift(int side) { return static_cast<int>(std::floor(kMaxShiftFraction * side)); }

int min_shift(int side) {
  return std::max(1, static_cast<int>(std::lround(kMinShiftFraction * side)));
}

ResamplePlan rotation_plan(const ClipShape& shape, int quarter_turns) {
  require_spatial(shape);
  if (quarter_turns < 0 || quarter_turns > 3) {
    throw ParameterError("rotation quarter turns must be in 0..3, got " +
                         std::to_string(quarter_turns));
  }
  if (!shape.square()) throw ShapeError("rotation needs square frames, got " + shape.str());
  ResamplePlan plan{shape, {}, {}};
  if (quarter_turns == 0) return plan;
  const int n = shape.height;
  plan.pixel_source.resize(Index(n) * n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // Counterclockwise: out(y, x) = in(x, n-1-y) for one quarter turn.
      int sy = y, sx = x;
      switch (quarter_turns) {
        case 1: sy = x; sx = n - 1 - y; break;
        case 2: sy = n - 1 - y; sx = n - 1 - x; break;
        case 3: sy = n - 1 - x; sx = y; break;
      }
      plan.pixel_source[Index(y) * n + x] = Index(sy) * n + sx;
    }
  }
  return plan;
}

ResamplePlan translation_plan(const ClipShape& shape, Axis axis, int rows, int cols) {
  require_spatial(shape);
  const int row_bound = max_shift(shape.height);
  const int col_bound = max_shift(shape.width);
  if (has_vertical(axis)) {
    if (rows == 0) throw ParameterError("vertical translation needs a nonzero row offset");
    if (std::abs(rows) > row_bound) {
      throw ParameterError("row offset " + std::to_string(rows) + " exceeds bound " +
                           std::to_string(row_bound));
    }
  } else if (rows != 0) {
    throw ParameterError("row offset given for horizontal-only translation");
  }
  if (has_horizontal(axis)) {
    if (cols == 0) throw ParameterError("horizontal translation needs a nonzero column offset");
    if (std::abs(cols) > col_bound) {
      throw ParameterError("column offset " + std::to_string(cols) + " exceeds bound " +
                           std::to_string(col_bound));
    }
  } else if (cols != 0) {
    throw ParameterError("column offset given for vertical-only translation");
  }

  ResamplePlan plan{shape, {}, {}};
  plan.pixel_source.resize(Index(shape.height) * shape.width);
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const int sy = y - rows;
      const int sx = x - cols;
      const bool inside = sy >= 0 && sy < shape.height && sx >= 0 && sx < shape.width;
      plan.pixel_source[Index(y) * shape.width + x] = inside ? Index(sy) * shape.width + sx : -1;
    }
  }
  return plan;
}

ResamplePlan shear_plan(const ClipShape& shape, Axis axis, double vertical, double horizontal) {
  require_spatial(shape);
  if (!std::isfinite(vertical) || !std::isfinite(horizontal)) {
    throw ParameterError("shear factors must be finite");
  }
  if (!has_vertical(axis) && vertical != 0.0) {
    throw ParameterError("vertical shear factor given for horizontal-only shear");
  }
  if (!has_horizontal(axis) && horizontal != 0.0) {
    throw ParameterError("horizontal shear factor given for vertical-only shear");
  }
  if (std::abs(vertical) > kMaxShear || std::abs(horizontal) > kMaxShear) {
    throw ParameterError("shear factor exceeds bound 0.3");
  }
  ResamplePlan plan{shape, {}, {}};
  if (vertical == 0.0 && horizontal == 0.0) return plan;

  // Forward map about the centre: x' = x + h*(y-c), y' = y + v*(x-c).
  // Each output pixel samples the nearest source of the inverse map.
  const double cy = 0.5 * (shape.height - 1);
  const double cx = 0.5 * (shape.width - 1);
  const double det = 1.0 - horizontal * vertical;
  plan.pixel_source.resize(Index(shape.height) * shape.width);
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      const Index sx = round_half_up(cx + (dx - horizontal * dy) / det);
      const Index sy = round_half_up(cy + (dy - vertical * dx) / det);
      const bool inside = sy >= 0 && sy < shape.height && sx >= 0 && sx < shape.width;
      plan.pixel_source[Index(y) * shape.width + x] = inside ? sy * shape.width + sx : -1;
    }
  }
  return plan;
}

ResamplePlan shuffle_plan(const ClipShape& shape, std::span<const int> permutation) {
  require_spatial(shape);
  if (static_cast<int>(permutation.size()) != shape.frames) {
    throw ParameterError("permutation length " + std::to_string(permutation.size()) +
                         " does not match " + std::to_string(shape.frames) + " frames");
  }
  std::vector<bool> seen(permutation.size(), false);
  bool identity = true;
  for (std::size_t i = 0; i < permutation.size(); ++i) {
    const int p = permutation[i];
    if (p < 0 || p >= shape.frames || seen[p]) throw ParameterError("not a permutation");
    seen[p] = true;
    identity = identity && p == static_cast<int>(i);
  }
  if (identity) throw ParameterError("identity permutation is not a shuffle");
  return ResamplePlan{shape, std::vector<int>(permutation.begin(), permutation.end()), {}};
}

ResamplePlan plan_for(const TransformLabel& label, const ClipShape& shape) {
  const ClassInfo info = decode_class(label.class_id);
  if (info.family != label.family) throw ParameterError("class id does not match family");
  switch (label.family) {
    case Family::rotation:
      if (info.quarter_turns != label.quarter_turns) {
        throw ParameterError("class id does not match quarter turns");
      }
      return rotation_plan(shape, label.quarter_turns);
    case Family::translation:
      if (info.axis != label.axis) throw ParameterError("class id does not match axis");
      return translation_plan(shape, label.axis, label.shift_rows, label.shift_cols);
    case Family::shear:
      if (info.axis != label.axis) throw ParameterError("class id does not match axis");
      return shear_plan(shape, label.axis, label.shear_vertical, label.shear_horizontal);
    case Family::temporal: return shuffle_plan(shape, label.permutation);
  }
  throw ParameterError("unknown family");
}

void validate_label(const TransformLabel& label, const ClipShape& shape) {
  (void)plan_for(label, shape);
  if (label.family == Family::shear) {
    if (has_vertical(label.axis) && label.shear_vertical == 0.0) {
      throw ParameterError("active vertical shear factor is zero");
    }
    if (has_horizontal(label.axis) && label.shear_horizontal == 0.0) {
      throw ParameterError("active horizontal shear factor is zero");
    }
  }
}

TransformLabel inverse(const TransformLabel& label) {
  switch (label.family) {
    case Family::rotation: return TransformLabel::rotation((4 - label.quarter_turns) % 4);
    case Family::temporal: {
      std::vector<int> inv(label.permutation.size());
      for (std::size_t i = 0; i < label.permutation.size(); ++i) {
        inv[label.permutation[i]] = static_cast<int>(i);
      }
      return TransformLabel::shuffle(std::move(inv));
    }
    default: throw ParameterError("only rotation and shuffle have exact inverses");
  }
}

TransformLabel sample_transform(FamilySet enabled, const ClipShape& shape, Rng& rng) {
  if (enabled.empty()) throw ConfigError("no transformation family enabled");
  const std::vector<int> ids = enabled_classes(enabled);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(ids.size()) - 1);
  const ClassInfo info = decode_class(ids[pick(rng)]);

  auto signed_shift = [&rng](int side) {
    const int lo = min_shift(side);
    const int hi = max_shift(side);
    if (hi < lo) throw ParameterError("frame too small to translate");
    const int magnitude = std::uniform_int_distribution<int>(lo, hi)(rng);
    return std::bernoulli_distribution(0.5)(rng) ? magnitude : -magnitude;
  };
  auto signed_shear = [&rng]() {
    const double magnitude = std::uniform_real_distribution<double>(kMinShear, kMaxShear)(rng);
    return std::bernoulli_distribution(0.5)(rng) ? magnitude : -magnitude;
  };

  switch (info.family) {
    case Family::rotation: return TransformLabel::rotation(info.quarter_turns);
    case Family::translation: {
      const int rows = has_vertical(info.axis) ? signed_shift(shape.height) : 0;
      const int cols = has_horizontal(info.axis) ? signed_shift(shape.width) : 0;
      return TransformLabel::translation(info.axis, rows, cols);
    }
    case Family::shear: {
      const double v = has_vertical(info.axis) ? signed_shear() : 0.0;
      const double h = has_horizontal(info.axis) ? signed_shear() : 0.0;
      return TransformLabel::shear(info.axis, v, h);
    }
    case Family::temporal: {
      if (shape.frames < 2) throw ShapeError("shuffle needs at least 2 frames");
      std::vector<int> perm(shape.frames);
      std::iota(perm.begin(), perm.end(), 0);
      // Rejection keeps the draw uniform over non-identity permutations.
      do {
        std::shuffle(perm.begin(), perm.end(), rng);
      } while (std::is_sorted(perm.begin(), perm.end()));
      return TransformLabel::shuffle(std::move(perm));
    }
  }
  throw ParameterError("unknown family");
}

}  // namespace ssgan
