#include "ssgan/objective.hpp"

namespace ssgan {

std::vector<TransformLabel> sample_labels(Index count, FamilySet families, const ClipShape& shape,
                                          Rng& rng) {
  std::vector<TransformLabel> labels;
  labels.reserve(count);
  for (Index i = 0; i < count; ++i) labels.push_back(sample_transform(families, shape, rng));
  return labels;
}

}  // namespace ssgan
