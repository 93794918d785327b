#pragma once

#include "ssgan/losses.hpp"
#include "ssgan/models.hpp"
#include "ssgan/transforms.hpp"

#include <span>
#include <vector>

namespace ssgan {

/// Whether the self-supervised branch exists at all. The disabled
/// instantiation never samples, transforms or forwards auxiliary batches.
enum class AuxPath { enabled, disabled };

struct LossWeights {
  double alpha = 0.25;  // generator auxiliary weight
  double beta = 1.0;    // discriminator auxiliary weight
};

struct LossBreakdown {
  double adversarial_g = 0.0;
  double adversarial_d = 0.0;
  double aux_g = 0.0;
  double aux_d = 0.0;
  double total_g = 0.0;
  double total_d = 0.0;
};

std::vector<TransformLabel> sample_labels(Index count, FamilySet families, const ClipShape& shape,
                                          Rng& rng);

template <typename Scalar>
struct TransformedBatch {
  Activation<Scalar> clips;
  std::vector<int> labels;
  std::vector<ResamplePlan> plans;
};

template <typename Scalar>
TransformedBatch<Scalar> transform_batch(const Activation<Scalar>& batch,
                                         std::span<const TransformLabel> labels) {
  std::vector<BasicVideoClip<Scalar>> clips = to_clips(batch);
  if (clips.size() != labels.size()) throw ContractError("one label per clip required");
  TransformedBatch<Scalar> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    out.plans.push_back(plan_for(labels[i], clips[i].shape()));
    clips[i] = out.plans.back().apply(clips[i]);
    out.labels.push_back(labels[i].class_id);
  }
  out.clips = to_activation<Scalar>(clips);
  return out;
}

/// Pulls a gradient on transformed clips back onto the untransformed batch.
template <typename Scalar>
Activation<Scalar> transform_batch_adjoint(const Activation<Scalar>& grad,
                                           std::span<const ResamplePlan> plans) {
  std::vector<BasicVideoClip<Scalar>> clips = to_clips(grad);
  for (std::size_t i = 0; i < clips.size(); ++i) clips[i] = plans[i].adjoint(clips[i]);
  return to_activation<Scalar>(clips);
}

template <typename Scalar>
struct SslBatch {
  std::vector<BasicVideoClip<Scalar>> transformed_real;
  std::vector<TransformLabel> real_labels;
  std::vector<BasicVideoClip<Scalar>> transformed_fake;
  std::vector<TransformLabel> fake_labels;
};

/// One independently sampled transformation per clip: real labels first,
/// then fake labels, from the same source.
template <typename Scalar>
SslBatch<Scalar> make_ssl_batch(std::span<const BasicVideoClip<Scalar>> real,
                                std::span<const BasicVideoClip<Scalar>> fake,
                                FamilySet families, Rng& rng) {
  if (real.size() != fake.size()) throw ContractError("real and fake batches differ in size");
  SslBatch<Scalar> out;
  if (real.empty()) return out;
  const ClipShape shape = real.front().shape();
  out.real_labels = sample_labels(Index(real.size()), families, shape, rng);
  out.fake_labels = sample_labels(Index(fake.size()), families, shape, rng);
  for (std::size_t i = 0; i < real.size(); ++i) {
    out.transformed_real.push_back(apply(out.real_labels[i], real[i]));
    out.transformed_fake.push_back(apply(out.fake_labels[i], fake[i]));
  }
  return out;
}

/// Discriminator loss: adversarial term on untransformed real and fake
/// clips plus beta times the transformation cross-entropy on transformed
/// real clips. Accumulates into the discriminator's parameter gradients.
/// `mode` applies to the first (adversarial) forward only; the auxiliary
/// forward reuses the spectral-norm state it left behind.
template <AuxPath Path, typename Scalar>
void discriminator_objective(Discriminator<Scalar>& disc, const Activation<Scalar>& real,
                             const Activation<Scalar>& fake,
                             const TransformedBatch<Scalar>* real_transformed,
                             const LossWeights& weights, const ClassMask& mask, Mode mode,
                             LossBreakdown& losses) {
  const Index n_real = real.geo.batch;
  const DiscriminatorOutput<Scalar> out = disc.forward(concat_batch(real, fake), mode);
  const AdversarialTerms<Scalar> adv = adversarial_losses<Scalar>(
      out.realfake_logits.head(n_real), out.realfake_logits.tail(fake.geo.batch));
  VectorX<Scalar> grad(out.realfake_logits.size());
  grad << adv.d_grad_real, adv.d_grad_fake;
  disc.backward(grad, {}, {true, false});
  losses.adversarial_d = adv.d_term;
  losses.aux_d = 0.0;

  if constexpr (Path == AuxPath::enabled) {
    if (real_transformed == nullptr) throw ContractError("auxiliary path needs a transformed batch");
    const DiscriminatorOutput<Scalar> aux_out = disc.forward(real_transformed->clips, Mode::eval);
    AuxLoss<Scalar> aux =
        aux_transform_loss<Scalar>(aux_out.transform_logits, real_transformed->labels, mask);
    aux.grad *= Scalar(weights.beta);
    disc.backward({}, aux.grad, {true, false});
    losses.aux_d = aux.loss;
  }
  losses.total_d = losses.adversarial_d + weights.beta * losses.aux_d;
}

/// Generator loss: non-saturating adversarial term on fresh fakes plus alpha
/// times the transformation cross-entropy on the same fakes transformed.
/// Only generator gradients are accumulated; the discriminator runs with
/// frozen spectral-norm state.
template <AuxPath Path, typename Scalar>
void generator_objective(Generator<Scalar>& gen, Discriminator<Scalar>& disc,
                         const MatrixX<Scalar>& latent, std::span<const TransformLabel> fake_labels,
                         const LossWeights& weights, const ClassMask& mask, LossBreakdown& losses) {
  const Activation<Scalar> fake = gen.forward(latent, Mode::train);
  const DiscriminatorOutput<Scalar> out = disc.forward(fake, Mode::eval);
  const VectorX<Scalar> none;
  const AdversarialTerms<Scalar> adv = adversarial_losses<Scalar>(none, out.realfake_logits);
  Activation<Scalar> grad_fake = disc.backward(adv.g_grad_fake, {}, {false, true});
  losses.adversarial_g = adv.g_term;
  losses.aux_g = 0.0;

  if constexpr (Path == AuxPath::enabled) {
    const TransformedBatch<Scalar> transformed = transform_batch(fake, fake_labels);
    const DiscriminatorOutput<Scalar> aux_out = disc.forward(transformed.clips, Mode::eval);
    AuxLoss<Scalar> aux =
        aux_transform_loss<Scalar>(aux_out.transform_logits, transformed.labels, mask);
    aux.grad *= Scalar(weights.alpha);
    const Activation<Scalar> grad_transformed = disc.backward({}, aux.grad, {false, true});
    grad_fake.values += transform_batch_adjoint(grad_transformed, transformed.plans).values;
    losses.aux_g = aux.loss;
  }
  gen.backward(grad_fake);
  losses.total_g = losses.adversarial_g + weights.alpha * losses.aux_g;
}

}  // namespace ssgan
