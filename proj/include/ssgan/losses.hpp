#pragma once

#include "ssgan/core.hpp"
#include "ssgan/transforms.hpp"

#include <cmath>
#include <span>

namespace ssgan {

template <typename Scalar>
Scalar softplus(Scalar x) {
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
struct AdversarialTerms {
  Scalar d_term = 0;  // mean softplus(-real) + mean softplus(fake)
  Scalar g_term = 0;  // mean softplus(-fake), the non-saturating generator loss
  VectorX<Scalar> d_grad_real;
  VectorX<Scalar> d_grad_fake;
  VectorX<Scalar> g_grad_fake;
};

/// Logistic form of the minimax value function, computed from logits.
template <typename Scalar>
AdversarialTerms<Scalar> adversarial_losses(const VectorX<Scalar>& real_logits,
                                            const VectorX<Scalar>& fake_logits) {
  if (!real_logits.allFinite() || !fake_logits.allFinite()) {
    throw NumericError("non-finite discriminator logits");
  }
  AdversarialTerms<Scalar> out;
  const Index nr = real_logits.size();
  const Index nf = fake_logits.size();
  out.d_grad_real.resize(nr);
  out.d_grad_fake.resize(nf);
  out.g_grad_fake.resize(nf);
  Scalar real_sum = 0, fake_sum = 0, gen_sum = 0;
  for (Index i = 0; i < nr; ++i) {
    real_sum += softplus(-real_logits[i]);
    out.d_grad_real[i] = -sigmoid(-real_logits[i]) / Scalar(nr);
  }
  for (Index i = 0; i < nf; ++i) {
    fake_sum += softplus(fake_logits[i]);
    gen_sum += softplus(-fake_logits[i]);
    out.d_grad_fake[i] = sigmoid(fake_logits[i]) / Scalar(nf);
    out.g_grad_fake[i] = -sigmoid(-fake_logits[i]) / Scalar(nf);
  }
  out.d_term = (nr ? real_sum / Scalar(nr) : Scalar(0)) + (nf ? fake_sum / Scalar(nf) : Scalar(0));
  out.g_term = nf ? gen_sum / Scalar(nf) : Scalar(0);
  return out;
}

template <typename Scalar>
struct AuxLoss {
  Scalar loss = 0;
  MatrixX<Scalar> grad;  // d(loss)/d(logits), zero on disabled classes
  std::vector<int> predictions;
};

/// Mean cross-entropy of the true transformation class with the softmax
/// restricted to the enabled classes.
template <typename Scalar>
AuxLoss<Scalar> aux_transform_loss(const MatrixX<Scalar>& logits, std::span<const int> labels,
                                   const ClassMask& enabled) {
  if (logits.cols() != kTransformClasses) throw ShapeError("transform logits must have 11 columns");
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw ContractError("label count does not match logit rows");
  }
  AuxLoss<Scalar> out;
  out.grad = MatrixX<Scalar>::Zero(logits.rows(), logits.cols());
  out.predictions.resize(labels.size());
  const Index n = logits.rows();
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || label >= kTransformClasses || !enabled[label]) {
      throw ContractError("transformation label " + std::to_string(label) +
                          " is not in the enabled class set");
    }
    Scalar max_logit = -std::numeric_limits<Scalar>::infinity();
    int best = -1;
    for (int k = 0; k < kTransformClasses; ++k) {
      if (!enabled[k]) continue;
      if (!std::isfinite(static_cast<double>(logits(i, k)))) {
        throw NumericError("non-finite transformation logit");
      }
      if (best < 0 || logits(i, k) > max_logit) {
        max_logit = logits(i, k);
        best = k;
      }
    }
    out.predictions[i] = best;
    Scalar denom = 0;
    for (int k = 0; k < kTransformClasses; ++k) {
      if (enabled[k]) denom += std::exp(logits(i, k) - max_logit);
    }
    const Scalar log_z = max_logit + std::log(denom);
    total += log_z - logits(i, label);
    for (int k = 0; k < kTransformClasses; ++k) {
      if (enabled[k]) out.grad(i, k) = std::exp(logits(i, k) - log_z) / Scalar(n);
    }
    out.grad(i, label) -= Scalar(1) / Scalar(n);
  }
  out.loss = n ? total / Scalar(n) : Scalar(0);
  return out;
}

/// Index of the largest enabled logit; ties go to the lowest class id.
template <typename Scalar>
int masked_argmax(const Eigen::Ref<const VectorX<Scalar>>& logits, const ClassMask& enabled) {
  int best = -1;
  for (int k = 0; k < kTransformClasses; ++k) {
    if (enabled[k] && (best < 0 || logits[k] > logits[best])) best = k;
  }
  return best;
}

}  // namespace ssgan
