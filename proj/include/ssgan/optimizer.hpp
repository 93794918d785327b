#pragma once

#include "ssgan/nn.hpp"

#include <cmath>
#include <vector>

namespace ssgan {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. Moments are kept in the
/// order of the parameter list it was built for.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig config, const std::vector<Parameter<Scalar>*>& params) : config_(config) {
    for (const auto* p : params) {
      first_.push_back(MatrixX<Scalar>::Zero(p->value.rows(), p->value.cols()));
      second_.push_back(MatrixX<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(const std::vector<Parameter<Scalar>*>& params) {
    if (params.size() != first_.size()) throw ContractError("optimizer parameter list changed");
    ++steps_;
    const Scalar b1 = Scalar(config_.beta1), b2 = Scalar(config_.beta2);
    const Scalar correction1 = Scalar(1) - Scalar(std::pow(config_.beta1, double(steps_)));
    const Scalar correction2 = Scalar(1) - Scalar(std::pow(config_.beta2, double(steps_)));
    const Scalar lr = Scalar(config_.learning_rate);
    const Scalar eps = Scalar(config_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = first_[i];
      auto& v = second_[i];
      const auto& g = params[i]->grad;
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
      params[i]->value.array() -=
          lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
    }
  }

  const AdamConfig& config() const { return config_; }
  long long steps() const { return steps_; }
  void set_steps(long long steps) { steps_ = steps; }
  std::vector<MatrixX<Scalar>>& first_moments() { return first_; }
  std::vector<MatrixX<Scalar>>& second_moments() { return second_; }

 private:
  AdamConfig config_;
  long long steps_ = 0;
  std::vector<MatrixX<Scalar>> first_;
  std::vector<MatrixX<Scalar>> second_;
};

}  // namespace ssgan
