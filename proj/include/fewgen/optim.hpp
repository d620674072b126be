#pragma once

#include <unordered_map>

#include "fewgen/params.hpp"

namespace fewgen {

/// params -= lr * grads, over the trainable tensors named in grads.
void sgd_step(ParameterSet& params, const GradientSet& grads, double lr);

/// Global L2 norm of a gradient set.
double gradient_norm(const GradientSet& grads);

/// Rescales grads so their global norm is at most max_norm.
GradientSet clip_gradients(const GradientSet& grads, double max_norm);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params, const GradientSet& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::unordered_map<std::string, std::vector<double>> m_, v_;
};

}  // namespace fewgen
