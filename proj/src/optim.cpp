#include "fewgen/optim.hpp"

#include <cmath>

namespace fewgen {

void sgd_step(ParameterSet& params, const GradientSet& grads, double lr) {
  for (std::size_t i = 0; i < grads.names.size(); ++i) {
    const auto& cur = params.get(grads.names[i]);
    const auto& g = grads.tensors[i].data();
    std::vector<double> next = cur.data();
    for (std::size_t t = 0; t < next.size(); ++t) next[t] -= lr * g[t];
    params.set(grads.names[i], Tensor(cur.shape(), std::move(next)));
  }
}

double gradient_norm(const GradientSet& grads) {
  double s = 0.0;
  for (const auto& t : grads.tensors)
    for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

GradientSet clip_gradients(const GradientSet& grads, double max_norm) {
  double norm = gradient_norm(grads);
  if (norm <= max_norm || norm == 0.0) return grads;
  double f = max_norm / norm;
  GradientSet out;
  out.names = grads.names;
  for (const auto& t : grads.tensors) {
    std::vector<double> v = t.data();
    for (auto& x : v) x *= f;
    out.tensors.emplace_back(t.shape(), std::move(v));
  }
  return out;
}

void Adam::step(ParameterSet& params, const GradientSet& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.names.size(); ++i) {
    const auto& name = grads.names[i];
    const auto& g = grads.tensors[i].data();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    const auto& cur = params.get(name);
    std::vector<double> next = cur.data();
    for (std::size_t t = 0; t < next.size(); ++t) {
      m[t] = beta1_ * m[t] + (1.0 - beta1_) * g[t];
      v[t] = beta2_ * v[t] + (1.0 - beta2_) * g[t] * g[t];
      next[t] -= lr_ * (m[t] / c1) / (std::sqrt(v[t] / c2) + eps_);
    }
    params.set(name, Tensor(cur.shape(), std::move(next)));
  }
}

}  // namespace fewgen
