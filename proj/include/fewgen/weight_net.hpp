#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fewgen/autodiff.hpp"

namespace fewgen {

/// Scalar-to-scalar MLP with one tanh hidden layer. Its outputs over a
/// sequence are softmax-normalized into token weights.
struct WeightNetState {
  ParameterSet params;  // hidden.weight 1xH, hidden.bias 1xH, out.weight Hx1, out.bias 1x1

  std::size_t hidden() const { return params.get("hidden.weight").cols(); }
};

WeightNetState init_weight_net(std::size_t hidden, std::uint64_t seed, double sigma = 0.1);
/// Every input maps to out.bias, so the weights are uniform.
WeightNetState constant_weight_net(std::size_t hidden);

/// Raw scores g(u_j), one per input.
std::vector<double> weight_net_scores(const WeightNetState& net, std::span<const double> inputs);
/// softmax_j g(u_j); non-negative and sums to 1.
std::vector<double> token_weights(const WeightNetState& net, std::span<const double> inputs);

struct BoundWeightNet {
  Var hidden_w, hidden_b, out_w, out_b;
};
BoundWeightNet bind_weight_net(Tape& tape, const WeightNetState& net);
/// 1 x n weights for a 1 x n row of constant inputs.
Var token_weights_var(const BoundWeightNet& net, Var inputs);

}  // namespace fewgen
