#include "fewgen/weight_net.hpp"

#include <random>

namespace fewgen {

WeightNetState init_weight_net(std::size_t hidden, std::uint64_t seed, double sigma) {
  if (hidden == 0) throw Error("weight net needs at least one hidden unit");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  auto draw = [&](std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = normal(rng);
    return Tensor::matrix(r, c, std::move(v));
  };
  WeightNetState net;
  net.params.add("hidden.weight", draw(1, hidden));
  net.params.add("hidden.bias", draw(1, hidden));
  net.params.add("out.weight", draw(hidden, 1));
  net.params.add("out.bias", Tensor::zeros({1, 1}));
  return net;
}

WeightNetState constant_weight_net(std::size_t hidden) {
  WeightNetState net = init_weight_net(hidden, 0);
  net.params.set("out.weight", Tensor::zeros({hidden, 1}));
  return net;
}

namespace {
Var scores_var(const BoundWeightNet& net, Var inputs) {
  Var column = ad::transpose(inputs);
  Var h = ad::tanh(ad::add_row(ad::matmul(column, net.hidden_w), net.hidden_b));
  return ad::transpose(ad::add_row(ad::matmul(h, net.out_w), net.out_b));
}
}  // namespace

BoundWeightNet bind_weight_net(Tape& tape, const WeightNetState& net) {
  return {tape.parameter(net.params, "hidden.weight"), tape.parameter(net.params, "hidden.bias"),
          tape.parameter(net.params, "out.weight"), tape.parameter(net.params, "out.bias")};
}

Var token_weights_var(const BoundWeightNet& net, Var inputs) {
  if (inputs.rows() != 1 || inputs.cols() == 0) throw Error("token weights need a non-empty row");
  return ad::softmax_rows(scores_var(net, inputs));
}

std::vector<double> weight_net_scores(const WeightNetState& net, std::span<const double> inputs) {
  if (inputs.empty()) throw Error("token weights need a non-empty row");
  Tape tape;
  auto bound = bind_weight_net(tape, net);
  auto u = tape.constant(Tensor::row({inputs.begin(), inputs.end()}));
  return scores_var(bound, u).value().data();
}

std::vector<double> token_weights(const WeightNetState& net, std::span<const double> inputs) {
  return softmax_stable(weight_net_scores(net, inputs));
}

}  // namespace fewgen
