#include "fewgen/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fewgen/optim.hpp"

namespace fewgen {

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::WeightedGen: return "w-gen";
    case Objective::Gen: return "gen";
    case Objective::GenDisc: return "gen+disc";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  if (name == "w-gen") return Objective::WeightedGen;
  if (name == "gen") return Objective::Gen;
  if (name == "gen+disc") return Objective::GenDisc;
  throw Error("unknown objective '" + name + "' (expected w-gen, gen or gen+disc)");
}

void TuningConfig::validate() const {
  if (batch_size == 0) throw Error("tuning: batch_size must be positive");
  for (double lr : {lookahead_lr, weight_lr, prefix_lr})
    if (!(lr > 0) || !std::isfinite(lr)) throw Error("tuning: learning rates must be positive and finite");
  if (mu < 0) throw Error("tuning: mu must be >= 0");
  if (weight_hidden == 0) throw Error("tuning: weight_hidden must be positive");
}

namespace {

struct SampleTrace {
  std::vector<double> logprobs;  // included positions, true label
  std::vector<double> disc;      // included positions
  std::vector<std::vector<double>> token_grads;
  bool clamped = false;
};

SampleTrace trace_sample(const BackboneParams& backbone, const PrefixBank& bank,
                         const LabeledSequence& seq, bool with_token_grads) {
  check_label(bank, seq.label);
  Tape tape;
  auto bb = bind_backbone(tape, backbone);
  auto prefixes = bind_all_prefixes(tape, bank);
  auto included = included_positions(seq);
  auto rows = label_logprob_rows(bb, prefixes, seq);
  SampleTrace t;
  t.disc = disc_ratio_var(rows, seq.label, included, &t.clamped).value().data();
  const Var own = rows[seq.label];
  const auto& lp = own.value().data();
  for (auto j : included) t.logprobs.push_back(lp[j]);
  if (with_token_grads) {
    std::vector<double> seed(own.cols(), 0.0);
    for (auto j : included) {
      seed[j] = -1.0;
      t.token_grads.push_back(tape.gradients(own, seed, bank.params).flatten());
      seed[j] = 0.0;
    }
  }
  return t;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void descend(ParameterSet& params, std::span<const double> grad, double lr) {
  auto flat = params.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] -= lr * grad[i];
  params.assign_flat(flat);
}

void accumulate(std::vector<double>& into, const std::vector<double>& g) {
  if (into.empty()) into.assign(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) into[i] += g[i];
}

void divide(std::vector<double>& v, std::size_t n) {
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& x : v) x *= inv;
}

/// (1/B) sum_s grad of -sum_j w_sj log p_sj, with the weights held fixed.
std::vector<double> weighted_gen_gradient(const BackboneParams& backbone, const PrefixBank& bank,
                                          const Dataset& batch,
                                          const std::vector<std::vector<double>>& weights) {
  std::vector<double> total;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    Tape tape;
    auto bb = bind_backbone(tape, backbone);
    auto prefix = bind_prefix(tape, bank, batch[s].label);
    auto row = token_logprob_row(bb, &prefix, batch[s]);
    auto loss = weighted_gen_loss_var(row, included_positions(batch[s]), weights[s]);
    accumulate(total, backward_gradients(loss, bank.params).flatten());
  }
  divide(total, batch.size());
  return total;
}

struct DiscGradient {
  double value = 0.0;
  std::vector<double> grad;
};

DiscGradient batch_disc_gradient(const BackboneParams& backbone, const PrefixBank& bank,
                                 const Dataset& batch, bool want_grad) {
  DiscGradient out;
  for (const auto& seq : batch) {
    check_label(bank, seq.label);
    Tape tape;
    auto bb = bind_backbone(tape, backbone);
    auto prefixes = bind_all_prefixes(tape, bank);
    auto rows = label_logprob_rows(bb, prefixes, seq);
    auto loss = disc_loss_var(rows, seq.label, included_positions(seq));
    out.value += loss.value().item();
    if (want_grad) accumulate(out.grad, backward_gradients(loss, bank.params).flatten());
  }
  out.value /= static_cast<double>(batch.size());
  if (want_grad) divide(out.grad, batch.size());
  return out;
}

/// (1/B) sum_s grad of gen + mu * disc.
std::vector<double> combined_gradient(const BackboneParams& backbone, const PrefixBank& bank,
                                      const Dataset& batch, double mu) {
  std::vector<double> total;
  for (const auto& seq : batch) {
    Tape tape;
    auto bb = bind_backbone(tape, backbone);
    auto prefixes = bind_all_prefixes(tape, bank);
    auto included = included_positions(seq);
    auto rows = label_logprob_rows(bb, prefixes, seq);
    auto loss = combined_loss_var(gen_loss_var(rows[seq.label], included),
                                  disc_loss_var(rows, seq.label, included), mu);
    accumulate(total, backward_gradients(loss, bank.params).flatten());
  }
  divide(total, batch.size());
  return total;
}

PrefixBank shifted(const PrefixBank& bank, std::span<const double> direction, double step) {
  PrefixBank out = bank;
  descend(out.params, direction, step);
  return out;
}

std::vector<double> uniform_weights(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

}  // namespace

MetaGradient meta_gradient(const BackboneParams& backbone, const PrefixBank& bank,
                           const WeightNetState& net, const Dataset& batch, const MetaOptions& options) {
  if (batch.empty()) throw Error("meta_gradient: empty batch");
  const double B = static_cast<double>(batch.size());
  MetaGradient out;
  auto& rep = out.report;

  std::vector<SampleTrace> traces;
  std::vector<double> direction;
  for (const auto& seq : batch) {
    auto t = trace_sample(backbone, bank, seq, true);
    auto w = token_weights(net, t.disc);
    if (direction.empty()) direction.assign(t.token_grads.front().size(), 0.0);
    for (std::size_t j = 0; j < w.size(); ++j)
      for (std::size_t i = 0; i < direction.size(); ++i) direction[i] += w[j] * t.token_grads[j][i];
    rep.weighted_gen += weighted_gen_loss(t.logprobs, w);
    rep.gen += gen_loss(t.logprobs);
    rep.disc_before -= mean_of(t.disc);
    rep.clamped = rep.clamped || t.clamped;
    rep.weights.push_back(std::move(w));
    rep.disc_inputs.push_back(t.disc);
    traces.push_back(std::move(t));
  }
  for (auto& x : direction) x /= B;
  rep.weighted_gen /= B;
  rep.gen /= B;
  rep.disc_before /= B;

  auto ahead = shifted(bank, direction, options.lookahead_lr);
  auto disc = batch_disc_gradient(backbone, ahead, batch, true);
  rep.disc_after = disc.value;
  for (auto& g : disc.grad) g *= options.disc_grad_scale;

  Tape tape;
  auto bound = bind_weight_net(tape, net);
  std::optional<Var> total;
  for (std::size_t s = 0; s < traces.size(); ++s) {
    std::vector<double> align, coef;
    for (const auto& g : traces[s].token_grads) {
      double d = std::inner_product(disc.grad.begin(), disc.grad.end(), g.begin(), 0.0);
      align.push_back(d);
      coef.push_back(-options.lookahead_lr / B * d);
    }
    auto w = token_weights_var(bound, tape.constant(Tensor::row(traces[s].disc)));
    auto term = ad::sum(ad::mul(w, tape.constant(Tensor::row(std::move(coef)))));
    total = total ? ad::add(*total, term) : term;
    rep.alignment.push_back(std::move(align));
  }
  out.weight_net = backward_gradients(*total, net.params);
  return out;
}

double lookahead_disc_loss(const BackboneParams& backbone, const PrefixBank& bank,
                           const WeightNetState& net, const Dataset& batch, double lookahead_lr) {
  if (batch.empty()) throw Error("lookahead_disc_loss: empty batch");
  std::vector<std::vector<double>> weights;
  for (const auto& seq : batch) weights.push_back(token_weights(net, disc_loss(backbone, bank, seq).per_token));
  auto direction = weighted_gen_gradient(backbone, bank, batch, weights);
  return batch_disc_gradient(backbone, shifted(bank, direction, lookahead_lr), batch, false).value;
}

double TuningResult::epoch_mean(std::size_t epoch, double LossRecord::*column) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : history) {
    if (r.epoch != epoch) continue;
    s += r.*column;
    ++n;
  }
  if (n == 0) throw Error("no loss records for epoch " + std::to_string(epoch));
  return s / static_cast<double>(n);
}

TuningResult tune_generators(const BackboneParams& backbone, const PrefixBank& initial,
                             const Dataset& train, const TuningConfig& config, std::uint64_t seed) {
  return tune_generators(backbone, initial, init_weight_net(config.weight_hidden, seed ^ 0x5eedULL),
                         train, config, seed);
}

TuningResult tune_generators(const BackboneParams& backbone, const PrefixBank& initial,
                             WeightNetState net, const Dataset& train, const TuningConfig& config,
                             std::uint64_t seed) {
  config.validate();
  if (train.empty()) throw Error("tune_generators: empty training set");
  if (!backbone.frozen()) throw Error("tune_generators: backbone must be frozen");

  if (config.objective != Objective::Gen) {
    std::vector<bool> seen(initial.num_labels, false);
    for (const auto& s : train) {
      check_label(initial, s.label);
      seen[s.label] = true;
    }
    for (std::size_t l = 0; l < seen.size(); ++l)
      if (!seen[l]) throw Error("tune_generators: no training sample for label " + std::to_string(l));
  }
  Dataset data;
  for (const auto& s : train) data.push_back(with_eos(s));
  TuningResult result{initial, std::move(net), {}, 0.0, 0.0};
  result.initial_weighted_gen = dataset_weighted_gen(backbone, result.bank, result.net, train);
  auto& bank = result.bank;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++step) {
      Dataset batch;
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k)
        batch.push_back(data[order[k]]);
      const double B = static_cast<double>(batch.size());
      LossRecord rec{step, epoch, 0.0, 0.0, 0.0};
      try {
        if (config.objective == Objective::WeightedGen) {
          auto mg = meta_gradient(backbone, bank, result.net, batch, {config.lookahead_lr, 1.0});
          rec.weighted_gen = mg.report.weighted_gen;
          rec.gen = mg.report.gen;
          rec.disc = mg.report.disc_before;
          if (config.train_weight_net) sgd_step(result.net.params, mg.weight_net, config.weight_lr);
          std::vector<std::vector<double>> weights;
          for (const auto& u : mg.report.disc_inputs) weights.push_back(token_weights(result.net, u));
          descend(bank.params, weighted_gen_gradient(backbone, bank, batch, weights), config.prefix_lr);
        } else {
          std::vector<std::vector<double>> uniform;
          for (const auto& seq : batch) {
            auto t = trace_sample(backbone, bank, seq, false);
            rec.weighted_gen += weighted_gen_loss(t.logprobs, token_weights(result.net, t.disc)) / B;
            rec.gen += gen_loss(t.logprobs) / B;
            rec.disc -= mean_of(t.disc) / B;
            uniform.push_back(uniform_weights(t.logprobs.size()));
          }
          auto grad = config.objective == Objective::Gen
                          ? weighted_gen_gradient(backbone, bank, batch, uniform)
                          : combined_gradient(backbone, bank, batch, config.mu);
          descend(bank.params, grad, config.prefix_lr);
        }
      } catch (const Error& e) {
        throw Error("tune_generators: diverged at step " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(rec.weighted_gen) || !std::isfinite(rec.gen) || !std::isfinite(rec.disc))
        throw Error("tune_generators: non-finite loss at step " + std::to_string(step));
      result.history.push_back(rec);
    }
  }
  result.final_weighted_gen = dataset_weighted_gen(backbone, result.bank, result.net, train);
  return result;
}

double dataset_weighted_gen(const BackboneParams& backbone, const PrefixBank& bank,
                            const WeightNetState& net, const Dataset& data) {
  if (data.empty()) throw Error("dataset_weighted_gen: empty dataset");
  double total = 0.0;
  for (const auto& seq : data) {
    auto t = trace_sample(backbone, bank, with_eos(seq), false);
    total += weighted_gen_loss(t.logprobs, token_weights(net, t.disc));
  }
  return total / static_cast<double>(data.size());
}

std::vector<TokenWeightDump> dump_token_weights(const BackboneParams& backbone, const PrefixBank& bank,
                                                const WeightNetState& net, const Dataset& data) {
  std::vector<TokenWeightDump> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto seq = with_eos(data[i]);
    auto t = trace_sample(backbone, bank, seq, false);
    TokenWeightDump d;
    d.sequence = i;
    d.label = seq.label;
    for (auto j : included_positions(seq)) d.tokens.push_back(seq.tokens[j]);
    d.weights = token_weights(net, t.disc);
    d.disc_inputs = std::move(t.disc);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace fewgen
