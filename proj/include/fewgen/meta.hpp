#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewgen/losses.hpp"
#include "fewgen/weight_net.hpp"

namespace fewgen {

enum class Objective { WeightedGen, Gen, GenDisc };

std::string objective_name(Objective o);  // "w-gen", "gen", "gen+disc"
Objective parse_objective(const std::string& name);

struct MetaStepReport {
  std::vector<std::vector<double>> weights;      // per sequence, sums to 1
  std::vector<std::vector<double>> disc_inputs;  // per-token ratios at the current prefixes
  std::vector<std::vector<double>> alignment;    // <grad L_disc at lookahead, per-token NLL grad>
  double weighted_gen = 0.0;                     // batch mean
  double gen = 0.0;                              // batch mean
  double disc_before = 0.0;                      // batch mean at the current prefixes
  double disc_after = 0.0;                       // batch mean at the lookahead prefixes
  bool clamped = false;
};

struct MetaGradient {
  GradientSet weight_net;  // d L_disc(lookahead(w)) / d w-net params
  MetaStepReport report;
};

struct MetaOptions {
  double lookahead_lr = 2e-2;
  /// Multiplies the discriminative gradient at the lookahead point. Only the
  /// gradient-check mutation test sets anything but 1.
  double disc_grad_scale = 1.0;
};

/// Analytic gradient of the batch-mean discriminative loss, evaluated after
/// one weighted-generative SGD step on the prefixes, with respect to the
/// weighting net.
MetaGradient meta_gradient(const BackboneParams& backbone, const PrefixBank& bank,
                           const WeightNetState& net, const Dataset& batch, const MetaOptions& options);

/// The scalar meta_gradient differentiates, computed directly: one weighted
/// generative step on the prefixes, then the batch-mean discriminative loss.
double lookahead_disc_loss(const BackboneParams& backbone, const PrefixBank& bank,
                           const WeightNetState& net, const Dataset& batch, double lookahead_lr);

struct TuningConfig {
  Objective objective = Objective::WeightedGen;
  double lookahead_lr = 2e-2;
  double weight_lr = 1e-2;
  double prefix_lr = 5e-3;
  std::size_t batch_size = 2;
  std::size_t epochs = 20;
  double mu = 1.0;                 // gen+disc only
  std::size_t weight_hidden = 100;
  bool train_weight_net = true;    // false keeps the initial net fixed

  void validate() const;
};

struct LossRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double weighted_gen = 0.0;
  double gen = 0.0;
  double disc = 0.0;
};

struct TuningResult {
  PrefixBank bank;
  WeightNetState net;
  std::vector<LossRecord> history;
  double initial_weighted_gen = 0.0;  // mean over the whole training set
  double final_weighted_gen = 0.0;

  /// Mean of a history column over the records of one epoch.
  double epoch_mean(std::size_t epoch, double LossRecord::*column) const;
};

/// Mean weighted generative loss over data (each sequence followed by <eos>).
double dataset_weighted_gen(const BackboneParams& backbone, const PrefixBank& bank,
                            const WeightNetState& net, const Dataset& data);

/// Tunes the prefix bank on few-shot data. The backbone stays frozen.
TuningResult tune_generators(const BackboneParams& backbone, const PrefixBank& initial,
                             const Dataset& train, const TuningConfig& config, std::uint64_t seed);
/// Same, continuing from a given weighting net.
TuningResult tune_generators(const BackboneParams& backbone, const PrefixBank& initial,
                             WeightNetState net, const Dataset& train, const TuningConfig& config,
                             std::uint64_t seed);

struct TokenWeightDump {
  std::size_t sequence = 0;
  std::size_t label = 0;
  std::vector<TokenId> tokens;     // included target tokens
  std::vector<double> weights;
  std::vector<double> disc_inputs;
};

std::vector<TokenWeightDump> dump_token_weights(const BackboneParams& backbone, const PrefixBank& bank,
                                                const WeightNetState& net, const Dataset& data);

}  // namespace fewgen
