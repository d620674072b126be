#pragma once

#include <span>
#include <vector>

#include "fewgen/model.hpp"

namespace fewgen {

/// Floor applied to the sum over labels in the discriminative ratio.
inline constexpr double kDiscDenominatorFloor = 1e-12;

/// -(1/n) sum_j log p over the included positions.
double gen_loss(std::span<const double> logprobs);
/// -sum_j w_j log p.
double weighted_gen_loss(std::span<const double> logprobs, std::span<const double> weights);
/// gen_loss + mu * disc_scalar.
double combined_loss(std::span<const double> logprobs, double disc_scalar, double mu);

struct DiscLoss {
  double scalar = 0.0;              // -(1/n) sum_j ratio_j, in (-1, 0)
  std::vector<double> per_token;    // p_label / sum_l p_l at included positions
  bool clamped = false;             // some denominator hit the floor
};

/// Discriminative loss of seq under its own label against every prefix in the bank.
DiscLoss disc_loss(const BackboneParams& backbone, const PrefixBank& bank, const LabeledSequence& seq);

/// Target positions that count toward losses; throws if there are none.
std::vector<std::size_t> included_positions(const LabeledSequence& seq);

// Tape-level building blocks shared by tuning, gradient checks and metrics.

/// Log-prob rows of seq under every label's prefix (bound on the same tape).
std::vector<Var> label_logprob_rows(const BoundBackbone& bb, const std::vector<BoundPrefix>& prefixes,
                                    const LabeledSequence& seq);
std::vector<BoundPrefix> bind_all_prefixes(Tape& tape, const PrefixBank& bank);

Var gen_loss_var(Var logprob_row, const std::vector<std::size_t>& included);
Var weighted_gen_loss_var(Var logprob_row, const std::vector<std::size_t>& included,
                          std::span<const double> weights);
/// 1 x |included| row of per-token ratios for the given label.
Var disc_ratio_var(const std::vector<Var>& rows, std::size_t label,
                   const std::vector<std::size_t>& included, bool* clamped = nullptr);
Var disc_loss_var(const std::vector<Var>& rows, std::size_t label,
                  const std::vector<std::size_t>& included, bool* clamped = nullptr);
Var combined_loss_var(Var gen, Var disc, double mu);

}  // namespace fewgen
