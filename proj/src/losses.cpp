#include "fewgen/losses.hpp"

#include <algorithm>

namespace fewgen {

double gen_loss(std::span<const double> logprobs) {
  if (logprobs.empty()) throw Error("gen_loss: all positions excluded");
  double s = 0.0;
  for (double v : logprobs) s += v;
  return -s / static_cast<double>(logprobs.size());
}

double weighted_gen_loss(std::span<const double> logprobs, std::span<const double> weights) {
  if (logprobs.size() != weights.size()) {
    throw Error("weighted_gen_loss: " + std::to_string(logprobs.size()) + " log-probs but " +
                std::to_string(weights.size()) + " weights");
  }
  double s = 0.0;
  for (std::size_t j = 0; j < logprobs.size(); ++j) s += weights[j] * logprobs[j];
  return -s;
}

double combined_loss(std::span<const double> logprobs, double disc_scalar, double mu) {
  if (mu < 0.0) throw Error("combined_loss: mu must be >= 0");
  return gen_loss(logprobs) + mu * disc_scalar;
}

std::vector<std::size_t> included_positions(const LabeledSequence& seq) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < seq.tokens.size(); ++j)
    if (!seq.excluded(j)) out.push_back(j);
  if (out.empty()) throw Error("all positions excluded from the loss");
  return out;
}

std::vector<BoundPrefix> bind_all_prefixes(Tape& tape, const PrefixBank& bank) {
  std::vector<BoundPrefix> out;
  out.reserve(bank.num_labels);
  for (std::size_t l = 0; l < bank.num_labels; ++l) out.push_back(bind_prefix(tape, bank, l));
  return out;
}

std::vector<Var> label_logprob_rows(const BoundBackbone& bb, const std::vector<BoundPrefix>& prefixes,
                                    const LabeledSequence& seq) {
  std::vector<Var> rows;
  rows.reserve(prefixes.size());
  for (const auto& p : prefixes) rows.push_back(token_logprob_row(bb, &p, seq));
  return rows;
}

namespace {
Var pick_row(Var row, const std::vector<std::size_t>& cols) {
  std::vector<std::size_t> zeros(cols.size(), 0);
  return ad::pick(row, zeros, cols);
}
}  // namespace

Var gen_loss_var(Var logprob_row, const std::vector<std::size_t>& included) {
  return ad::scale(ad::mean(pick_row(logprob_row, included)), -1.0);
}

Var weighted_gen_loss_var(Var logprob_row, const std::vector<std::size_t>& included,
                          std::span<const double> weights) {
  if (weights.size() != included.size()) throw Error("weighted_gen_loss: length mismatch");
  auto w = logprob_row.tape->constant(Tensor::row({weights.begin(), weights.end()}));
  return ad::scale(ad::sum(ad::mul(pick_row(logprob_row, included), w)), -1.0);
}

Var disc_ratio_var(const std::vector<Var>& rows, std::size_t label,
                   const std::vector<std::size_t>& included, bool* clamped) {
  if (rows.size() < 2) throw Error("discriminative loss needs at least 2 labels");
  if (label >= rows.size()) throw Error("disc_loss: label out of range");
  std::vector<Var> probs;
  probs.reserve(rows.size());
  for (const auto& r : rows) probs.push_back(ad::exp(pick_row(r, included)));
  Var den = probs[0];
  for (std::size_t l = 1; l < probs.size(); ++l) den = ad::add(den, probs[l]);
  if (clamped) {
    const auto& dv = den.value().data();
    *clamped = std::any_of(dv.begin(), dv.end(), [](double v) { return v < kDiscDenominatorFloor; });
  }
  den = ad::clamp_min(den, kDiscDenominatorFloor);
  return ad::div(probs[label], den);
}

Var disc_loss_var(const std::vector<Var>& rows, std::size_t label,
                  const std::vector<std::size_t>& included, bool* clamped) {
  return ad::scale(ad::mean(disc_ratio_var(rows, label, included, clamped)), -1.0);
}

Var combined_loss_var(Var gen, Var disc, double mu) {
  if (mu < 0.0) throw Error("combined_loss: mu must be >= 0");
  return ad::add(gen, ad::scale(disc, mu));
}

DiscLoss disc_loss(const BackboneParams& backbone, const PrefixBank& bank, const LabeledSequence& seq) {
  check_label(bank, seq.label);
  Tape tape;
  auto bb = bind_backbone(tape, backbone);
  auto prefixes = bind_all_prefixes(tape, bank);
  auto included = included_positions(seq);
  auto rows = label_logprob_rows(bb, prefixes, seq);
  DiscLoss out;
  Var ratio = disc_ratio_var(rows, seq.label, included, &out.clamped);
  out.per_token = ratio.value().data();
  double s = 0.0;
  for (double v : out.per_token) s += v;
  out.scalar = -s / static_cast<double>(out.per_token.size());
  return out;
}

}  // namespace fewgen
