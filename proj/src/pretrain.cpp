#include "fewgen/pretrain.hpp"

#include <cmath>
#include <random>

#include "fewgen/optim.hpp"

namespace fewgen {

BackboneParams pretrain_backbone(const Dataset& corpus, const ModelConfig& config,
                                 const PretrainOptions& options) {
  if (corpus.empty()) throw Error("pretrain_backbone: empty corpus");
  config.validate();
  for (const auto& s : corpus) validate(with_eos(s), config.vocab_size, 1 + s.label, config.max_len);

  BackboneParams bp = init_backbone(config, options.seed);
  Adam adam(options.learning_rate);
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);

  for (std::size_t step = 0; step < options.steps; ++step) {
    Tape tape;
    auto bb = bind_backbone(tape, bp);
    std::vector<Var> rows;
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      auto seq = with_eos(corpus[pick(rng)]);
      rows.push_back(token_logprob_row(bb, nullptr, seq));
    }
    Var all = ad::concat_cols(rows);
    Var loss = ad::scale(ad::mean(all), -1.0);
    if (!std::isfinite(loss.value().item()))
      throw Error("pretrain_backbone: non-finite loss at step " + std::to_string(step));
    auto grads = clip_gradients(backward_gradients(loss, bp.params), options.clip_norm);
    adam.step(bp.params, grads);
  }
  bp.freeze();
  return bp;
}

double backbone_perplexity(const BackboneParams& backbone, const Dataset& data) {
  if (data.empty()) throw Error("backbone_perplexity: empty dataset");
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& s : data) {
    Tape tape;
    auto bb = bind_backbone(tape, backbone);
    auto row = token_logprob_row(bb, nullptr, with_eos(s));
    for (double v : row.value().values()) nll -= v;
    count += row.value().size();
  }
  return std::exp(nll / static_cast<double>(count));
}

}  // namespace fewgen
