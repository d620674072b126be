#pragma once

#include <cstdint>

#include "fewgen/model.hpp"

namespace fewgen {

struct PretrainOptions {
  std::size_t steps = 1500;
  std::size_t batch_size = 16;
  double learning_rate = 3e-3;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

/// Next-token maximum likelihood on corpus (each sequence followed by <eos>),
/// Adam, then every tensor frozen. Deterministic given options.seed.
BackboneParams pretrain_backbone(const Dataset& corpus, const ModelConfig& config,
                                 const PretrainOptions& options);

/// exp of the mean next-token NLL (including <eos>) of the bare backbone.
double backbone_perplexity(const BackboneParams& backbone, const Dataset& data);

}  // namespace fewgen
