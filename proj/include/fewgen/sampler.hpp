#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "fewgen/model.hpp"

namespace fewgen {

enum class GenerationMode { Single, Pair };

enum class StartPolicy {
  None,        // start right after <bos>
  FixedList,   // every sample starts with start_tokens
  RandomWord,  // first token drawn uniformly from start_tokens
  CorpusDraw,  // pair mode: condition on a first sequence drawn from the corpus
};

struct GenerationConfig {
  double temperature = 0.5;         // 0 is greedy
  double repetition_penalty = 1.0;  // divides the temperature of already generated tokens
  std::size_t top_k = 10;           // 0 keeps every token
  std::size_t max_new_tokens = 16;
  GenerationMode mode = GenerationMode::Single;
  StartPolicy start = StartPolicy::None;
  std::vector<TokenId> start_tokens;
  std::size_t samples_per_label = 500;

  void validate(std::size_t vocab_size) const;
};

/// exp(z_i / w_i) normalized, with w_i = temperature * penalty for tokens in
/// generated and temperature otherwise.
std::vector<double> penalized_distribution(std::span<const double> logits, const std::set<TokenId>& generated,
                                           double temperature, double penalty);

/// Token ids that survive masking and top-k at one step, highest logit first.
std::vector<TokenId> candidate_tokens(std::span<const double> logits, std::size_t top_k, bool allow_eos);

/// Samples one continuation under label's prefix. In pair mode, conditioning
/// is the first sequence and the result is first, <sep>, continuation.
LabeledSequence sample_sequence(const BackboneParams& backbone, const PrefixBank& bank, std::size_t label,
                                const GenerationConfig& config, std::mt19937_64& rng,
                                const std::vector<TokenId>* conditioning = nullptr);

/// Independent stream for sample index of a label.
std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t label, std::size_t index);

/// samples_per_label sequences per label, label i generated with configs[i]
/// (or configs[0] if only one is given). Pair mode draws the first sequence
/// uniformly from corpus.
Dataset synthesize_dataset(const BackboneParams& backbone, const PrefixBank& bank,
                           const std::vector<GenerationConfig>& configs,
                           const std::vector<std::vector<TokenId>>& corpus, std::uint64_t seed);

}  // namespace fewgen
