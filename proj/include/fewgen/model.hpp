#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fewgen/autodiff.hpp"
#include "fewgen/vocab.hpp"

namespace fewgen {

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t prefix_len = 8;
  std::size_t max_len = 64;
  std::size_t ffn_mult = 4;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Decoder-only transformer weights. Output logits reuse the token embedding.
struct BackboneParams {
  ModelConfig config;
  ParameterSet params;

  void freeze() { params.set_all_trainable(false); }
  bool frozen() const;
};

/// Per-label key/value prefixes for every attention layer, plus an optional
/// per-label infix embedding that replaces <sep> in pair mode.
struct PrefixBank {
  std::size_t num_labels = 0;
  std::size_t prefix_len = 0;
  std::size_t layers = 0;
  bool has_infix = false;
  ParameterSet params;

  static std::string key_name(std::size_t label, std::size_t layer);
  static std::string value_name(std::size_t label, std::size_t layer);
  static std::string infix_name(std::size_t label);

  /// Names of the tensors owned by one label.
  std::vector<std::string> label_tensors(std::size_t label) const;
};

/// Seeded Gaussian(0, 0.02) weights, unit layer-norm gains, zero biases.
BackboneParams init_backbone(const ModelConfig& config, std::uint64_t seed);

PrefixBank random_prefix_bank(const ModelConfig& config, std::size_t num_labels, bool infix,
                              std::uint64_t seed, double sigma = 0.02);

/// Initializes label l's prefix from the backbone's per-layer keys/values on
/// seed_phrases[l] (exactly prefix_len tokens). Labels with an empty phrase
/// fall back to Gaussian(0, 0.02). The infix starts at the <sep> embedding.
PrefixBank prefix_bank_from_phrases(const BackboneParams& backbone,
                                    const std::vector<std::vector<TokenId>>& seed_phrases,
                                    bool infix, std::uint64_t seed);

/// Backbone tensors placed on a tape. Frozen tensors become constants.
struct BoundBackbone {
  struct Layer {
    Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  const ModelConfig* config = nullptr;
  Tape* tape = nullptr;
  Var tok_emb, pos_emb, lnf_g, lnf_b;
  std::vector<Layer> layers;
};

struct BoundPrefix {
  std::vector<Var> keys;
  std::vector<Var> values;
  std::optional<Var> infix;
};

BoundBackbone bind_backbone(Tape& tape, const BackboneParams& backbone);
/// Binds backbone-named tensors from any parameter set; config must outlive the result.
BoundBackbone bind_backbone(Tape& tape, const ModelConfig& config, const ParameterSet& params);
BoundPrefix bind_prefix(Tape& tape, const PrefixBank& bank, std::size_t label);

/// Model input for teacher forcing: <bos> followed by all but the last token.
struct LmInput {
  std::vector<TokenId> ids;
  std::optional<std::size_t> infix_row;
};
LmInput teacher_forcing_input(const LabeledSequence& seq);
/// Input for predicting the token after context: <bos> + context.
LmInput context_input(const std::vector<TokenId>& context);

/// Per-layer attention keys/values of the input positions, for prefix init.
struct LayerKV {
  Tensor keys, values;
};

/// Final-layer-norm hidden states, one row per input position.
Var hidden_states(const BoundBackbone& bb, const BoundPrefix* prefix, const LmInput& input,
                  std::vector<LayerKV>* trace = nullptr);
Var lm_logits(const BoundBackbone& bb, const BoundPrefix* prefix, const LmInput& input);
/// 1 x n row of log p(x_j | x_<j) over every target position.
Var token_logprob_row(const BoundBackbone& bb, const BoundPrefix* prefix, const LabeledSequence& seq);

struct TokenLogprobs {
  std::vector<double> values;
  std::vector<bool> excluded;

  std::vector<double> included() const;
};

std::vector<double> next_token_logits(const BackboneParams& backbone, const PrefixBank& bank,
                                      std::size_t label, const std::vector<TokenId>& context);
std::vector<double> next_token_distribution(const BackboneParams& backbone, const PrefixBank& bank,
                                            std::size_t label, const std::vector<TokenId>& context);
TokenLogprobs sequence_token_logprobs(const BackboneParams& backbone, const PrefixBank& bank,
                                      std::size_t label, const LabeledSequence& seq);

void check_label(const PrefixBank& bank, std::size_t label);

}  // namespace fewgen
