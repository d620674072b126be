#include "fewgen/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fewgen {

void GenerationConfig::validate(std::size_t vocab_size) const {
  if (!(temperature >= 0.0 && temperature <= 10.0)) throw Error("generation: temperature must be in [0, 10]");
  if (!(repetition_penalty >= 1.0) || !std::isfinite(repetition_penalty))
    throw Error("generation: repetition_penalty must be >= 1");
  if (top_k > vocab_size) throw Error("generation: top_k exceeds the vocabulary size");
  if (max_new_tokens == 0) throw Error("generation: max_new_tokens must be positive");
  if (samples_per_label == 0) throw Error("generation: samples_per_label must be positive");
  if ((start == StartPolicy::FixedList || start == StartPolicy::RandomWord) && start_tokens.empty())
    throw Error("generation: start policy needs start_tokens");
  if (start == StartPolicy::CorpusDraw && mode != GenerationMode::Pair)
    throw Error("generation: corpus-draw start only applies to pair mode");
  for (auto t : start_tokens)
    if (t < Vocabulary::kReserved || t >= vocab_size) throw Error("generation: invalid start token");
}

std::vector<double> penalized_distribution(std::span<const double> logits, const std::set<TokenId>& generated,
                                           double temperature, double penalty) {
  if (temperature == 0.0) throw Error("penalized_distribution: greedy handled by caller");
  if (!(temperature > 0.0)) throw Error("penalized_distribution: temperature must be > 0");
  if (!(penalty >= 1.0)) throw Error("penalized_distribution: penalty must be >= 1");
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    scaled[i] = logits[i] / (generated.count(i) ? temperature * penalty : temperature);
  return softmax_stable(scaled);
}

std::vector<TokenId> candidate_tokens(std::span<const double> logits, std::size_t top_k, bool allow_eos) {
  std::vector<TokenId> ids;
  for (TokenId i = 0; i < logits.size(); ++i) {
    if (i == Vocabulary::kBos || i == Vocabulary::kPad || i == Vocabulary::kSep) continue;
    if (i == Vocabulary::kEos && !allow_eos) continue;
    ids.push_back(i);
  }
  std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) { return logits[a] > logits[b]; });
  if (top_k > 0 && ids.size() > top_k) ids.resize(top_k);
  return ids;
}

namespace {

TokenId choose(std::span<const double> logits, const std::set<TokenId>& generated, const GenerationConfig& cfg,
               bool allow_eos, std::mt19937_64& rng) {
  auto ids = candidate_tokens(logits, cfg.top_k, allow_eos);
  std::vector<double> z(ids.size());
  std::set<TokenId> repeated;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    z[i] = logits[ids[i]];
    if (generated.count(ids[i])) repeated.insert(i);
  }
  if (cfg.temperature == 0.0) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < z.size(); ++i) {
      double score = repeated.count(i) ? z[i] / cfg.repetition_penalty : z[i];
      if (score > best_score) {
        best_score = score;
        best = i;
      }
    }
    return ids[best];
  }
  auto p = penalized_distribution(z, repeated, cfg.temperature, cfg.repetition_penalty);
  std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
  return ids[pick(rng)];
}

}  // namespace

LabeledSequence sample_sequence(const BackboneParams& backbone, const PrefixBank& bank, std::size_t label,
                                const GenerationConfig& config, std::mt19937_64& rng,
                                const std::vector<TokenId>* conditioning) {
  const auto& mc = backbone.config;
  config.validate(mc.vocab_size);
  check_label(bank, label);
  const bool pair = config.mode == GenerationMode::Pair;
  if (pair && !conditioning) throw Error("sample_sequence: pair mode needs a first sequence");

  std::vector<TokenId> context;
  if (pair) {
    if (conditioning->empty()) throw Error("sample_sequence: empty first sequence");
    if (conditioning->size() + 2 > mc.max_len)
      throw Error("sample_sequence: first sequence of " + std::to_string(conditioning->size()) +
                  " tokens is too long for max_len " + std::to_string(mc.max_len));
    context = *conditioning;
    context.push_back(Vocabulary::kSep);
  }
  const std::size_t fixed = context.size();

  std::vector<TokenId> out;
  if (config.start == StartPolicy::FixedList) {
    out = config.start_tokens;
  } else if (config.start == StartPolicy::RandomWord) {
    std::uniform_int_distribution<std::size_t> d(0, config.start_tokens.size() - 1);
    out.push_back(config.start_tokens[d(rng)]);
  }
  if (fixed + out.size() >= mc.max_len) throw Error("sample_sequence: start tokens leave no room to generate");

  std::set<TokenId> generated;
  const std::size_t limit = std::min(config.max_new_tokens + out.size(), mc.max_len - 1 - fixed);
  while (out.size() < limit) {
    context.resize(fixed);
    context.insert(context.end(), out.begin(), out.end());
    auto logits = next_token_logits(backbone, bank, label, context);
    TokenId t = choose(logits, generated, config, !out.empty(), rng);
    if (t == Vocabulary::kEos) break;
    out.push_back(t);
    generated.insert(t);
  }

  if (pair) return make_pair(*conditioning, out, label, "generated");
  return make_single(std::move(out), label, "generated");
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t label, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Dataset synthesize_dataset(const BackboneParams& backbone, const PrefixBank& bank,
                           const std::vector<GenerationConfig>& configs,
                           const std::vector<std::vector<TokenId>>& corpus, std::uint64_t seed) {
  if (configs.empty()) throw Error("synthesize_dataset: no generation config");
  if (configs.size() != 1 && configs.size() != bank.num_labels)
    throw Error("synthesize_dataset: need one generation config or one per label");
  Dataset out;
  for (std::size_t label = 0; label < bank.num_labels; ++label) {
    const auto& cfg = configs.size() == 1 ? configs[0] : configs[label];
    const bool pair = cfg.mode == GenerationMode::Pair;
    if (pair && corpus.empty()) throw Error("synthesize_dataset: pair mode needs a non-empty corpus");
    for (std::size_t i = 0; i < cfg.samples_per_label; ++i) {
      auto rng = sample_rng(seed, label, i);
      const std::vector<TokenId>* first = nullptr;
      if (pair) {
        std::uniform_int_distribution<std::size_t> d(0, corpus.size() - 1);
        first = &corpus[d(rng)];
      }
      out.push_back(sample_sequence(backbone, bank, label, cfg, rng, first));
    }
  }
  return out;
}

}  // namespace fewgen
