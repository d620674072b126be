#include "fewgen/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace fewgen {

namespace {

std::string layer_name(std::size_t i, const char* leaf) {
  return "layer" + std::to_string(i) + "." + leaf;
}

Tensor gaussian(std::mt19937_64& rng, std::size_t r, std::size_t c, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::matrix(r, c, std::move(v));
}

Tensor filled(std::size_t r, std::size_t c, double value) {
  return Tensor::matrix(r, c, std::vector<double>(r * c, value));
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < Vocabulary::kReserved) throw Error("vocab_size must be >= 4");
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    throw Error("d_model must be a positive multiple of heads");
  if (prefix_len < 1) throw Error("prefix_len must be >= 1");
  if (max_len < 1) throw Error("max_len must be >= 1");
  if (ffn_mult < 1) throw Error("ffn_mult must be >= 1");
}

bool BackboneParams::frozen() const {
  return std::none_of(params.entries().begin(), params.entries().end(),
                      [](const auto& e) { return e.trainable; });
}

std::string PrefixBank::key_name(std::size_t label, std::size_t layer) {
  return "prefix." + std::to_string(label) + ".layer" + std::to_string(layer) + ".key";
}

std::string PrefixBank::value_name(std::size_t label, std::size_t layer) {
  return "prefix." + std::to_string(label) + ".layer" + std::to_string(layer) + ".value";
}

std::string PrefixBank::infix_name(std::size_t label) {
  return "prefix." + std::to_string(label) + ".infix";
}

std::vector<std::string> PrefixBank::label_tensors(std::size_t label) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers; ++i) {
    out.push_back(key_name(label, i));
    out.push_back(value_name(label, i));
  }
  if (has_infix) out.push_back(infix_name(label));
  return out;
}

BackboneParams init_backbone(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model, V = config.vocab_size, f = config.ffn_mult * d;
  const double s = 0.02;
  BackboneParams bp;
  bp.config = config;
  auto& p = bp.params;
  p.add("tok_emb", gaussian(rng, V, d, s));
  p.add("pos_emb", gaussian(rng, config.max_len, d, s));
  for (std::size_t i = 0; i < config.layers; ++i) {
    p.add(layer_name(i, "ln1.g"), filled(1, d, 1.0));
    p.add(layer_name(i, "ln1.b"), filled(1, d, 0.0));
    p.add(layer_name(i, "attn.wq"), gaussian(rng, d, d, s));
    p.add(layer_name(i, "attn.bq"), filled(1, d, 0.0));
    p.add(layer_name(i, "attn.wk"), gaussian(rng, d, d, s));
    p.add(layer_name(i, "attn.bk"), filled(1, d, 0.0));
    p.add(layer_name(i, "attn.wv"), gaussian(rng, d, d, s));
    p.add(layer_name(i, "attn.bv"), filled(1, d, 0.0));
    p.add(layer_name(i, "attn.wo"), gaussian(rng, d, d, s));
    p.add(layer_name(i, "attn.bo"), filled(1, d, 0.0));
    p.add(layer_name(i, "ln2.g"), filled(1, d, 1.0));
    p.add(layer_name(i, "ln2.b"), filled(1, d, 0.0));
    p.add(layer_name(i, "ffn.w1"), gaussian(rng, d, f, s));
    p.add(layer_name(i, "ffn.b1"), filled(1, f, 0.0));
    p.add(layer_name(i, "ffn.w2"), gaussian(rng, f, d, s));
    p.add(layer_name(i, "ffn.b2"), filled(1, d, 0.0));
  }
  p.add("lnf.g", filled(1, d, 1.0));
  p.add("lnf.b", filled(1, d, 0.0));
  return bp;
}

PrefixBank random_prefix_bank(const ModelConfig& config, std::size_t num_labels, bool infix,
                              std::uint64_t seed, double sigma) {
  config.validate();
  if (num_labels < 1) throw Error("prefix bank needs at least one label");
  std::mt19937_64 rng(seed);
  PrefixBank bank;
  bank.num_labels = num_labels;
  bank.prefix_len = config.prefix_len;
  bank.layers = config.layers;
  bank.has_infix = infix;
  for (std::size_t l = 0; l < num_labels; ++l) {
    for (std::size_t i = 0; i < config.layers; ++i) {
      bank.params.add(PrefixBank::key_name(l, i), gaussian(rng, config.prefix_len, config.d_model, sigma));
      bank.params.add(PrefixBank::value_name(l, i),
                      gaussian(rng, config.prefix_len, config.d_model, sigma));
    }
    if (infix) bank.params.add(PrefixBank::infix_name(l), gaussian(rng, 1, config.d_model, sigma));
  }
  return bank;
}

PrefixBank prefix_bank_from_phrases(const BackboneParams& backbone,
                                    const std::vector<std::vector<TokenId>>& seed_phrases,
                                    bool infix, std::uint64_t seed) {
  const auto& cfg = backbone.config;
  PrefixBank bank = random_prefix_bank(cfg, seed_phrases.size(), infix, seed);
  const auto& emb = backbone.params.get("tok_emb");
  for (std::size_t l = 0; l < seed_phrases.size(); ++l) {
    if (infix) {
      std::vector<double> sep(emb.data().begin() + Vocabulary::kSep * cfg.d_model,
                              emb.data().begin() + (Vocabulary::kSep + 1) * cfg.d_model);
      bank.params.set(PrefixBank::infix_name(l), Tensor::row(std::move(sep)));
    }
    const auto& phrase = seed_phrases[l];
    if (phrase.empty()) continue;
    if (phrase.size() != cfg.prefix_len) {
      throw Error("seed phrase for label " + std::to_string(l) + " has " +
                  std::to_string(phrase.size()) + " tokens, prefix length is " +
                  std::to_string(cfg.prefix_len));
    }
    Tape tape;
    auto bb = bind_backbone(tape, backbone);
    LmInput in{phrase, std::nullopt};
    std::vector<LayerKV> trace;
    hidden_states(bb, nullptr, in, &trace);
    for (std::size_t i = 0; i < cfg.layers; ++i) {
      bank.params.set(PrefixBank::key_name(l, i), trace[i].keys);
      bank.params.set(PrefixBank::value_name(l, i), trace[i].values);
    }
  }
  return bank;
}

BoundBackbone bind_backbone(Tape& tape, const BackboneParams& backbone) {
  return bind_backbone(tape, backbone.config, backbone.params);
}

BoundBackbone bind_backbone(Tape& tape, const ModelConfig& config, const ParameterSet& p) {
  BoundBackbone bb;
  bb.config = &config;
  bb.tape = &tape;
  bb.tok_emb = tape.parameter(p, "tok_emb");
  bb.pos_emb = tape.parameter(p, "pos_emb");
  for (std::size_t i = 0; i < config.layers; ++i) {
    auto b = [&](const char* leaf) { return tape.parameter(p, layer_name(i, leaf)); };
    bb.layers.push_back({b("ln1.g"), b("ln1.b"), b("attn.wq"), b("attn.bq"), b("attn.wk"),
                         b("attn.bk"), b("attn.wv"), b("attn.bv"), b("attn.wo"), b("attn.bo"),
                         b("ln2.g"), b("ln2.b"), b("ffn.w1"), b("ffn.b1"), b("ffn.w2"),
                         b("ffn.b2")});
  }
  bb.lnf_g = tape.parameter(p, "lnf.g");
  bb.lnf_b = tape.parameter(p, "lnf.b");
  return bb;
}

void check_label(const PrefixBank& bank, std::size_t label) {
  if (label >= bank.num_labels) {
    throw Error("label " + std::to_string(label) + " out of range for " +
                std::to_string(bank.num_labels) + " prefixes");
  }
}

BoundPrefix bind_prefix(Tape& tape, const PrefixBank& bank, std::size_t label) {
  check_label(bank, label);
  BoundPrefix bp;
  for (std::size_t i = 0; i < bank.layers; ++i) {
    bp.keys.push_back(tape.parameter(bank.params, PrefixBank::key_name(label, i)));
    bp.values.push_back(tape.parameter(bank.params, PrefixBank::value_name(label, i)));
  }
  if (bank.has_infix) bp.infix = tape.parameter(bank.params, PrefixBank::infix_name(label));
  return bp;
}

LmInput teacher_forcing_input(const LabeledSequence& seq) {
  if (seq.tokens.empty()) throw Error("empty sequence");
  LmInput in;
  in.ids.push_back(Vocabulary::kBos);
  in.ids.insert(in.ids.end(), seq.tokens.begin(), seq.tokens.end() - 1);
  if (seq.pair && seq.first_len + 1 < in.ids.size()) in.infix_row = seq.first_len + 1;
  return in;
}

LmInput context_input(const std::vector<TokenId>& context) {
  LmInput in;
  in.ids.push_back(Vocabulary::kBos);
  in.ids.insert(in.ids.end(), context.begin(), context.end());
  auto it = std::find(context.begin(), context.end(), Vocabulary::kSep);
  if (it != context.end()) in.infix_row = static_cast<std::size_t>(it - context.begin()) + 1;
  return in;
}

Var hidden_states(const BoundBackbone& bb, const BoundPrefix* prefix, const LmInput& input,
                  std::vector<LayerKV>* trace) {
  const auto& cfg = *bb.config;
  const std::size_t n = input.ids.size();
  if (n == 0) throw Error("empty model input");
  if (n > cfg.max_len) {
    throw Error("input of " + std::to_string(n) + " positions exceeds max_len " +
                std::to_string(cfg.max_len));
  }
  const std::size_t dh = cfg.d_model / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Var emb = ad::embedding(bb.tok_emb, input.ids);
  if (prefix && prefix->infix && input.infix_row) emb = ad::set_row(emb, *input.infix_row, *prefix->infix);
  Var x = ad::add(emb, ad::slice_rows(bb.pos_emb, 0, n));

  for (std::size_t li = 0; li < bb.layers.size(); ++li) {
    const auto& L = bb.layers[li];
    Var h = ad::layer_norm_rows(x, L.ln1_g, L.ln1_b);
    Var q = ad::add_row(ad::matmul(h, L.wq), L.bq);
    Var k = ad::add_row(ad::matmul(h, L.wk), L.bk);
    Var v = ad::add_row(ad::matmul(h, L.wv), L.bv);
    if (trace) trace->push_back({k.value(), v.value()});
    long long offset = 0;
    if (prefix) {
      std::vector<Var> kp{prefix->keys[li], k}, vp{prefix->values[li], v};
      k = ad::concat_rows(kp);
      v = ad::concat_rows(vp);
      offset = static_cast<long long>(prefix->keys[li].rows());
    }
    std::vector<Var> heads;
    heads.reserve(cfg.heads);
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
      Var qh = ad::slice_cols(q, hd * dh, dh);
      Var kh = ad::slice_cols(k, hd * dh, dh);
      Var vh = ad::slice_cols(v, hd * dh, dh);
      Var att = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), offset);
      heads.push_back(ad::matmul(att, vh));
    }
    Var o = heads.size() == 1 ? heads[0] : ad::concat_cols(heads);
    x = ad::add(x, ad::add_row(ad::matmul(o, L.wo), L.bo));
    Var h2 = ad::layer_norm_rows(x, L.ln2_g, L.ln2_b);
    Var f = ad::gelu(ad::add_row(ad::matmul(h2, L.w1), L.b1));
    x = ad::add(x, ad::add_row(ad::matmul(f, L.w2), L.b2));
  }
  return ad::layer_norm_rows(x, bb.lnf_g, bb.lnf_b);
}

Var lm_logits(const BoundBackbone& bb, const BoundPrefix* prefix, const LmInput& input) {
  return ad::matmul_nt(hidden_states(bb, prefix, input), bb.tok_emb);
}

Var token_logprob_row(const BoundBackbone& bb, const BoundPrefix* prefix, const LabeledSequence& seq) {
  for (auto t : seq.tokens)
    if (t >= bb.config->vocab_size) throw Error("token id " + std::to_string(t) + " >= vocabulary size");
  auto in = teacher_forcing_input(seq);
  Var lsm = ad::log_softmax_rows(lm_logits(bb, prefix, in));
  std::vector<std::size_t> rows(seq.tokens.size());
  for (std::size_t j = 0; j < rows.size(); ++j) rows[j] = j;
  return ad::pick(lsm, rows, seq.tokens);
}

std::vector<double> TokenLogprobs::included() const {
  std::vector<double> out;
  for (std::size_t j = 0; j < values.size(); ++j)
    if (!excluded[j]) out.push_back(values[j]);
  return out;
}

std::vector<double> next_token_logits(const BackboneParams& backbone, const PrefixBank& bank,
                                      std::size_t label, const std::vector<TokenId>& context) {
  check_label(bank, label);
  if (context.size() >= backbone.config.max_len) {
    throw Error("context of " + std::to_string(context.size()) + " tokens is too long (max_len " +
                std::to_string(backbone.config.max_len) + ")");
  }
  Tape tape;
  auto bb = bind_backbone(tape, backbone);
  auto pf = bind_prefix(tape, bank, label);
  auto logits = lm_logits(bb, &pf, context_input(context));
  const auto& lv = logits.value();
  std::size_t last = lv.rows() - 1, V = lv.cols();
  return {lv.data().begin() + last * V, lv.data().begin() + (last + 1) * V};
}

std::vector<double> next_token_distribution(const BackboneParams& backbone, const PrefixBank& bank,
                                            std::size_t label, const std::vector<TokenId>& context) {
  return softmax_stable(next_token_logits(backbone, bank, label, context));
}

TokenLogprobs sequence_token_logprobs(const BackboneParams& backbone, const PrefixBank& bank,
                                      std::size_t label, const LabeledSequence& seq) {
  check_label(bank, label);
  if (seq.tokens.empty() || seq.tokens.size() > backbone.config.max_len) {
    throw Error("sequence length " + std::to_string(seq.tokens.size()) + " outside [1, max_len]");
  }
  Tape tape;
  auto bb = bind_backbone(tape, backbone);
  auto pf = bind_prefix(tape, bank, label);
  auto row = token_logprob_row(bb, &pf, seq);
  TokenLogprobs out;
  out.values = row.value().data();
  out.excluded.resize(out.values.size());
  for (std::size_t j = 0; j < out.values.size(); ++j) out.excluded[j] = seq.excluded(j);
  return out;
}

}  // namespace fewgen
