#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "fewgen/checkpoint.hpp"
#include "fewgen/model.hpp"
#include "fewgen/pretrain.hpp"

using namespace fewgen;

namespace {

ModelConfig tiny_config(std::size_t layers = 1) {
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.layers = layers;
  c.heads = 2;
  c.prefix_len = 3;
  c.max_len = 16;
  c.ffn_mult = 2;
  return c;
}

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<TokenId> d(Vocabulary::kReserved, vocab - 1);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = d(rng);
  return t;
}

PrefixBank copy_label(PrefixBank bank, std::size_t from, std::size_t to) {
  auto src = bank.label_tensors(from);
  auto dst = bank.label_tensors(to);
  for (std::size_t i = 0; i < src.size(); ++i) bank.params.set(dst[i], bank.params.get(src[i]));
  return bank;
}

}  // namespace

TEST_CASE("next-token distributions are normalized") {
  auto cfg = tiny_config(2);
  auto bb = init_backbone(cfg, 3);
  auto bank = random_prefix_bank(cfg, 3, false, 4, 0.5);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto ctx = random_tokens(rng, 1 + trial % 6, cfg.vocab_size);
    auto p = next_token_distribution(bb, bank, trial % 3, ctx);
    REQUIRE(p.size() == cfg.vocab_size);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("identical prefixes give identical distributions") {
  auto cfg = tiny_config(2);
  auto bb = init_backbone(cfg, 1);
  auto bank = copy_label(random_prefix_bank(cfg, 2, false, 2, 0.5), 0, 1);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto ctx = random_tokens(rng, 4, cfg.vocab_size);
    CHECK(next_token_distribution(bb, bank, 0, ctx) == next_token_distribution(bb, bank, 1, ctx));
  }

  auto distinct = random_prefix_bank(cfg, 2, false, 2, 0.5);
  auto ctx = random_tokens(rng, 4, cfg.vocab_size);
  CHECK(next_token_distribution(bb, distinct, 0, ctx) != next_token_distribution(bb, distinct, 1, ctx));
}

TEST_CASE("zero-layer model matches a hand evaluation") {
  ModelConfig cfg = tiny_config(0);
  cfg.vocab_size = 4;
  cfg.d_model = 4;
  auto bb = init_backbone(cfg, 11);
  auto bank = random_prefix_bank(cfg, 1, false, 0);
  std::vector<TokenId> ctx{2, 3};

  const auto& emb = bb.params.get("tok_emb").data();
  const auto& pos = bb.params.get("pos_emb").data();
  const std::size_t d = cfg.d_model, row = ctx.size();  // <bos> occupies position 0
  std::vector<double> x(d);
  for (std::size_t c = 0; c < d; ++c) x[c] = emb[ctx.back() * d + c] + pos[row * d + c];
  double mean = 0.0, var = 0.0;
  for (double v : x) mean += v / d;
  for (double v : x) var += (v - mean) * (v - mean) / d;
  std::vector<double> logits(cfg.vocab_size, 0.0);
  for (std::size_t t = 0; t < cfg.vocab_size; ++t)
    for (std::size_t c = 0; c < d; ++c) logits[t] += emb[t * d + c] * (x[c] - mean) / std::sqrt(var + 1e-5);
  auto expected = softmax_stable(logits);

  auto got = next_token_distribution(bb, bank, 0, ctx);
  for (std::size_t t = 0; t < cfg.vocab_size; ++t) CHECK(std::abs(got[t] - expected[t]) < 1e-12);
}

TEST_CASE("uniform output model gives -ln V per token") {
  auto cfg = tiny_config(1);
  auto bb = init_backbone(cfg, 2);
  bb.params.set("tok_emb", Tensor::zeros({cfg.vocab_size, cfg.d_model}));
  auto bank = random_prefix_bank(cfg, 2, false, 3);
  auto lp = sequence_token_logprobs(bb, bank, 1, make_single({5}, 1));
  REQUIRE(lp.values.size() == 1);
  CHECK(std::abs(lp.values[0] + std::log(static_cast<double>(cfg.vocab_size))) < 1e-12);
}

TEST_CASE("sequence log-probs agree with step-by-step evaluation") {
  auto cfg = tiny_config(2);
  auto bb = init_backbone(cfg, 21);
  auto bank = random_prefix_bank(cfg, 2, false, 22, 0.3);
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    auto seq = make_single(random_tokens(rng, 5, cfg.vocab_size), trial % 2);
    auto lp = sequence_token_logprobs(bb, bank, seq.label, seq);
    REQUIRE(lp.values.size() == 5);
    double sum = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      std::vector<TokenId> ctx(seq.tokens.begin(), seq.tokens.begin() + j);
      auto p = next_token_distribution(bb, bank, seq.label, ctx);
      CHECK(std::abs(lp.values[j] - std::log(p[seq.tokens[j]])) < 1e-10);
      CHECK(lp.values[j] <= 0.0);
      sum += lp.values[j];
    }
    double gen = -sum / 5.0;
    CHECK(std::abs(sum - (-5.0 * gen)) < 1e-12);
  }
}

TEST_CASE("log-probs are causal") {
  auto cfg = tiny_config(2);
  auto bb = init_backbone(cfg, 31);
  auto bank = random_prefix_bank(cfg, 2, false, 32, 0.3);
  std::mt19937_64 rng(33);
  auto base = random_tokens(rng, 8, cfg.vocab_size);
  auto a = sequence_token_logprobs(bb, bank, 0, make_single(base, 0)).values;
  for (std::size_t j = 0; j < base.size(); ++j) {
    auto changed = base;
    for (std::size_t k = j; k < changed.size(); ++k)
      changed[k] = Vocabulary::kReserved + (changed[k] + 1 - Vocabulary::kReserved) % (cfg.vocab_size - 4);
    auto b = sequence_token_logprobs(bb, bank, 0, make_single(changed, 0)).values;
    for (std::size_t i = 0; i < j; ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("pair sequences flag the conditioning part") {
  auto cfg = tiny_config(1);
  auto bb = init_backbone(cfg, 41);
  auto bank = random_prefix_bank(cfg, 2, true, 42);
  auto seq = make_pair({4, 5, 6}, {7, 8}, 1);
  auto lp = sequence_token_logprobs(bb, bank, 1, seq);
  REQUIRE(lp.excluded.size() == 6);
  CHECK(lp.excluded == std::vector<bool>{true, true, true, true, false, false});
  CHECK(lp.included().size() == 2);
}

TEST_CASE("infix embedding only affects pair sequences") {
  auto cfg = tiny_config(1);
  auto bb = init_backbone(cfg, 43);
  auto bank = random_prefix_bank(cfg, 1, true, 44);
  auto seq = make_pair({4, 5}, {6, 7}, 0);
  auto before = sequence_token_logprobs(bb, bank, 0, seq).values;
  bank.params.set(PrefixBank::infix_name(0), Tensor::row(std::vector<double>(cfg.d_model, 0.7)));
  auto after = sequence_token_logprobs(bb, bank, 0, seq).values;
  CHECK(before[0] == after[0]);
  CHECK(before[1] == after[1]);
  CHECK(before[3] != after[3]);
}

TEST_CASE("label and context errors") {
  auto cfg = tiny_config(1);
  auto bb = init_backbone(cfg, 1);
  auto bank = random_prefix_bank(cfg, 2, false, 1);
  CHECK_THROWS_WITH(next_token_distribution(bb, bank, 2, {4}), doctest::Contains("out of range"));
  std::vector<TokenId> long_ctx(cfg.max_len, 4);
  CHECK_THROWS_WITH(next_token_distribution(bb, bank, 0, long_ctx), doctest::Contains("too long"));
  CHECK_THROWS(sequence_token_logprobs(bb, bank, 5, make_single({4}, 0)));
  ModelConfig bad = cfg;
  bad.heads = 3;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("backbone is frozen for prefix gradients") {
  auto cfg = tiny_config(1);
  auto bb = init_backbone(cfg, 51);
  bb.freeze();
  auto bank = random_prefix_bank(cfg, 2, false, 52);
  Tape tape;
  auto bound = bind_backbone(tape, bb);
  auto pf = bind_prefix(tape, bank, 0);
  auto row = token_logprob_row(bound, &pf, make_single({4, 5, 6}, 0));
  auto loss = ad::sum(row);
  CHECK(backward_gradients(loss, bb.params).names.empty());
  CHECK(backward_gradients(loss, bank.params).names.size() == bank.params.size());
}

TEST_CASE("prefix initialization from phrases") {
  auto cfg = tiny_config(2);
  auto bb = init_backbone(cfg, 61);
  auto bank = prefix_bank_from_phrases(bb, {{4, 5, 6}, {}}, true, 62);
  CHECK(bank.num_labels == 2);
  CHECK(bank.params.get(PrefixBank::key_name(0, 1)).shape() == Shape{cfg.prefix_len, cfg.d_model});
  CHECK(bank.params.get(PrefixBank::infix_name(1)) ==
        Tensor::row(std::vector<double>(bb.params.get("tok_emb").data().begin() + Vocabulary::kSep * cfg.d_model,
                                        bb.params.get("tok_emb").data().begin() + (Vocabulary::kSep + 1) * cfg.d_model)));
  CHECK_THROWS(prefix_bank_from_phrases(bb, {{4, 5}}, false, 1));
}

TEST_CASE("pretraining contracts") {
  auto cfg = tiny_config(1);
  Dataset corpus;
  std::mt19937_64 rng(71);
  for (int i = 0; i < 20; ++i) corpus.push_back(make_single(random_tokens(rng, 6, cfg.vocab_size), 0));

  PretrainOptions none;
  none.steps = 0;
  none.seed = 5;
  auto untouched = pretrain_backbone(corpus, cfg, none);
  auto init = init_backbone(cfg, 5);
  init.freeze();
  CHECK(untouched.params == init.params);
  CHECK(untouched.frozen());

  PretrainOptions some;
  some.steps = 5;
  some.batch_size = 4;
  some.seed = 6;
  auto a = pretrain_backbone(corpus, cfg, some);
  auto b = pretrain_backbone(corpus, cfg, some);
  CHECK(a.params == b.params);
  auto init6 = init_backbone(cfg, 6);
  init6.freeze();
  CHECK(!(a.params == init6.params));
  CHECK(backbone_perplexity(a, corpus) < backbone_perplexity(init_backbone(cfg, 6), corpus));

  CHECK_THROWS_WITH(pretrain_backbone({}, cfg, some), doctest::Contains("empty corpus"));
}

TEST_CASE("checkpoints round-trip bitwise") {
  auto cfg = tiny_config(2);
  auto bb = init_backbone(cfg, 81);
  bb.freeze();
  auto vocab = Vocabulary::synthetic(cfg.vocab_size);
  auto dir = std::filesystem::temp_directory_path() / "fewgen_test_model";
  std::filesystem::create_directories(dir);

  save_backbone((dir / "bb.ckpt").string(), bb, vocab);
  Vocabulary loaded_vocab;
  auto loaded = load_backbone((dir / "bb.ckpt").string(), &loaded_vocab);
  CHECK(loaded.config == cfg);
  CHECK(loaded.params == bb.params);
  CHECK(loaded.frozen());
  CHECK(loaded_vocab == vocab);

  auto bank = random_prefix_bank(cfg, 3, true, 82, 0.4);
  save_prefix_bank((dir / "bank.ckpt").string(), bank, Json{{"note", "x"}});
  Json extra;
  auto bank2 = load_prefix_bank((dir / "bank.ckpt").string(), &extra);
  CHECK(bank2.params == bank.params);
  CHECK(bank2.num_labels == 3);
  CHECK(bank2.has_infix);
  CHECK(extra["note"] == "x");

  {
    std::FILE* f = std::fopen((dir / "bank.ckpt").string().c_str(), "ab");
    std::fputc(0, f);
    std::fclose(f);
  }
  CHECK_THROWS(load_prefix_bank((dir / "bank.ckpt").string()));
  std::filesystem::remove_all(dir);
}
