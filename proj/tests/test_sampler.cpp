#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fewgen/sampler.hpp"

using namespace fewgen;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 20;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.prefix_len = 2;
  c.max_len = 24;
  c.ffn_mult = 2;
  return c;
}

struct Fixture {
  ModelConfig cfg = small_config();
  BackboneParams bb;
  PrefixBank bank;

  Fixture() : bb(init_backbone(cfg, 1)), bank(random_prefix_bank(cfg, 2, true, 2, 1.0)) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.5);
    auto flat = bb.params.flatten();
    for (auto& v : flat) v += n(rng);
    bb.params.assign_flat(flat);
    bb.freeze();
  }
};

}  // namespace

TEST_CASE("penalized_distribution examples") {
  std::vector<double> z{1.0, 1.0};
  auto p = penalized_distribution(z, {0}, 1.0, 2.0);
  double e5 = std::exp(0.5), e1 = std::exp(1.0);
  CHECK(std::abs(p[0] - e5 / (e5 + e1)) < 1e-15);
  CHECK(std::abs(p[1] - e1 / (e5 + e1)) < 1e-15);
  CHECK(std::abs(p[0] - 0.3775) < 1e-4);
  CHECK(std::abs(p[1] - 0.6225) < 1e-4);

  CHECK_THROWS_WITH(penalized_distribution(z, {}, 0.0, 1.0), doctest::Contains("greedy handled by caller"));
  CHECK_THROWS(penalized_distribution(z, {}, 1.0, 0.5));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> logits(12);
    for (auto& v : logits) v = n(rng);
    std::set<TokenId> rep{1, 4, 7};
    double tau = 0.2 + 0.3 * trial;
    auto plain = penalized_distribution(logits, rep, tau, 1.0);
    std::vector<double> scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / tau;
    auto reference = softmax_stable(scaled);
    for (std::size_t i = 0; i < logits.size(); ++i) CHECK(std::abs(plain[i] - reference[i]) <= 1e-12);

    auto pen = penalized_distribution(logits, rep, tau, 1.7);
    double s = 0.0;
    for (double v : pen) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }

  // A repeated positive logit loses mass; the other numerators are unchanged.
  std::vector<double> pos{2.0, 0.5, -1.0};
  auto base = penalized_distribution(pos, {}, 1.0, 1.0);
  auto pen = penalized_distribution(pos, {0}, 1.0, 1.5);
  CHECK(pen[0] < base[0]);
  CHECK(std::abs(pen[1] / pen[2] - base[1] / base[2]) < 1e-12);
}

TEST_CASE("candidate tokens mask reserved ids and keep the top k") {
  std::vector<double> z{9, 8, 7, 6, 0.5, 3, 2, 1};
  auto all = candidate_tokens(z, 0, true);
  CHECK(all == std::vector<TokenId>{1, 5, 6, 7, 4});
  CHECK(candidate_tokens(z, 2, false) == std::vector<TokenId>{5, 6});
}

TEST_CASE("greedy sampling is deterministic and seed invariant") {
  Fixture f;
  GenerationConfig g;
  g.temperature = 0.0;
  g.repetition_penalty = 1.5;
  auto r1 = sample_rng(1, 0, 0);
  auto r2 = sample_rng(99, 1, 7);
  auto a = sample_sequence(f.bb, f.bank, 0, g, r1);
  auto b = sample_sequence(f.bb, f.bank, 0, g, r2);
  CHECK(a.tokens == b.tokens);
  CHECK(!a.tokens.empty());

  GenerationConfig top1;
  top1.top_k = 1;
  top1.temperature = 0.7;
  GenerationConfig greedy;
  greedy.temperature = 0.0;
  for (std::size_t label : {0u, 1u}) {
    auto ra = sample_rng(5, label, 0), rb = sample_rng(6, label, 0);
    CHECK(sample_sequence(f.bb, f.bank, label, top1, ra).tokens ==
          sample_sequence(f.bb, f.bank, label, greedy, rb).tokens);
  }
}

TEST_CASE("top-k sampling only emits top-k tokens") {
  Fixture f;
  GenerationConfig g;
  g.top_k = 10;
  g.temperature = 0.5;
  g.repetition_penalty = 1.5;
  g.max_new_tokens = 10;
  for (std::size_t i = 0; i < 20; ++i) {
    auto rng = sample_rng(11, i % 2, i);
    auto seq = sample_sequence(f.bb, f.bank, i % 2, g, rng);
    for (std::size_t j = 0; j < seq.tokens.size(); ++j) {
      std::vector<TokenId> ctx(seq.tokens.begin(), seq.tokens.begin() + j);
      auto logits = next_token_logits(f.bb, f.bank, i % 2, ctx);
      auto allowed = candidate_tokens(logits, 10, j > 0);
      CHECK(std::find(allowed.begin(), allowed.end(), seq.tokens[j]) != allowed.end());
    }
    CHECK(seq.tokens.size() <= 10);
    CHECK(std::count(seq.tokens.begin(), seq.tokens.end(), Vocabulary::kPad) == 0);
  }
}

TEST_CASE("start policies") {
  Fixture f;
  GenerationConfig g;
  g.start = StartPolicy::FixedList;
  g.start_tokens = {7, 8};
  auto rng = sample_rng(1, 0, 0);
  auto seq = sample_sequence(f.bb, f.bank, 0, g, rng);
  REQUIRE(seq.tokens.size() >= 2);
  CHECK(seq.tokens[0] == 7);
  CHECK(seq.tokens[1] == 8);

  g.start = StartPolicy::RandomWord;
  g.start_tokens = {9, 10, 11};
  for (std::size_t i = 0; i < 10; ++i) {
    auto r = sample_rng(2, 0, i);
    auto s = sample_sequence(f.bb, f.bank, 0, g, r);
    CHECK(s.tokens[0] >= 9);
    CHECK(s.tokens[0] <= 11);
  }

  g.start = StartPolicy::CorpusDraw;
  CHECK_THROWS(g.validate(20));
}

TEST_CASE("pair mode") {
  Fixture f;
  GenerationConfig g;
  g.mode = GenerationMode::Pair;
  g.start = StartPolicy::CorpusDraw;
  g.temperature = 0.0;
  std::vector<TokenId> first{4, 5, 6};
  auto rng = sample_rng(1, 1, 0);
  auto seq = sample_sequence(f.bb, f.bank, 1, g, rng, &first);
  CHECK(seq.pair);
  CHECK(seq.first() == first);
  CHECK(std::count(seq.tokens.begin(), seq.tokens.end(), Vocabulary::kSep) == 1);
  CHECK(!seq.second().empty());
  validate(seq, f.cfg.vocab_size, 2, f.cfg.max_len);

  std::vector<TokenId> too_long(f.cfg.max_len, 4);
  CHECK_THROWS_WITH(sample_sequence(f.bb, f.bank, 1, g, rng, &too_long), doctest::Contains("too long"));
  CHECK_THROWS(sample_sequence(f.bb, f.bank, 1, g, rng));
  CHECK_THROWS_WITH(synthesize_dataset(f.bb, f.bank, {g}, {}, 1), doctest::Contains("corpus"));
}

TEST_CASE("synthesize_dataset") {
  Fixture f;
  GenerationConfig g;
  g.samples_per_label = 1;
  auto one = synthesize_dataset(f.bb, f.bank, {g}, {}, 3);
  REQUIRE(one.size() == 2);
  CHECK(one[0].label == 0);
  CHECK(one[1].label == 1);
  CHECK(one[0].source == "generated");

  g.samples_per_label = 6;
  GenerationConfig h = g;
  h.repetition_penalty = 1.0;
  auto a = synthesize_dataset(f.bb, f.bank, {g, h}, {}, 4);
  auto b = synthesize_dataset(f.bb, f.bank, {g, h}, {}, 4);
  CHECK(a.size() == 12);
  CHECK(a == b);
  CHECK(std::count_if(a.begin(), a.end(), [](const auto& s) { return s.label == 1; }) == 6);
  for (const auto& s : a) validate(s, f.cfg.vocab_size, 2, f.cfg.max_len);

  // Each sample owns its stream, so a larger run extends a smaller one.
  g.samples_per_label = 3;
  h.samples_per_label = 3;
  auto c = synthesize_dataset(f.bb, f.bank, {g, h}, {}, 4);
  CHECK(c[0] == a[0]);
  CHECK(c[2] == a[2]);
  CHECK(c[3] == a[6]);

  CHECK_THROWS(synthesize_dataset(f.bb, f.bank, {g, h, g}, {}, 1));
}

TEST_CASE("temperature range") {
  GenerationConfig g;
  for (double tau : {0.0, 0.5, 10.0}) {
    g.temperature = tau;
    CHECK_NOTHROW(g.validate(20));
  }
  for (double tau : {-0.1, 10.5, std::nan("")}) {
    g.temperature = tau;
    CHECK_THROWS(g.validate(20));
  }
}
