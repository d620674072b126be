#include <cmath>
#include <random>

#include "doctest.h"
#include "fewgen/classifier.hpp"
#include "fewgen/optim.hpp"

using namespace fewgen;

namespace {

std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& x : p) s += (x = u(rng));
  for (auto& x : p) x /= s;
  return p;
}

double kl_divergence(const std::vector<double>& z, const std::vector<double>& p) {
  double kl = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) kl += z[i] * std::log(z[i] / p[i]);
  return kl;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 10;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.prefix_len = 2;
  c.max_len = 12;
  c.ffn_mult = 2;
  return c;
}

// Label 0 sequences contain token 4, label 1 sequences contain token 5.
Dataset toy_data(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<TokenId> filler(6, 9);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t label = i % 2;
    std::vector<TokenId> t{filler(rng), filler(rng), filler(rng)};
    t[rng() % 3] = label == 0 ? 4 : 5;
    d.push_back(make_single(t, label));
  }
  return d;
}

ClassifierConfig quick_config() {
  ClassifierConfig c;
  c.stage1_lrs = {3e-3};
  c.stage1_batches = {4};
  c.stage1_epochs = 3;
  c.steps = 12;
  c.period = 4;
  c.stage2_batch = 4;
  c.stage2_lr = 0.05;
  return c;
}

}  // namespace

TEST_CASE("smoothed_targets examples") {
  CHECK(smoothed_targets(2, 4, 0.0) == std::vector<double>{0, 0, 1, 0});
  auto q = smoothed_targets(1, 3, 0.15);
  CHECK(std::abs(q[0] - 0.05) < 1e-15);
  CHECK(std::abs(q[1] - 0.90) < 1e-15);
  CHECK(std::abs(q[2] - 0.05) < 1e-15);
  for (std::size_t L = 2; L <= 6; ++L)
    for (double eps : {0.0, 0.1, 0.15, 0.5, 0.9}) {
      auto t = smoothed_targets(L - 1, L, eps);
      double s = 0.0;
      for (double v : t) s += v;
      CHECK(std::abs(s - 1.0) <= 2e-16);
      if (eps < static_cast<double>(L - 1) / L)
        CHECK(std::max_element(t.begin(), t.end()) - t.begin() == static_cast<long>(L - 1));
    }
  CHECK_THROWS(smoothed_targets(3, 3, 0.1));
  CHECK_THROWS(smoothed_targets(0, 3, 1.0));
}

TEST_CASE("class_loss examples") {
  std::vector<double> p{0.2, 0.5, 0.3}, q{0.05, 0.9, 0.05};
  auto same = class_loss(p, q, p, 20.0);
  CHECK(std::abs(same.regularizer) < 1e-15);
  double ce = -(0.05 * std::log(0.2) + 0.9 * std::log(0.5) + 0.05 * std::log(0.3));
  CHECK(std::abs(same.value - ce) < 1e-15);

  for (std::size_t L : {2u, 3u, 5u}) {
    std::vector<double> u(L, 1.0 / L);
    CHECK(std::abs(class_loss(u, u, u, 7.0).value - std::log(static_cast<double>(L))) < 1e-14);
  }

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto pp = random_distribution(rng, 2 + trial % 4);
    auto zz = random_distribution(rng, pp.size());
    auto qq = random_distribution(rng, pp.size());
    double lambda = 0.5 * trial;
    auto r = class_loss(pp, qq, zz, lambda);
    CHECK(std::abs(r.regularizer - lambda * kl_divergence(zz, pp)) <= 1e-12 * std::max(1.0, lambda));
    CHECK(r.regularizer >= 0.0);
  }

  auto floored = class_loss(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5},
                            std::vector<double>{0.5, 0.5}, 1.0);
  CHECK(floored.floored);
  CHECK(std::isfinite(floored.value));
}

TEST_CASE("class loss gradient matches finite differences") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.5);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t L = 2 + trial % 3;
    std::vector<double> logits(L);
    for (auto& x : logits) x = n(rng);
    ParameterSet ps;
    ps.add("logits", Tensor::row(logits));
    auto q = smoothed_targets(trial % L, L, 0.15);
    auto z = random_distribution(rng, L);
    auto build = [&](Tape& t, const ParameterSet& p) { return class_loss_var(t.parameter(p, "logits"), q, z, 20.0); };
    Tape tape;
    auto g = backward_gradients(build(tape, ps), ps).flatten();
    auto fd = finite_difference_oracle(
        [&](const ParameterSet& p) {
          Tape t;
          return build(t, p).value().item();
        },
        ps, 1e-5);
    CHECK(relative_error(g, fd.flatten()) <= 1e-5);
    auto probs = softmax_stable(logits);
    CHECK(std::abs(build(tape, ps).value().item() - class_loss(probs, q, z, 20.0).value) < 1e-12);
  }
}

TEST_CASE("temporal ensemble identities") {
  std::vector<double> p{0.7, 0.3};
  auto s1 = update_ensemble({}, p, 0.9);
  CHECK(s1.updates == 1);
  CHECK(std::abs(s1.raw[0] - 0.07) < 1e-15);
  CHECK(std::abs(s1.raw[1] - 0.03) < 1e-15);
  CHECK(std::abs(s1.averaged[0] - 0.7) < 1e-15);
  CHECK(std::abs(s1.averaged[1] - 0.3) < 1e-15);

  std::mt19937_64 rng(3);
  auto constant = random_distribution(rng, 3);
  EnsembleState s;
  for (int t = 1; t <= 100; ++t) {
    s = update_ensemble(s, constant, 0.9);
    for (std::size_t l = 0; l < 3; ++l) CHECK(std::abs(s.averaged[l] - constant[l]) <= 1e-12);
  }

  EnsembleState alt;
  std::vector<std::vector<double>> seen;
  const double g = 0.9;
  for (int t = 1; t <= 10; ++t) {
    std::vector<double> pt = t % 2 ? std::vector<double>{1.0, 0.0} : std::vector<double>{0.0, 1.0};
    seen.push_back(pt);
    alt = update_ensemble(alt, pt, g);
    for (std::size_t l = 0; l < 2; ++l) {
      double direct = 0.0;
      for (int k = 1; k <= t; ++k) direct += std::pow(g, t - k) * (1 - g) * seen[k - 1][l];
      direct /= 1 - std::pow(g, t);
      CHECK(std::abs(alt.averaged[l] - direct) <= 1e-12);
    }
    double sum = alt.averaged[0] + alt.averaged[1];
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
  CHECK_THROWS(update_ensemble({}, p, 1.0));
}

TEST_CASE("filter_retained examples") {
  Dataset d{make_single({4}, 0), make_single({5}, 1), make_single({6}, 0)};
  std::vector<EnsembleState> states(3);
  states[0].updates = 1;
  states[0].averaged = {0.85, 0.15};
  states[1].updates = 1;
  states[1].averaged = {0.2, 0.8};
  CHECK(filter_retained(d, states, 0.8) == std::vector<std::size_t>{0, 2});
  CHECK(filter_retained(d, std::vector<EnsembleState>(3), 0.8) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS(filter_retained(d, {}, 0.8));
}

TEST_CASE("classification metrics") {
  std::vector<std::size_t> truth{0, 1, 0, 1, 2, 2};
  auto perfect = classification_metrics(truth, truth, 3);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  CHECK(std::abs(perfect.mcc - 1.0) < 1e-15);

  std::vector<std::size_t> balanced(10000), random_pred(10000), ones(10000, 1);
  std::mt19937_64 rng(4);
  for (std::size_t i = 0; i < balanced.size(); ++i) {
    balanced[i] = i % 2;
    random_pred[i] = rng() % 2;
  }
  auto r = classification_metrics(balanced, random_pred, 2);
  CHECK(std::abs(r.accuracy - 0.5) <= 0.05);
  CHECK(std::abs(r.mcc) <= 0.05);

  auto one = classification_metrics(balanced, ones, 2);
  CHECK(one.accuracy == 0.5);
  CHECK(one.mcc == 0.0);
  CHECK_FALSE(one.mcc_defined);

  // 2x2 case against the binary formula.
  std::vector<std::size_t> t{1, 1, 1, 0, 0, 0, 0}, p{1, 0, 1, 0, 0, 1, 0};
  auto m = classification_metrics(t, p, 2);
  double tp = 2, tn = 3, fp = 1, fn = 1;
  double mcc = (tp * tn - fp * fn) / std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  CHECK(std::abs(m.mcc - mcc) < 1e-15);
  CHECK(std::abs(m.macro_f1 - 0.5 * (2 * tp / (2 * tp + fp + fn) + 2 * tn / (2 * tn + fn + fp))) < 1e-15);
}

TEST_CASE("classifier training") {
  auto cfg = tiny_config();
  auto bb = init_backbone(cfg, 1);
  bb.freeze();
  std::mt19937_64 rng(5);
  auto train = toy_data(rng, 8), dev = toy_data(rng, 8), gen = toy_data(rng, 24);

  SUBCASE("no stage-2 steps keeps the stage-1 model") {
    auto c = quick_config();
    c.steps = 0;
    auto r = train_classifier(bb, train, dev, gen, 2, c, 7);
    CHECK(r.params.params == r.stage1.params.params);
    CHECK(r.history.empty());
    CHECK(!(r.params.params == init_classifier(bb, 2, 7).params));
    CHECK(r.stage1.lr == 3e-3);
  }

  SUBCASE("default regularization settings run and filter strictly") {
    auto c = quick_config();
    c.steps = 40;
    c.period = 10;
    auto r = train_classifier(bb, train, dev, gen, 2, c, 8);
    REQUIRE(r.history.size() == 40);
    for (const auto& h : r.history)
      if (h.trained) CHECK(std::isfinite(h.loss));
    for (auto i : r.retained) CHECK(r.ensemble[i].averaged[gen[i].label] > 0.8);
    for (std::size_t i = 0; i < gen.size(); ++i) {
      CHECK(r.ensemble[i].updates == 4);
      bool kept = std::find(r.retained.begin(), r.retained.end(), i) != r.retained.end();
      CHECK(kept == (r.ensemble[i].averaged[gen[i].label] > 0.8));
    }
  }

  SUBCASE("no regularization, filtering or smoothing is plain cross-entropy") {
    auto c = quick_config();
    c.reg_weight = 0.0;
    c.threshold = 0.0;
    c.smoothing = 0.0;
    auto stage1 = train_stage1(bb, train, dev, 2, c, 9);
    auto r = train_stage2(stage1, gen, c, 10);

    auto clf = stage1.params;
    std::mt19937_64 batch_rng(10);
    std::uniform_int_distribution<std::size_t> pick(0, gen.size() - 1);
    for (std::size_t step = 0; step < c.steps; ++step) {
      Tape tape;
      Var total = tape.constant(Tensor::zeros({1, 1}));
      for (std::size_t b = 0; b < c.stage2_batch; ++b) {
        const auto& s = gen[pick(batch_rng)];
        auto logp = ad::log_softmax_rows(classifier_logits(tape, clf, s));
        total = ad::sub(total, ad::pick(logp, std::vector<std::size_t>{0}, std::vector<std::size_t>{s.label}));
      }
      Var loss = ad::scale(total, 1.0 / c.stage2_batch);
      CHECK(std::abs(loss.value().item() - r.history[step].loss) < 1e-12);
      sgd_step(clf.params, backward_gradients(loss, clf.params), c.stage2_lr);
      CHECK(r.history[step].retained == gen.size());
    }
  }

  SUBCASE("errors") {
    auto c = quick_config();
    CHECK_THROWS_WITH(train_classifier(bb, train, dev, {}, 2, c, 1), doctest::Contains("empty generated"));
    CHECK_THROWS(train_classifier(bb, {}, dev, gen, 2, c, 1));
    c.momentum = 1.0;
    CHECK_THROWS(train_classifier(bb, train, dev, gen, 2, c, 1));
  }
}
