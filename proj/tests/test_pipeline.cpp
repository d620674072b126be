#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fewgen/gradcheck.hpp"
#include "fewgen/io.hpp"
#include "fewgen/losses.hpp"
#include "fewgen/pipeline.hpp"

using namespace fewgen;

namespace {

// Seconds-scale experiment: every stage runs, nothing is meant to learn much.
ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.model = ModelConfig{.vocab_size = 64, .d_model = 8, .layers = 1, .heads = 2, .prefix_len = 2, .max_len = 16,
                        .ffn_mult = 2};
  c.pretrain.steps = 30;
  c.pretrain.batch_size = 8;
  c.corpus_size = 200;
  c.shots = 4;
  c.dev_per_label = 4;
  c.test_per_label = 10;
  c.tuning.epochs = 1;
  c.generation[0].samples_per_label = 10;
  c.generation[0].max_new_tokens = 12;
  c.classifier.steps = 10;
  c.classifier.period = 5;
  c.classifier.stage1_epochs = 2;
  c.seeds = {1, 2};
  return c;
}

double tape_mean_gen_loss(const BackboneParams& bb, const PrefixBank& bank, const Dataset& data) {
  double total = 0.0;
  for (const auto& s : data) {
    auto seq = with_eos(s);
    Tape tape;
    auto bound = bind_backbone(tape, bb);
    auto rows = label_logprob_rows(bound, bind_all_prefixes(tape, bank), seq);
    total += gen_loss_var(rows[seq.label], included_positions(seq)).value().item();
  }
  return total / static_cast<double>(data.size());
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("fewgen-test-" + name)).string();
}

}  // namespace

TEST_CASE("synthetic task splits") {
  Grammar g{SyntheticTaskSpec{}};
  auto task = make_synthetic_task(g, 16, 16, 50, 100, 9);
  CHECK(task.train.size() == 32);
  CHECK(task.dev.size() == 32);
  CHECK(task.test.size() == 100);
  CHECK(task.corpus.size() == 100);

  std::set<std::string> ids;
  for (const auto* split : {&task.corpus, &task.train, &task.dev, &task.test})
    for (const auto& s : *split) ids.insert(s.id);
  CHECK(ids.size() == 100 + 32 + 32 + 100);

  for (std::size_t l = 0; l < 2; ++l)
    CHECK(std::count_if(task.train.begin(), task.train.end(), [&](const auto& s) { return s.label == l; }) == 16);
  CHECK_THROWS(make_synthetic_task(g, 0, 0, 10, 0, 1));
}

TEST_CASE("oracle on ground-truth data reaches the Bayes bound") {
  SyntheticTaskSpec spec;
  Grammar g{spec};
  // rho = 0.15, lengths uniform on 6..12: 1 - mean((0.85)^n) / 2
  double none = 0.0;
  for (int n = 6; n <= 12; ++n) none += std::pow(0.85, n);
  double bayes = 1.0 - none / 7.0 * 0.5;
  CHECK(std::abs(g.bayes_accuracy() - bayes) < 1e-15);
  CHECK(std::abs(bayes - 0.877979) < 1e-6);

  auto task = make_synthetic_task(g, 1, 1, 2000, 0, 5);
  double acc = oracle_label_accuracy(task.test, g);
  // 4000 draws: standard error about 0.005
  CHECK(acc >= bayes - 0.02);

  // a sequence without discriminative tokens is a tie, and ties go to label 0
  for (const auto& s : task.test) {
    bool plain = std::none_of(s.tokens.begin(), s.tokens.end(), [&](TokenId t) {
      auto has = [&](std::size_t l) { return std::ranges::count(g.disc_set(l), t) != 0; };
      return has(0) || has(1);
    });
    if (plain) CHECK(g.oracle_label(s) == 0);
    else CHECK(g.oracle_label(s) == s.label);
  }
}

TEST_CASE("zero insertion makes labels indistinguishable") {
  SyntheticTaskSpec spec;
  spec.insertion_prob = {0.0};
  Grammar g{spec};
  auto task = make_synthetic_task(g, 1, 1, 100, 0, 2);
  CHECK(oracle_label_accuracy(task.test, g) == 0.5);
  CHECK(g.bayes_accuracy() == doctest::Approx(0.5));

  spec.num_labels = 3;
  Grammar g3{spec};
  auto t3 = make_synthetic_task(g3, 1, 1, 30, 0, 2);
  CHECK(std::abs(oracle_label_accuracy(t3.test, g3) - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("oracle_label_accuracy examples") {
  SyntheticTaskSpec spec;
  spec.insertion_prob = {1.0};  // every token is discriminative: separable
  Grammar g{spec};
  auto task = make_synthetic_task(g, 1, 1, 50, 0, 3);
  CHECK(oracle_label_accuracy(task.test, g) == 1.0);

  auto swapped = task.test;
  for (auto& s : swapped) s.label = 1 - s.label;
  CHECK(oracle_label_accuracy(swapped, g) == 0.0);

  CHECK(oracle_label_accuracy({task.test[0]}, g) == 1.0);
  CHECK_THROWS(oracle_label_accuracy({}, g));
}

TEST_CASE("dataset files") {
  auto vocab = Vocabulary::synthetic(64);
  SyntheticTaskSpec spec;
  spec.pair = true;
  auto pairs = make_synthetic_task(Grammar{spec}, 3, 3, 3, 0, 4).train;
  auto singles = make_synthetic_task(Grammar{SyntheticTaskSpec{}}, 3, 3, 3, 0, 4).train;

  for (const auto* data : {&singles, &pairs}) {
    auto text = format_dataset(*data, vocab);
    auto back = parse_dataset(text, vocab, 2, 64);
    CHECK(back == *data);
    CHECK(format_dataset(back, vocab) == text);

    auto path = temp_path("roundtrip.jsonl");
    write_dataset(path, *data, vocab);
    CHECK(read_file(path) == text);
    CHECK(load_dataset(path, vocab, 2, 64) == *data);
    std::filesystem::remove(path);
  }

  CHECK(parse_dataset("", vocab, 2, 64).empty());
  CHECK(parse_dataset("\n\n", vocab, 2, 64).empty());

  std::string good = R"({"text": ["w4", "w5"], "label": 1})";
  CHECK(parse_dataset(good, vocab, 2, 64).size() == 1);
  CHECK_THROWS_WITH(parse_dataset(good + "\n" + R"({"text": ["w4"], "label": 2})", vocab, 2, 64),
                    doctest::Contains("line 2"));
  CHECK_THROWS_WITH(parse_dataset(R"({"text": ["nope"], "label": 0})", vocab, 2, 64), doctest::Contains("line 1"));
  CHECK_THROWS_WITH(parse_dataset("{\"text\": [\"w4\"]\n", vocab, 2, 64), doctest::Contains("line 1"));
  CHECK_THROWS_WITH(parse_dataset(R"({"text": ["w4"]})", vocab, 2, 64), doctest::Contains("line 1"));
  CHECK_THROWS(load_dataset(temp_path("missing.jsonl"), vocab, 2, 64));

  auto path = temp_path("empty.jsonl");
  write_file(path, "");
  CHECK(load_dataset(path, vocab, 2, 64).empty());
  std::filesystem::remove(path);
}

TEST_CASE("perplexity") {
  ModelConfig cfg{.vocab_size = 64, .d_model = 8, .layers = 1, .heads = 2, .prefix_len = 2, .max_len = 16,
                  .ffn_mult = 2};
  auto task = make_synthetic_task(Grammar{SyntheticTaskSpec{}}, 1, 1, 5, 0, 6);

  SUBCASE("all-zero parameters give the uniform distribution") {
    auto bb = init_backbone(cfg, 1);
    bb.params.assign_flat(std::vector<double>(bb.params.flat_size(), 0.0));
    auto bank = random_prefix_bank(cfg, 2, false, 1, 0.0);
    CHECK(std::abs(perplexity(bb, bank, 0, task.test) - 64.0) < 1e-9);
    CHECK(std::abs(dataset_perplexity(bb, bank, task.test) - 64.0) < 1e-9);
  }

  SUBCASE("exp of the mean generative loss") {
    auto bb = init_backbone(cfg, 2);
    auto bank = random_prefix_bank(cfg, 2, false, 3, 0.5);
    double want = std::exp(tape_mean_gen_loss(bb, bank, task.test));
    CHECK(std::abs(dataset_perplexity(bb, bank, task.test) - want) <= 1e-12 * want);

    Dataset relabeled = task.test;
    for (auto& s : relabeled) s.label = 1;
    double p1 = std::exp(tape_mean_gen_loss(bb, bank, relabeled));
    CHECK(std::abs(perplexity(bb, bank, 1, task.test) - p1) <= 1e-12 * p1);
  }

  CHECK_THROWS(perplexity(init_backbone(cfg, 1), random_prefix_bank(cfg, 2, false, 1, 0.1), 0, {}));
}

TEST_CASE("unigram perplexity") {
  // w4 w4 w5 <eos> over 6 ids with add-one: counts 3, 2, 2 out of 10
  Dataset d{make_single({4, 4, 5}, 0)};
  double nll = -(2 * std::log(3.0 / 10) + std::log(2.0 / 10) + std::log(2.0 / 10)) / 4.0;
  CHECK(std::abs(unigram_perplexity(d, 6) - std::exp(nll)) < 1e-12);
}

TEST_CASE("pretraining beats the unigram baseline") {
  SyntheticTaskSpec spec;
  Grammar g{spec};
  ModelConfig cfg{.d_model = 32};
  PretrainOptions opt;
  opt.steps = 300;
  auto corpus = pretraining_corpus(g, 1000, spec.seed);
  auto heldout = pretraining_corpus(g, 200, spec.seed + 1);
  auto bb = pretrain_backbone(corpus, cfg, opt);
  double model = backbone_perplexity(bb, heldout);
  double unigram = unigram_perplexity(corpus, cfg.vocab_size);
  MESSAGE("held-out perplexity " << model << ", unigram " << unigram);
  CHECK(model < unigram);
  CHECK(pretraining_corpus(g, 50, 3) == pretraining_corpus(g, 50, 3));
}

TEST_CASE("experiment config") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  Json j = to_json(c);
  CHECK(to_json(experiment_config_from_json(j)) == j);
  CHECK(to_json(experiment_config_from_json(Json::object())) == j);

  auto with = [&](const char* patch) {
    Json k = j;
    k.merge_patch(Json::parse(patch));
    return k;
  };
  auto edited = experiment_config_from_json(with(R"({"shots": 8, "dev_per_label": 8, "tuning": {"mu": 0.5}})"));
  CHECK(edited.shots == 8);
  CHECK(edited.tuning.mu == 0.5);
  CHECK(edited.tuning.epochs == c.tuning.epochs);

  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"colour": 1})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"tuning": {"lr": 1}})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"shots": "many"})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"objectives": ["w-gen", "disc"]})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"dev_per_label": 4})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"shots": 0, "dev_per_label": 0})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"seeds": [1, 1]})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"model": {"vocab_size": 80}})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"model": {"max_len": 12}})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"classifier": {"threshold": 1.0}})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(with(R"({"task": {"pair": true}})")), ConfigError);
  CHECK_THROWS_AS(load_experiment_config(temp_path("no-such-config.json")), ConfigError);
}

TEST_CASE("summarize uses the population deviation") {
  auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(std::abs(s.stddev - std::sqrt(1.25)) < 1e-15);
  CHECK(summarize({0.7}).stddev == 0.0);
}

TEST_CASE("run_pipeline report") {
  auto cfg = tiny_experiment();
  auto report = run_pipeline(cfg);
  CHECK(report.runs.size() == 3);
  REQUIRE(report.find(Objective::WeightedGen) != nullptr);
  REQUIRE(report.find(Objective::Gen) != nullptr);
  CHECK(report.backbone_perplexity > 0.0);

  Json j = report_json(report);
  CHECK(j["version"] == FEWGEN_VERSION);
  CHECK(j["config"] == to_json(cfg));
  for (const auto& run : j["runs"]) {
    REQUIRE(run["seeds"].size() == 2);
    CHECK(run["aggregate"]["succeeded"] == 2);
    auto agree = [&](const char* key, auto get) {
      std::vector<double> v;
      for (const auto& s : run["seeds"]) v.push_back(get(s));
      double mean = (v[0] + v[1]) / 2.0;
      double sd = std::abs(v[0] - v[1]) / 2.0;
      CHECK(std::abs(run["aggregate"][key]["mean"].get<double>() - mean) < 1e-15);
      CHECK(std::abs(run["aggregate"][key]["stddev"].get<double>() - sd) < 1e-15);
    };
    agree("test_accuracy", [](const Json& s) { return s["test"]["accuracy"].get<double>(); });
    agree("test_mcc", [](const Json& s) { return s["test"]["mcc"].get<double>(); });
    agree("generated_accuracy", [](const Json& s) { return s["generated_accuracy"].get<double>(); });
    agree("perplexity", [](const Json& s) { return s["perplexity"].get<double>(); });
  }

  auto csv = losses_csv(report);
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header == "objective,seed,step,epoch,weighted_gen,gen,disc");
  // one epoch of batch 2 over 8 samples, 3 objectives, 2 seeds
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 2 * 4);

  auto weights = weights_json(report, Vocabulary::synthetic(64));
  CHECK(weights.size() == 3 * 2 * 8);
  for (const auto& w : weights) CHECK(w["tokens"].size() == w["weights"].size());

  auto again = run_pipeline(cfg);
  CHECK(report_json(again).dump() == j.dump());
  CHECK(losses_csv(again) == csv);
}

TEST_CASE("gradcheck harness") {
  GradcheckOptions o;
  o.loss_instances = 3;
  o.meta_instances = 2;
  auto ok = run_gradcheck_suites(o, {"gen", "meta"});
  REQUIRE(ok.size() == 2);
  for (const auto& r : ok) CHECK(r.pass);

  o.tol = 1e-2;
  std::ostringstream out;
  CHECK(print_gradcheck(out, run_gradcheck_suites(o, {"disc"}), o));
  CHECK(out.str().find("tolerance override: 0.01") != std::string::npos);
  CHECK(out.str().find("(tol 0.01)") != std::string::npos);

  GradcheckOptions flipped;
  flipped.meta_instances = 2;
  flipped.disc_grad_scale = -1.0;
  auto bad = run_gradcheck_suites(flipped, {"meta"});
  CHECK_FALSE(bad[0].pass);
  std::ostringstream out2;
  CHECK_FALSE(print_gradcheck(out2, bad, flipped));
  CHECK(out2.str().find("FAILED") != std::string::npos);

  CHECK_THROWS(run_gradcheck_suites(o, {"nope"}));
}
