#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "fewgen/gradcheck.hpp"
#include "fewgen/io.hpp"
#include "fewgen/pipeline.hpp"

using namespace fewgen;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kStageFailure = 1, kConfigError = 2 };

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string objective;
  std::string out = "out";
  std::optional<double> tol;
  double disc_grad_scale = 1.0;
};

// Everything a subcommand needs: the experiment config plus file locations
// inside the working directory.
class Workspace {
 public:
  explicit Workspace(const Flags& f) : dir_(f.out) {
    if (!f.config.empty()) cfg = load_experiment_config(f.config);
    if (!f.objective.empty()) {
      try {
        objective = parse_objective(f.objective);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    }
    seed = f.seed.value_or(cfg.seeds.front());
    cfg.validate();
    vocab = Vocabulary::synthetic(cfg.model.vocab_size);
    fs::create_directories(dir_);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  bool has(const std::string& name) const { return fs::exists(dir_ / name); }

  Grammar grammar() const { return Grammar(cfg.task); }

  Dataset load(const std::string& name) const {
    return load_dataset(path(name), vocab, cfg.task.num_labels, cfg.model.max_len);
  }

  /// Splits from synth-task when present, otherwise drawn from the seed.
  SyntheticTask task() const {
    if (has("train.jsonl") && has("dev.jsonl") && has("test.jsonl")) {
      SyntheticTask t;
      t.vocab = vocab;
      t.train = load("train.jsonl");
      t.dev = load("dev.jsonl");
      t.test = load("test.jsonl");
      return t;
    }
    return make_synthetic_task(grammar(), cfg.shots, cfg.dev_per_label, cfg.test_per_label, 0, seed);
  }

  BackboneParams backbone() const {
    std::string p = has("backbone.ckpt") ? path("backbone.ckpt") : cfg.backbone_path;
    if (p.empty()) throw Error("no backbone: run pretrain first or set backbone_path");
    auto bb = load_backbone(p);
    if (!(bb.config == cfg.model)) throw ConfigError(p + ": model config differs from the experiment");
    return bb;
  }

  std::vector<std::vector<TokenId>> first_pool() const {
    std::vector<std::vector<TokenId>> pool;
    if (!cfg.task.pair) return pool;
    Dataset corpus = has("corpus.jsonl") ? load("corpus.jsonl") : pretraining_corpus(grammar(), cfg.corpus_size, cfg.task.seed);
    for (const auto& s : corpus) pool.push_back(s.first());
    return pool;
  }

  void write_json(const std::string& name, const Json& j) const { write_file(path(name), j.dump(2) + "\n"); }

  ExperimentConfig cfg;
  std::optional<Objective> objective;
  std::uint64_t seed = 0;
  Vocabulary vocab;

 private:
  fs::path dir_;
};

Json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"mcc", m.mcc}, {"mcc_defined", m.mcc_defined}};
}

int synth_task(const Flags& f) {
  Workspace ws(f);
  auto grammar = ws.grammar();
  auto task = make_synthetic_task(grammar, ws.cfg.shots, ws.cfg.dev_per_label, ws.cfg.test_per_label, 0, ws.seed);
  task.corpus = pretraining_corpus(grammar, ws.cfg.corpus_size, ws.cfg.task.seed);
  write_dataset(ws.path("corpus.jsonl"), task.corpus, ws.vocab);
  write_dataset(ws.path("train.jsonl"), task.train, ws.vocab);
  write_dataset(ws.path("dev.jsonl"), task.dev, ws.vocab);
  write_dataset(ws.path("test.jsonl"), task.test, ws.vocab);
  Json info = {{"seed", ws.seed},
               {"corpus", task.corpus.size()},
               {"train", task.train.size()},
               {"dev", task.dev.size()},
               {"test", task.test.size()},
               {"oracle_test_accuracy", oracle_label_accuracy(task.test, grammar)}};
  if (!ws.cfg.task.pair && ws.cfg.task.insertion_prob.size() == 1) info["bayes_accuracy"] = grammar.bayes_accuracy();
  ws.write_json("task.json", info);
  std::cout << info.dump() << "\n";
  return kOk;
}

int pretrain(const Flags& f) {
  Workspace ws(f);
  auto grammar = ws.grammar();
  Dataset corpus = ws.has("corpus.jsonl") ? ws.load("corpus.jsonl")
                                          : pretraining_corpus(grammar, ws.cfg.corpus_size, ws.cfg.task.seed);
  auto bb = pretrain_backbone(corpus, ws.cfg.model, ws.cfg.pretrain);
  save_backbone(ws.path("backbone.ckpt"), bb, ws.vocab);
  auto heldout = pretraining_corpus(grammar, 400, ws.cfg.task.seed ^ 0x9e3779b97f4a7c15ULL);
  Json info = {{"heldout_perplexity", backbone_perplexity(bb, heldout)},
               {"unigram_perplexity", unigram_perplexity(corpus, ws.cfg.model.vocab_size)}};
  ws.write_json("pretrain.json", info);
  std::cout << info.dump() << "\n";
  return kOk;
}

int tune_gen(const Flags& f) {
  Workspace ws(f);
  auto bb = ws.backbone();
  auto task = ws.task();
  auto tuning = ws.cfg.tuning;
  tuning.objective = ws.objective.value_or(ws.cfg.objectives.front());
  auto result = tune_generators(bb, initial_prefix_bank(bb, ws.grammar(), ws.seed), task.train, tuning, ws.seed);
  save_prefix_bank(ws.path("prefixes.ckpt"), result.bank, {{"objective", objective_name(tuning.objective)}});

  Report report;
  SeedRun run;
  run.seed = ws.seed;
  run.history = result.history;
  run.weights = dump_token_weights(bb, result.bank, result.net, task.train);
  ObjectiveRun objective_run;
  objective_run.objective = tuning.objective;
  objective_run.seeds = {run};
  objective_run.succeeded = 1;
  report.runs.push_back(objective_run);
  write_file(ws.path("losses.csv"), losses_csv(report));
  ws.write_json("weights.json", weights_json(report, ws.vocab));
  std::cout << Json{{"objective", objective_name(tuning.objective)},
                    {"initial_weighted_gen", result.epoch_mean(0, &LossRecord::weighted_gen)},
                    {"final_weighted_gen", result.epoch_mean(tuning.epochs - 1, &LossRecord::weighted_gen)}}
                   .dump()
            << "\n";
  return kOk;
}

int generate(const Flags& f) {
  Workspace ws(f);
  auto bb = ws.backbone();
  auto bank = load_prefix_bank(ws.path("prefixes.ckpt"));
  auto generated = synthesize_dataset(bb, bank, ws.cfg.generation, ws.first_pool(), ws.seed);
  write_dataset(ws.path("generated.jsonl"), generated, ws.vocab);
  auto task = ws.task();
  Json info = {{"generated", generated.size()},
               {"generated_accuracy", oracle_label_accuracy(generated, ws.grammar())},
               {"test_perplexity", dataset_perplexity(bb, bank, task.test)}};
  ws.write_json("generate.json", info);
  std::cout << info.dump() << "\n";
  return kOk;
}

int train_clf(const Flags& f) {
  Workspace ws(f);
  auto bb = ws.backbone();
  auto task = ws.task();
  auto generated = ws.load("generated.jsonl");
  auto result = train_classifier(bb, task.train, task.dev, generated, ws.cfg.task.num_labels, ws.cfg.classifier, ws.seed);
  save_classifier(ws.path("classifier.ckpt"), result.params);

  std::ofstream trace(ws.path("ensemble.csv"));
  trace << "sample_id,updates";
  for (std::size_t l = 0; l < ws.cfg.task.num_labels; ++l) trace << ",z" << l;
  trace << ",retained\n";
  std::vector<bool> kept(generated.size(), false);
  for (auto i : result.retained) kept[i] = true;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto& e = result.ensemble[i];
    trace << generated[i].id << ',' << e.updates;
    for (std::size_t l = 0; l < ws.cfg.task.num_labels; ++l) trace << ',' << (e.averaged.empty() ? 0.0 : e.averaged[l]);
    trace << ',' << (kept[i] ? 1 : 0) << '\n';
  }

  Json history = Json::array();
  for (const auto& h : result.history)
    history.push_back({{"step", h.step}, {"loss", h.loss}, {"retained", h.retained}, {"trained", h.trained}});
  Json info = {{"stage1", {{"lr", result.stage1.lr}, {"batch", result.stage1.batch}, {"dev_accuracy", result.stage1.dev_accuracy}}},
               {"stage1_test", metrics_json(evaluate_classifier(result.stage1.params, task.test))},
               {"retained", result.retained.size()},
               {"history", history}};
  ws.write_json("classifier.json", info);
  std::cout << info["stage1_test"].dump() << "\n";
  return kOk;
}

int eval(const Flags& f) {
  Workspace ws(f);
  auto clf = load_classifier(ws.path("classifier.ckpt"));
  auto task = ws.task();
  Json info = metrics_json(evaluate_classifier(clf, task.test));
  ws.write_json("eval.json", info);
  std::cout << info.dump() << "\n";
  return kOk;
}

int run(const Flags& f) {
  Workspace ws(f);
  auto cfg = ws.cfg;
  if (f.seed) cfg.seeds = {*f.seed};
  if (ws.objective) cfg.objectives = {*ws.objective};
  RunOptions options;
  options.log = &std::cerr;
  options.out_dir = f.out;
  auto report = run_pipeline(cfg, options);
  write_report(f.out, report, ws.vocab);
  bool failed = false;
  for (const auto& r : report.runs)
    for (const auto& s : r.seeds) failed = failed || !s.ok;
  return failed ? kStageFailure : kOk;
}

int gradcheck(const Flags& f) {
  GradcheckOptions o;
  o.tol = f.tol;
  o.disc_grad_scale = f.disc_grad_scale;
  if (f.seed) o.seed = *f.seed;
  return print_gradcheck(std::cout, run_gradcheck(o), o) ? kOk : kStageFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot data generation: prefix-tuned generators, synthetic data, noise-robust classifiers"};
  app.set_version_flag("--version", std::string(FEWGEN_VERSION));
  app.require_subcommand(1);
  Flags flags;
  std::function<int(const Flags&)> action;

  auto add = [&](const char* name, const char* help, int (*fn)(const Flags&)) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "seed");
    sub->add_option("--out", flags.out, "working/output directory")->capture_default_str();
    sub->callback([&action, fn] { action = fn; });
    return sub;
  };
  add("synth-task", "draw corpus and labeled splits from the synthetic grammar", synth_task);
  add("pretrain", "pretrain and freeze the backbone", pretrain);
  add("tune-gen", "tune per-label prefixes on the few-shot split", tune_gen)
      ->add_option("--objective", flags.objective, "w-gen | gen | gen+disc")
      ->check(CLI::IsMember({"w-gen", "gen", "gen+disc"}));
  add("generate", "sample a labeled dataset from the tuned prefixes", generate);
  add("train-clf", "two-stage classifier training on few-shot plus generated data", train_clf);
  add("eval", "evaluate the trained classifier on the test split", eval);
  add("run", "full pipeline over every seed and objective", run)
      ->add_option("--objective", flags.objective, "restrict to one objective")
      ->check(CLI::IsMember({"w-gen", "gen", "gen+disc"}));
  auto* gc = add("gradcheck", "finite-difference checks of every gradient", gradcheck);
  gc->add_option("--tol", flags.tol, "override every suite's tolerance");
  gc->add_option("--disc-grad-scale", flags.disc_grad_scale, "mutation: scale the discriminative gradient")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }
  try {
    return action(flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageFailure;
  }
}
