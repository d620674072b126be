#include "fewgen/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <ostream>
#include <set>
#include <sstream>

#include "fewgen/io.hpp"

namespace fewgen {

namespace {

// Strict section reader: every key must be known and well typed.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(path(key) + ": wrong type");
    }
  }

  const Json* child(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!known_.count(k)) throw ConfigError("unknown config key: " + path(k));
  }

 private:
  const Json& j_;
  std::string name_;
  std::set<std::string> known_;
};

const char* mode_name(GenerationMode m) { return m == GenerationMode::Pair ? "pair" : "single"; }

const char* start_name(StartPolicy s) {
  switch (s) {
    case StartPolicy::None: return "none";
    case StartPolicy::FixedList: return "fixed";
    case StartPolicy::RandomWord: return "random-word";
    case StartPolicy::CorpusDraw: return "corpus";
  }
  return "none";
}

StartPolicy parse_start(const std::string& s) {
  for (auto p : {StartPolicy::None, StartPolicy::FixedList, StartPolicy::RandomWord, StartPolicy::CorpusDraw})
    if (s == start_name(p)) return p;
  throw ConfigError("unknown start policy: " + s);
}

Json generation_json(const GenerationConfig& g) {
  Json j;
  j["temperature"] = g.temperature;
  j["repetition_penalty"] = g.repetition_penalty;
  j["top_k"] = g.top_k;
  j["max_new_tokens"] = g.max_new_tokens;
  j["mode"] = mode_name(g.mode);
  j["start"] = start_name(g.start);
  j["start_tokens"] = g.start_tokens;
  j["samples_per_label"] = g.samples_per_label;
  return j;
}

GenerationConfig generation_from_json(const Json& j, const std::string& name) {
  GenerationConfig g;
  Section s(j, name);
  s.read("temperature", g.temperature);
  s.read("repetition_penalty", g.repetition_penalty);
  s.read("top_k", g.top_k);
  s.read("max_new_tokens", g.max_new_tokens);
  std::string mode = mode_name(g.mode), start = start_name(g.start);
  s.read("mode", mode);
  s.read("start", start);
  s.read("start_tokens", g.start_tokens);
  s.read("samples_per_label", g.samples_per_label);
  s.finish();
  if (mode == "single") g.mode = GenerationMode::Single;
  else if (mode == "pair") g.mode = GenerationMode::Pair;
  else throw ConfigError(s.path("mode") + ": expected single or pair");
  g.start = parse_start(start);
  return g;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Json metrics_json(const Metrics& m) {
  Json j;
  j["accuracy"] = m.accuracy;
  j["macro_f1"] = m.macro_f1;
  j["mcc"] = m.mcc;
  j["mcc_defined"] = m.mcc_defined;
  return j;
}

Json summary_json(const Summary& s) {
  Json j;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  return j;
}

void log_line(const RunOptions& options, const std::string& line) {
  if (options.log) *options.log << line << std::endl;
}

}  // namespace

GenerationConfig default_generation() {
  GenerationConfig g;
  g.temperature = 1.0;
  g.top_k = 0;
  g.repetition_penalty = 1.1;
  return g;
}

TuningConfig default_tuning() {
  TuningConfig t;
  t.lookahead_lr *= 100.0;
  t.weight_lr *= 100.0;
  t.prefix_lr *= 100.0;
  return t;
}

void ExperimentConfig::validate() const {
  auto check = [](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  };
  check([&] { model.validate(); });
  check([&] { task.validate(); });
  check([&] { tuning.validate(); });
  check([&] { classifier.validate(); });
  if (model.vocab_size != task.vocab_size) throw ConfigError("model.vocab_size must equal task.vocab_size");
  std::size_t longest = task.pair ? 2 * task.max_len + 2 : task.max_len + 1;
  if (longest > model.max_len) throw ConfigError("model.max_len too small for the task's sequences");
  if (shots < 1) throw ConfigError("shots must be >= 1");
  if (dev_per_label != shots) throw ConfigError("dev_per_label must equal shots");
  if (test_per_label < 1) throw ConfigError("test_per_label must be >= 1");
  if (corpus_size < 1 && backbone_path.empty()) throw ConfigError("corpus_size must be >= 1");
  if (objectives.empty()) throw ConfigError("objectives must not be empty");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds must be distinct");
  if (generation.size() != 1 && generation.size() != task.num_labels)
    throw ConfigError("generation needs one entry or one per label");
  for (const auto& g : generation) {
    check([&] { g.validate(model.vocab_size); });
    if ((g.mode == GenerationMode::Pair) != task.pair)
      throw ConfigError("generation.mode must match the task mode");
    if (task.pair && g.start != StartPolicy::CorpusDraw)
      throw ConfigError("pair tasks need generation.start = corpus");
  }
  if (pretrain.steps > 0 && pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
}

Json to_json(const ExperimentConfig& cfg) {
  Json j;
  j["model"] = to_json(cfg.model);

  Json p;
  p["steps"] = cfg.pretrain.steps;
  p["batch_size"] = cfg.pretrain.batch_size;
  p["learning_rate"] = cfg.pretrain.learning_rate;
  p["clip_norm"] = cfg.pretrain.clip_norm;
  p["seed"] = cfg.pretrain.seed;
  j["pretrain"] = p;

  const auto& t = cfg.task;
  Json task;
  task["vocab_size"] = t.vocab_size;
  task["num_labels"] = t.num_labels;
  task["template_tokens"] = t.template_tokens;
  task["disc_tokens_per_label"] = t.disc_tokens_per_label;
  task["insertion_prob"] = t.insertion_prob;
  task["transition_sharpness"] = t.transition_sharpness;
  task["min_len"] = t.min_len;
  task["max_len"] = t.max_len;
  task["pair"] = t.pair;
  task["copy_prob"] = t.copy_prob;
  task["seed"] = t.seed;
  j["task"] = task;

  j["shots"] = cfg.shots;
  j["dev_per_label"] = cfg.dev_per_label;
  j["test_per_label"] = cfg.test_per_label;
  j["corpus_size"] = cfg.corpus_size;

  const auto& u = cfg.tuning;
  Json tuning;
  tuning["lookahead_lr"] = u.lookahead_lr;
  tuning["weight_lr"] = u.weight_lr;
  tuning["prefix_lr"] = u.prefix_lr;
  tuning["batch_size"] = u.batch_size;
  tuning["epochs"] = u.epochs;
  tuning["mu"] = u.mu;
  tuning["weight_hidden"] = u.weight_hidden;
  tuning["train_weight_net"] = u.train_weight_net;
  j["tuning"] = tuning;

  Json objectives = Json::array();
  for (auto o : cfg.objectives) objectives.push_back(objective_name(o));
  j["objectives"] = objectives;

  Json gen = Json::array();
  for (const auto& g : cfg.generation) gen.push_back(generation_json(g));
  j["generation"] = gen;

  const auto& c = cfg.classifier;
  Json clf;
  clf["smoothing"] = c.smoothing;
  clf["momentum"] = c.momentum;
  clf["reg_weight"] = c.reg_weight;
  clf["threshold"] = c.threshold;
  clf["period"] = c.period;
  clf["steps"] = c.steps;
  clf["stage1_lrs"] = c.stage1_lrs;
  clf["stage1_batches"] = c.stage1_batches;
  clf["stage1_epochs"] = c.stage1_epochs;
  clf["stage2_lr"] = c.stage2_lr;
  clf["stage2_batch"] = c.stage2_batch;
  clf["train_encoder"] = c.train_encoder;
  j["classifier"] = clf;

  j["seeds"] = cfg.seeds;
  j["backbone_path"] = cfg.backbone_path;
  return j;
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  ExperimentConfig cfg;
  Section root(j, "");
  if (const Json* m = root.child("model")) {
    Section s(*m, "model");
    s.read("vocab_size", cfg.model.vocab_size);
    s.read("d_model", cfg.model.d_model);
    s.read("layers", cfg.model.layers);
    s.read("heads", cfg.model.heads);
    s.read("prefix_len", cfg.model.prefix_len);
    s.read("max_len", cfg.model.max_len);
    s.read("ffn_mult", cfg.model.ffn_mult);
    s.finish();
  }
  if (const Json* p = root.child("pretrain")) {
    Section s(*p, "pretrain");
    s.read("steps", cfg.pretrain.steps);
    s.read("batch_size", cfg.pretrain.batch_size);
    s.read("learning_rate", cfg.pretrain.learning_rate);
    s.read("clip_norm", cfg.pretrain.clip_norm);
    s.read("seed", cfg.pretrain.seed);
    s.finish();
  }
  if (const Json* t = root.child("task")) {
    Section s(*t, "task");
    auto& k = cfg.task;
    s.read("vocab_size", k.vocab_size);
    s.read("num_labels", k.num_labels);
    s.read("template_tokens", k.template_tokens);
    s.read("disc_tokens_per_label", k.disc_tokens_per_label);
    s.read("insertion_prob", k.insertion_prob);
    s.read("transition_sharpness", k.transition_sharpness);
    s.read("min_len", k.min_len);
    s.read("max_len", k.max_len);
    s.read("pair", k.pair);
    s.read("copy_prob", k.copy_prob);
    s.read("seed", k.seed);
    s.finish();
  }
  root.read("shots", cfg.shots);
  cfg.dev_per_label = cfg.shots;
  root.read("dev_per_label", cfg.dev_per_label);
  root.read("test_per_label", cfg.test_per_label);
  root.read("corpus_size", cfg.corpus_size);
  if (const Json* t = root.child("tuning")) {
    Section s(*t, "tuning");
    auto& u = cfg.tuning;
    s.read("lookahead_lr", u.lookahead_lr);
    s.read("weight_lr", u.weight_lr);
    s.read("prefix_lr", u.prefix_lr);
    s.read("batch_size", u.batch_size);
    s.read("epochs", u.epochs);
    s.read("mu", u.mu);
    s.read("weight_hidden", u.weight_hidden);
    s.read("train_weight_net", u.train_weight_net);
    s.finish();
  }
  if (const Json* o = root.child("objectives")) {
    std::vector<std::string> names;
    try {
      names = o->get<std::vector<std::string>>();
    } catch (const Json::exception&) {
      throw ConfigError("objectives: expected a list of names");
    }
    cfg.objectives.clear();
    for (const auto& n : names) {
      try {
        cfg.objectives.push_back(parse_objective(n));
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    }
  }
  if (const Json* g = root.child("generation")) {
    cfg.generation.clear();
    if (g->is_object()) {
      cfg.generation.push_back(generation_from_json(*g, "generation"));
    } else if (g->is_array()) {
      for (std::size_t i = 0; i < g->size(); ++i)
        cfg.generation.push_back(generation_from_json((*g)[i], "generation[" + std::to_string(i) + "]"));
    } else {
      throw ConfigError("generation: expected an object or a list");
    }
  }
  if (const Json* c = root.child("classifier")) {
    Section s(*c, "classifier");
    auto& k = cfg.classifier;
    s.read("smoothing", k.smoothing);
    s.read("momentum", k.momentum);
    s.read("reg_weight", k.reg_weight);
    s.read("threshold", k.threshold);
    s.read("period", k.period);
    s.read("steps", k.steps);
    s.read("stage1_lrs", k.stage1_lrs);
    s.read("stage1_batches", k.stage1_batches);
    s.read("stage1_epochs", k.stage1_epochs);
    s.read("stage2_lr", k.stage2_lr);
    s.read("stage2_batch", k.stage2_batch);
    s.read("train_encoder", k.train_encoder);
    s.finish();
  }
  root.read("seeds", cfg.seeds);
  root.read("backbone_path", cfg.backbone_path);
  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(path + ": malformed JSON (" + e.what() + ")");
  }
  try {
    return experiment_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

double oracle_label_accuracy(const Dataset& generated, const Grammar& grammar) {
  if (generated.empty()) throw Error("oracle_label_accuracy: empty dataset");
  std::size_t hits = 0;
  for (const auto& s : generated) hits += grammar.oracle_label(s) == s.label;
  return static_cast<double>(hits) / static_cast<double>(generated.size());
}

double perplexity(const BackboneParams& backbone, const PrefixBank& bank, std::size_t label, const Dataset& data) {
  if (data.empty()) throw Error("perplexity: empty dataset");
  double total = 0.0;
  for (const auto& s : data)
    total += gen_loss(sequence_token_logprobs(backbone, bank, label, with_eos(s)).included());
  return std::exp(total / static_cast<double>(data.size()));
}

double dataset_perplexity(const BackboneParams& backbone, const PrefixBank& bank, const Dataset& data) {
  if (data.empty()) throw Error("perplexity: empty dataset");
  double total = 0.0;
  for (const auto& s : data)
    total += gen_loss(sequence_token_logprobs(backbone, bank, s.label, with_eos(s)).included());
  return std::exp(total / static_cast<double>(data.size()));
}

double unigram_perplexity(const Dataset& data, std::size_t vocab_size) {
  if (data.empty()) throw Error("unigram_perplexity: empty dataset");
  std::vector<double> counts(vocab_size, 1.0);
  double total = static_cast<double>(vocab_size);
  for (const auto& s : data)
    for (auto t : with_eos(s).tokens) {
      counts.at(t) += 1.0;
      total += 1.0;
    }
  double nll = 0.0;
  std::size_t n = 0;
  for (const auto& s : data)
    for (auto t : with_eos(s).tokens) {
      nll -= std::log(counts[t] / total);
      ++n;
    }
  return std::exp(nll / static_cast<double>(n));
}

Dataset pretraining_corpus(const Grammar& grammar, std::size_t size, std::uint64_t seed) {
  return make_synthetic_task(grammar, 1, 0, 0, size, seed).corpus;
}

BackboneParams obtain_backbone(const ExperimentConfig& cfg, const Grammar& grammar) {
  if (!cfg.backbone_path.empty()) {
    Vocabulary vocab;
    auto bb = load_backbone(cfg.backbone_path, &vocab);
    if (!(bb.config == cfg.model)) throw ConfigError(cfg.backbone_path + ": model config differs from the experiment");
    return bb;
  }
  return pretrain_backbone(pretraining_corpus(grammar, cfg.corpus_size, cfg.task.seed), cfg.model, cfg.pretrain);
}

PrefixBank initial_prefix_bank(const BackboneParams& backbone, const Grammar& grammar, std::uint64_t seed) {
  std::vector<std::vector<TokenId>> phrases;
  for (std::size_t l = 0; l < grammar.spec().num_labels; ++l)
    phrases.push_back(grammar.seed_phrase(l, backbone.config.prefix_len));
  return prefix_bank_from_phrases(backbone, phrases, grammar.spec().pair, seed);
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  s.mean = mean_of(values);
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

const ObjectiveRun* Report::find(Objective o) const {
  for (const auto& r : runs)
    if (r.objective == o) return &r;
  return nullptr;
}

Report run_pipeline(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  Grammar grammar(cfg.task);
  const std::size_t L = cfg.task.num_labels;

  Report report;
  report.version = FEWGEN_VERSION;
  report.config = to_json(cfg);
  if (!cfg.task.pair && cfg.task.insertion_prob.size() == 1) report.bayes_accuracy = grammar.bayes_accuracy();

  log_line(options, "backbone: " + (cfg.backbone_path.empty() ? std::string("pretraining") : cfg.backbone_path));
  const BackboneParams backbone = obtain_backbone(cfg, grammar);
  const Dataset corpus = pretraining_corpus(grammar, std::max<std::size_t>(cfg.corpus_size, 1), cfg.task.seed);
  const Dataset heldout = pretraining_corpus(grammar, 400, cfg.task.seed ^ 0x9e3779b97f4a7c15ULL);
  report.backbone_perplexity = backbone_perplexity(backbone, heldout);
  report.unigram_perplexity = unigram_perplexity(corpus, cfg.model.vocab_size);
  std::vector<std::vector<TokenId>> first_pool;
  if (cfg.task.pair)
    for (const auto& s : corpus) first_pool.push_back(s.first());

  for (auto o : cfg.objectives) report.runs.push_back(ObjectiveRun{o, {}, 0, {}, {}, {}, {}, {}, {}});

  for (auto seed : cfg.seeds) {
    const std::string tag = "seed " + std::to_string(seed);
    SyntheticTask task;
    Stage1Result stage1;
    Metrics stage1_test;
    std::string setup_error;
    try {
      task = make_synthetic_task(grammar, cfg.shots, cfg.dev_per_label, cfg.test_per_label, 0, seed);
      stage1 = train_stage1(backbone, task.train, task.dev, L, cfg.classifier, seed);
      stage1_test = evaluate_classifier(stage1.params, task.test);
      log_line(options, tag + ": stage 1 dev " + std::to_string(stage1.dev_accuracy) + " test " +
                            std::to_string(stage1_test.accuracy));
    } catch (const std::exception& e) {
      setup_error = e.what();
      log_line(options, tag + ": failed: " + setup_error);
    }

    for (auto& run : report.runs) {
      SeedRun r;
      r.seed = seed;
      r.stage1_test = stage1_test;
      const std::string name = objective_name(run.objective);
      if (!setup_error.empty()) {
        r.error = setup_error;
        run.seeds.push_back(std::move(r));
        continue;
      }
      try {
        TuningConfig tuning = cfg.tuning;
        tuning.objective = run.objective;
        auto tuned = tune_generators(backbone, initial_prefix_bank(backbone, grammar, seed), task.train, tuning, seed);
        r.history = tuned.history;
        r.initial_weighted_gen = tuned.epoch_mean(0, &LossRecord::weighted_gen);
        r.final_weighted_gen = tuned.epoch_mean(tuning.epochs - 1, &LossRecord::weighted_gen);
        r.weights = dump_token_weights(backbone, tuned.bank, tuned.net, task.train);

        Dataset generated = synthesize_dataset(backbone, tuned.bank, cfg.generation, first_pool, seed);
        r.generated = generated.size();
        r.generated_accuracy = oracle_label_accuracy(generated, grammar);
        r.perplexity = dataset_perplexity(backbone, tuned.bank, task.test);
        if (!options.out_dir.empty()) {
          Vocabulary vocab = Vocabulary::synthetic(cfg.model.vocab_size);
          write_dataset((std::filesystem::path(options.out_dir) /
                         ("generated-" + name + "-seed" + std::to_string(seed) + ".jsonl"))
                            .string(),
                        generated, vocab);
        }

        auto clf = train_stage2(stage1, generated, cfg.classifier, seed);
        r.retained = clf.retained.size();
        r.test = evaluate_classifier(clf.params, task.test);
        r.ok = true;
        log_line(options, tag + " " + name + ": gen-acc " + std::to_string(r.generated_accuracy) + " ppl " +
                              std::to_string(r.perplexity) + " test " + std::to_string(r.test.accuracy) +
                              " (stage 1 " + std::to_string(stage1_test.accuracy) + ")");
      } catch (const std::exception& e) {
        r.error = e.what();
        log_line(options, tag + " " + name + ": failed: " + r.error);
      }
      run.seeds.push_back(std::move(r));
    }
  }

  for (auto& run : report.runs) {
    std::vector<double> acc, f1, mcc, s1, gacc, ppl;
    for (const auto& r : run.seeds) {
      if (!r.ok) continue;
      acc.push_back(r.test.accuracy);
      f1.push_back(r.test.macro_f1);
      mcc.push_back(r.test.mcc);
      s1.push_back(r.stage1_test.accuracy);
      gacc.push_back(r.generated_accuracy);
      ppl.push_back(r.perplexity);
    }
    run.succeeded = acc.size();
    run.test_accuracy = summarize(acc);
    run.test_macro_f1 = summarize(f1);
    run.test_mcc = summarize(mcc);
    run.stage1_accuracy = summarize(s1);
    run.generated_accuracy = summarize(gacc);
    run.perplexity = summarize(ppl);
  }
  return report;
}

Json report_json(const Report& report) {
  Json j;
  j["version"] = report.version;
  j["seed_roles"] =
      "each seed draws the few-shot/dev/test splits and drives prefix initialization, tuning order, "
      "sampling and classifier training; the backbone is pretrained once and shared by all seeds";
  j["config"] = report.config;
  j["bayes_accuracy"] = report.bayes_accuracy;
  j["backbone_perplexity"] = report.backbone_perplexity;
  j["unigram_perplexity"] = report.unigram_perplexity;
  Json runs = Json::array();
  for (const auto& run : report.runs) {
    Json r;
    r["objective"] = objective_name(run.objective);
    Json seeds = Json::array();
    for (const auto& s : run.seeds) {
      Json e;
      e["seed"] = s.seed;
      e["ok"] = s.ok;
      if (!s.ok) {
        e["error"] = s.error;
      } else {
        e["test"] = metrics_json(s.test);
        e["stage1_test"] = metrics_json(s.stage1_test);
        e["generated_accuracy"] = s.generated_accuracy;
        e["perplexity"] = s.perplexity;
        e["initial_weighted_gen"] = s.initial_weighted_gen;
        e["final_weighted_gen"] = s.final_weighted_gen;
        e["generated"] = s.generated;
        e["retained"] = s.retained;
      }
      seeds.push_back(e);
    }
    r["seeds"] = seeds;
    Json agg;
    agg["succeeded"] = run.succeeded;
    agg["test_accuracy"] = summary_json(run.test_accuracy);
    agg["test_macro_f1"] = summary_json(run.test_macro_f1);
    agg["test_mcc"] = summary_json(run.test_mcc);
    agg["stage1_test_accuracy"] = summary_json(run.stage1_accuracy);
    agg["generated_accuracy"] = summary_json(run.generated_accuracy);
    agg["perplexity"] = summary_json(run.perplexity);
    r["aggregate"] = agg;
    runs.push_back(r);
  }
  j["runs"] = runs;
  j["outputs"] = {{"losses", "losses.csv"}, {"token_weights", "weights.json"}};
  return j;
}

std::string losses_csv(const Report& report) {
  std::ostringstream out;
  out.precision(17);
  out << "objective,seed,step,epoch,weighted_gen,gen,disc\n";
  for (const auto& run : report.runs)
    for (const auto& s : run.seeds)
      for (const auto& h : s.history)
        out << objective_name(run.objective) << ',' << s.seed << ',' << h.step << ',' << h.epoch << ','
            << h.weighted_gen << ',' << h.gen << ',' << h.disc << '\n';
  return out.str();
}

Json weights_json(const Report& report, const Vocabulary& vocab) {
  Json out = Json::array();
  for (const auto& run : report.runs)
    for (const auto& s : run.seeds)
      for (const auto& w : s.weights) {
        Json r;
        r["objective"] = objective_name(run.objective);
        r["seed"] = s.seed;
        r["sequence_id"] = "train-" + std::to_string(w.sequence);
        r["label"] = w.label;
        Json toks = Json::array();
        for (auto t : w.tokens) toks.push_back(vocab.token(t));
        r["tokens"] = toks;
        r["weights"] = w.weights;
        r["disc_values"] = w.disc_inputs;
        out.push_back(r);
      }
  return out;
}

void write_report(const std::string& dir, const Report& report, const Vocabulary& vocab) {
  std::filesystem::create_directories(dir);
  auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  write_file(path("report.json"), report_json(report).dump(2) + "\n");
  write_file(path("losses.csv"), losses_csv(report));
  write_file(path("weights.json"), weights_json(report, vocab).dump(2) + "\n");
}

}  // namespace fewgen
