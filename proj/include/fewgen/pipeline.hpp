#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fewgen/checkpoint.hpp"
#include "fewgen/classifier.hpp"
#include "fewgen/meta.hpp"
#include "fewgen/pretrain.hpp"
#include "fewgen/sampler.hpp"
#include "fewgen/task.hpp"

namespace fewgen {

/// Thrown for invalid configuration (as opposed to a failing stage).
struct ConfigError : Error {
  using Error::Error;
};

/// Plain sampling from scratch (temperature 1, no top-k), repetition penalty 1.1.
GenerationConfig default_generation();
/// Tuning defaults for the desk-scale task: the library defaults with every
/// learning rate scaled by 100.
TuningConfig default_tuning();

struct ExperimentConfig {
  ModelConfig model{.d_model = 32};
  PretrainOptions pretrain;
  SyntheticTaskSpec task;
  std::size_t shots = 16;          // per label
  std::size_t dev_per_label = 16;  // must equal shots
  std::size_t test_per_label = 200;
  std::size_t corpus_size = 2000;
  TuningConfig tuning = default_tuning();
  std::vector<Objective> objectives{Objective::WeightedGen, Objective::Gen, Objective::GenDisc};
  std::vector<GenerationConfig> generation{default_generation()};  // one, or one per label
  ClassifierConfig classifier;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string backbone_path;  // load instead of pretraining when set

  /// Throws ConfigError.
  void validate() const;
};

Json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys and bad values throw ConfigError.
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::string& path);

/// Fraction of samples whose oracle label equals their own label.
double oracle_label_accuracy(const Dataset& generated, const Grammar& grammar);

/// exp of the mean generative loss of the sequences (each followed by <eos>)
/// under label's prefix.
double perplexity(const BackboneParams& backbone, const PrefixBank& bank, std::size_t label, const Dataset& data);
/// Same, with every sequence scored under its own label.
double dataset_perplexity(const BackboneParams& backbone, const PrefixBank& bank, const Dataset& data);

/// Corpus for backbone pretraining; the same for every seed of an experiment.
Dataset pretraining_corpus(const Grammar& grammar, std::size_t size, std::uint64_t seed);
BackboneParams obtain_backbone(const ExperimentConfig& cfg, const Grammar& grammar);

/// Prefixes initialized from each label's seed phrase.
PrefixBank initial_prefix_bank(const BackboneParams& backbone, const Grammar& grammar, std::uint64_t seed);

struct SeedRun {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Metrics stage1_test;
  Metrics test;
  double generated_accuracy = 0.0;
  double perplexity = 0.0;
  double initial_weighted_gen = 0.0;  // first-epoch minibatch mean
  double final_weighted_gen = 0.0;    // last-epoch minibatch mean
  std::size_t generated = 0;
  std::size_t retained = 0;
  std::vector<LossRecord> history;
  std::vector<TokenWeightDump> weights;
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

struct ObjectiveRun {
  Objective objective = Objective::WeightedGen;
  std::vector<SeedRun> seeds;
  std::size_t succeeded = 0;
  Summary test_accuracy, test_macro_f1, test_mcc, stage1_accuracy, generated_accuracy, perplexity;
};

struct Report {
  std::string version;
  Json config;
  double bayes_accuracy = 0.0;  // 0 when no closed form exists
  double backbone_perplexity = 0.0;
  double unigram_perplexity = 0.0;
  std::vector<ObjectiveRun> runs;

  const ObjectiveRun* find(Objective o) const;
};

Summary summarize(const std::vector<double>& values);

struct RunOptions {
  std::ostream* log = nullptr;
  std::string out_dir;  // generated datasets are written here when set
};

/// Every objective on every seed. A failing seed is recorded and the rest continue.
Report run_pipeline(const ExperimentConfig& cfg, const RunOptions& options = {});

Json report_json(const Report& report);
/// objective,seed,step,epoch,weighted_gen,gen,disc
std::string losses_csv(const Report& report);
Json weights_json(const Report& report, const Vocabulary& vocab);
void write_report(const std::string& dir, const Report& report, const Vocabulary& vocab);

/// Add-one unigram perplexity of data (each sequence followed by <eos>), counts from data itself.
double unigram_perplexity(const Dataset& data, std::size_t vocab_size);

}  // namespace fewgen
