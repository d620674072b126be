#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fewgen/model.hpp"

namespace fewgen {

/// Mean-pooled transformer encoder plus a linear head over the labels. The
/// encoder tensors keep the backbone's names; the head is head.weight (d x L)
/// and head.bias (1 x L).
struct ClassifierParams {
  ModelConfig config;
  std::size_t num_labels = 0;
  ParameterSet params;
};

struct ClassifierConfig {
  double smoothing = 0.15;
  double momentum = 0.9;
  double reg_weight = 20.0;
  double threshold = 0.8;
  std::size_t period = 20;
  std::size_t steps = 600;  // stage 2
  std::vector<double> stage1_lrs{1e-3, 3e-3};
  std::vector<std::size_t> stage1_batches{4, 8};
  std::size_t stage1_epochs = 20;
  double stage2_lr = 1e-3;
  std::size_t stage2_batch = 16;
  bool train_encoder = true;

  void validate() const;
};

/// Encoder copied from the backbone (trainable), head ~ N(0, 0.02), bias 0.
ClassifierParams init_classifier(const BackboneParams& backbone, std::size_t num_labels, std::uint64_t seed);

/// 1 x L logits.
Var classifier_logits(Tape& tape, const ClassifierParams& clf, const LabeledSequence& seq);
std::vector<double> predict_proba(const ClassifierParams& clf, const LabeledSequence& seq);
std::size_t predict(const ClassifierParams& clf, const LabeledSequence& seq);

std::vector<double> smoothed_targets(std::size_t label, std::size_t num_labels, double smoothing);

struct ClassLoss {
  double value = 0.0;
  double regularizer = 0.0;  // lambda * KL(ensemble || p)
  bool floored = false;      // some p entry was below 1e-12
};

/// -sum q log p + lambda sum z (log z - log p), with p floored at 1e-12.
ClassLoss class_loss(std::span<const double> p, std::span<const double> q, std::span<const double> ensemble,
                     double lambda);
/// Same objective on logits; an empty ensemble drops the regularizer.
Var class_loss_var(Var logits, std::span<const double> q, std::span<const double> ensemble, double lambda);

struct EnsembleState {
  std::vector<double> raw;       // exponentially weighted sum
  std::vector<double> averaged;  // bias corrected
  std::size_t updates = 0;
};

EnsembleState update_ensemble(const EnsembleState& state, std::span<const double> p, double momentum);

/// Indices i with averaged[label_i] > threshold. Samples whose state was never
/// updated are kept.
std::vector<std::size_t> filter_retained(const Dataset& data, const std::vector<EnsembleState>& states,
                                         double threshold);

struct Stage1Result {
  ClassifierParams params;
  double lr = 0.0;
  std::size_t batch = 0;
  double dev_accuracy = 0.0;
};

struct Stage2Record {
  std::size_t step = 0;
  double loss = 0.0;        // batch mean; 0 when nothing was retained
  std::size_t retained = 0;
  bool trained = false;
};

struct ClassifierResult {
  Stage1Result stage1;
  ClassifierParams params;
  std::vector<Stage2Record> history;
  std::vector<EnsembleState> ensemble;
  std::vector<std::size_t> retained;
};

/// Smoothed cross-entropy on train over a small {lr, batch} grid, best by dev
/// accuracy (ties keep the earlier grid point).
Stage1Result train_stage1(const BackboneParams& backbone, const Dataset& train, const Dataset& dev,
                          std::size_t num_labels, const ClassifierConfig& config, std::uint64_t seed);

/// Called after every ensemble refresh with the step, all states and the re-filtered indices.
using RefreshObserver =
    std::function<void(std::size_t, const std::vector<EnsembleState>&, const std::vector<std::size_t>&)>;

/// Regularized SGD on generated data with temporal ensembling and filtering.
ClassifierResult train_stage2(const Stage1Result& stage1, const Dataset& generated, const ClassifierConfig& config,
                              std::uint64_t seed, const RefreshObserver& on_refresh = {});

ClassifierResult train_classifier(const BackboneParams& backbone, const Dataset& train, const Dataset& dev,
                                  const Dataset& generated, std::size_t num_labels, const ClassifierConfig& config,
                                  std::uint64_t seed);

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double mcc = 0.0;
  bool mcc_defined = true;
};

Metrics classification_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                               std::size_t num_labels);
Metrics evaluate_classifier(const ClassifierParams& clf, const Dataset& data);

}  // namespace fewgen
