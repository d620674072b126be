#include "fewgen/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fewgen/optim.hpp"

namespace fewgen {

namespace {
constexpr double kProbFloor = 1e-12;
}

void ClassifierConfig::validate() const {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw Error("classifier: smoothing must be in [0, 1)");
  if (!(momentum > 0.0 && momentum < 1.0)) throw Error("classifier: momentum must be in (0, 1)");
  if (!(reg_weight >= 0.0)) throw Error("classifier: reg_weight must be >= 0");
  if (!(threshold >= 0.0 && threshold < 1.0)) throw Error("classifier: threshold must be in [0, 1)");
  if (period == 0) throw Error("classifier: period must be positive");
  if (stage1_lrs.empty() || stage1_batches.empty()) throw Error("classifier: empty stage-1 grid");
  for (double lr : stage1_lrs)
    if (!(lr > 0.0)) throw Error("classifier: stage-1 learning rates must be positive");
  for (auto b : stage1_batches)
    if (b == 0) throw Error("classifier: stage-1 batch sizes must be positive");
  if (!(stage2_lr > 0.0)) throw Error("classifier: stage2_lr must be positive");
  if (stage2_batch == 0) throw Error("classifier: stage2_batch must be positive");
}

ClassifierParams init_classifier(const BackboneParams& backbone, std::size_t num_labels, std::uint64_t seed) {
  if (num_labels < 2) throw Error("classifier needs at least 2 labels");
  ClassifierParams clf{backbone.config, num_labels, backbone.params};
  clf.params.set_all_trainable(true);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  std::vector<double> w(backbone.config.d_model * num_labels);
  for (auto& x : w) x = normal(rng);
  clf.params.add("head.weight", Tensor::matrix(backbone.config.d_model, num_labels, std::move(w)));
  clf.params.add("head.bias", Tensor::zeros({1, num_labels}));
  return clf;
}

Var classifier_logits(Tape& tape, const ClassifierParams& clf, const LabeledSequence& seq) {
  if (seq.tokens.empty()) throw Error("classifier: empty sequence");
  auto bb = bind_backbone(tape, clf.config, clf.params);
  LmInput in;
  in.ids.push_back(Vocabulary::kBos);
  in.ids.insert(in.ids.end(), seq.tokens.begin(), seq.tokens.end());
  Var pooled = ad::mean_rows(hidden_states(bb, nullptr, in));
  return ad::add_row(ad::matmul(pooled, tape.parameter(clf.params, "head.weight")),
                     tape.parameter(clf.params, "head.bias"));
}

std::vector<double> predict_proba(const ClassifierParams& clf, const LabeledSequence& seq) {
  Tape tape;
  return softmax_stable(classifier_logits(tape, clf, seq).value().values());
}

std::size_t predict(const ClassifierParams& clf, const LabeledSequence& seq) {
  auto p = predict_proba(clf, seq);
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

std::vector<double> smoothed_targets(std::size_t label, std::size_t num_labels, double smoothing) {
  if (label >= num_labels) throw Error("smoothed_targets: label out of range");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw Error("smoothed_targets: smoothing must be in [0, 1)");
  std::vector<double> q(num_labels, smoothing / static_cast<double>(num_labels));
  q[label] += 1.0 - smoothing;
  return q;
}

ClassLoss class_loss(std::span<const double> p, std::span<const double> q, std::span<const double> ensemble,
                     double lambda) {
  if (p.size() != q.size() || p.size() != ensemble.size()) throw Error("class_loss: length mismatch");
  ClassLoss out;
  for (std::size_t l = 0; l < p.size(); ++l) {
    double pl = p[l];
    if (pl < kProbFloor) {
      pl = kProbFloor;
      out.floored = true;
    }
    out.value -= q[l] * std::log(pl);
    if (ensemble[l] > 0.0) out.regularizer += ensemble[l] * (std::log(ensemble[l]) - std::log(pl));
  }
  out.regularizer *= lambda;
  out.value += out.regularizer;
  return out;
}

Var class_loss_var(Var logits, std::span<const double> q, std::span<const double> ensemble, double lambda) {
  auto& tape = *logits.tape;
  const std::size_t L = logits.cols();
  if (q.size() != L) throw Error("class_loss: length mismatch");
  Var logp = ad::log_softmax_rows(logits);
  Var ce = ad::scale(ad::sum(ad::mul(logp, tape.constant(Tensor::row({q.begin(), q.end()})))), -1.0);
  if (ensemble.empty() || lambda == 0.0) return ce;
  if (ensemble.size() != L) throw Error("class_loss: length mismatch");
  double entropy_term = 0.0;
  for (double z : ensemble)
    if (z > 0.0) entropy_term += z * std::log(z);
  Var cross = ad::sum(ad::mul(logp, tape.constant(Tensor::row({ensemble.begin(), ensemble.end()}))));
  Var kl = ad::add_scalar(ad::scale(cross, -1.0), entropy_term);
  return ad::add(ce, ad::scale(kl, lambda));
}

EnsembleState update_ensemble(const EnsembleState& state, std::span<const double> p, double momentum) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw Error("update_ensemble: momentum must be in (0, 1)");
  EnsembleState next = state;
  if (next.raw.empty()) next.raw.assign(p.size(), 0.0);
  if (next.raw.size() != p.size()) throw Error("update_ensemble: length mismatch");
  ++next.updates;
  const double correction = 1.0 - std::pow(momentum, static_cast<double>(next.updates));
  next.averaged.resize(p.size());
  for (std::size_t l = 0; l < p.size(); ++l) {
    next.raw[l] = momentum * next.raw[l] + (1.0 - momentum) * p[l];
    next.averaged[l] = next.raw[l] / correction;
  }
  return next;
}

std::vector<std::size_t> filter_retained(const Dataset& data, const std::vector<EnsembleState>& states,
                                         double threshold) {
  if (data.size() != states.size()) throw Error("filter_retained: one ensemble state per sample required");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = states[i];
    if (s.updates == 0 || s.averaged.at(data[i].label) > threshold) keep.push_back(i);
  }
  return keep;
}

namespace {

GradientSet batch_gradient(const ClassifierParams& clf, const Dataset& data, std::span<const std::size_t> batch,
                           double smoothing, const std::vector<EnsembleState>* ensemble, double lambda,
                           double* loss_out) {
  Tape tape;
  std::optional<Var> total;
  for (auto i : batch) {
    const auto& seq = data[i];
    auto q = smoothed_targets(seq.label, clf.num_labels, smoothing);
    std::span<const double> z;
    if (ensemble && (*ensemble)[i].updates > 0) z = (*ensemble)[i].averaged;
    auto loss = class_loss_var(classifier_logits(tape, clf, seq), q, z, lambda);
    total = total ? ad::add(*total, loss) : loss;
  }
  Var mean = ad::scale(*total, 1.0 / static_cast<double>(batch.size()));
  if (loss_out) *loss_out = mean.value().item();
  return backward_gradients(mean, clf.params);
}

void check_dataset(const Dataset& data, std::size_t num_labels, const char* what) {
  for (const auto& s : data)
    if (s.label >= num_labels)
      throw Error(std::string(what) + ": label " + std::to_string(s.label) + " out of range");
}

}  // namespace

Stage1Result train_stage1(const BackboneParams& backbone, const Dataset& train, const Dataset& dev,
                          std::size_t num_labels, const ClassifierConfig& config, std::uint64_t seed) {
  config.validate();
  if (train.empty()) throw Error("train_classifier: empty training set");
  check_dataset(train, num_labels, "train_classifier");
  check_dataset(dev, num_labels, "train_classifier");
  const Dataset& select_on = dev.empty() ? train : dev;

  std::optional<Stage1Result> best;
  for (double lr : config.stage1_lrs) {
    for (auto batch : config.stage1_batches) {
      auto clf = init_classifier(backbone, num_labels, seed);
      if (!config.train_encoder)
        for (const auto& e : backbone.params.entries()) clf.params.set_trainable(e.name, false);
      Adam adam(lr);
      std::mt19937_64 rng(seed);
      std::vector<std::size_t> order(train.size());
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t epoch = 0; epoch < config.stage1_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
          std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
          adam.step(clf.params, batch_gradient(clf, train, idx, config.smoothing, nullptr, 0.0, nullptr));
        }
      }
      double acc = evaluate_classifier(clf, select_on).accuracy;
      if (!best || acc > best->dev_accuracy) best = Stage1Result{std::move(clf), lr, batch, acc};
    }
  }
  return std::move(*best);
}

ClassifierResult train_stage2(const Stage1Result& stage1, const Dataset& generated, const ClassifierConfig& config,
                              std::uint64_t seed, const RefreshObserver& on_refresh) {
  config.validate();
  ClassifierResult out{stage1, stage1.params, {}, {}, {}};
  if (config.steps == 0) return out;
  if (generated.empty()) throw Error("train_classifier: empty generated set with stage-2 steps > 0");
  check_dataset(generated, stage1.params.num_labels, "train_classifier");

  auto& clf = out.params;
  out.ensemble.assign(generated.size(), EnsembleState{});
  out.retained.resize(generated.size());
  std::iota(out.retained.begin(), out.retained.end(), 0);
  std::mt19937_64 rng(seed);

  for (std::size_t step = 1; step <= config.steps; ++step) {
    Stage2Record rec{step, 0.0, out.retained.size(), false};
    if (!out.retained.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, out.retained.size() - 1);
      std::vector<std::size_t> batch(config.stage2_batch);
      for (auto& i : batch) i = out.retained[pick(rng)];
      auto grads = batch_gradient(clf, generated, batch, config.smoothing, &out.ensemble, config.reg_weight,
                                  &rec.loss);
      sgd_step(clf.params, grads, config.stage2_lr);
      rec.trained = true;
    }
    out.history.push_back(rec);
    if (step % config.period == 0) {
      for (std::size_t i = 0; i < generated.size(); ++i)
        out.ensemble[i] = update_ensemble(out.ensemble[i], predict_proba(clf, generated[i]), config.momentum);
      out.retained = filter_retained(generated, out.ensemble, config.threshold);
      if (on_refresh) on_refresh(step, out.ensemble, out.retained);
    }
  }
  return out;
}

ClassifierResult train_classifier(const BackboneParams& backbone, const Dataset& train, const Dataset& dev,
                                  const Dataset& generated, std::size_t num_labels, const ClassifierConfig& config,
                                  std::uint64_t seed) {
  return train_stage2(train_stage1(backbone, train, dev, num_labels, config, seed), generated, config, seed);
}

Metrics classification_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                               std::size_t num_labels) {
  if (truth.size() != predicted.size()) throw Error("metrics: length mismatch");
  if (truth.empty()) throw Error("metrics: empty dataset");
  std::vector<double> tp(num_labels, 0), pred_count(num_labels, 0), true_count(num_labels, 0);
  double correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_labels || predicted[i] >= num_labels) throw Error("metrics: label out of range");
    ++true_count[truth[i]];
    ++pred_count[predicted[i]];
    if (truth[i] == predicted[i]) {
      ++tp[truth[i]];
      ++correct;
    }
  }
  const double n = static_cast<double>(truth.size());
  Metrics m;
  m.accuracy = correct / n;
  for (std::size_t l = 0; l < num_labels; ++l) {
    double denom = pred_count[l] + true_count[l];
    m.macro_f1 += denom > 0 ? 2.0 * tp[l] / denom : 0.0;
  }
  m.macro_f1 /= static_cast<double>(num_labels);
  double sp = 0, st = 0, spt = 0;
  for (std::size_t l = 0; l < num_labels; ++l) {
    sp += pred_count[l] * pred_count[l];
    st += true_count[l] * true_count[l];
    spt += pred_count[l] * true_count[l];
  }
  double denom = std::sqrt((n * n - sp) * (n * n - st));
  if (denom == 0.0) {
    m.mcc = 0.0;
    m.mcc_defined = false;
  } else {
    m.mcc = (correct * n - spt) / denom;
  }
  return m;
}

Metrics evaluate_classifier(const ClassifierParams& clf, const Dataset& data) {
  std::vector<std::size_t> truth, pred;
  for (const auto& s : data) {
    truth.push_back(s.label);
    pred.push_back(predict(clf, s));
  }
  return classification_metrics(truth, pred, clf.num_labels);
}

}  // namespace fewgen
