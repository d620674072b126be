#include "fewgen/task.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fewgen {

void SyntheticTaskSpec::validate() const {
  if (num_labels < 2) throw Error("task: num_labels must be >= 2");
  if (template_tokens < 1) throw Error("task: template_tokens must be >= 1");
  if (disc_tokens_per_label < 1) throw Error("task: disc_tokens_per_label must be >= 1");
  if (Vocabulary::kReserved + template_tokens + num_labels * disc_tokens_per_label > vocab_size)
    throw Error("task: vocab_size too small for the template and discriminative tokens");
  if (insertion_prob.size() != 1 && insertion_prob.size() != num_labels)
    throw Error("task: insertion_prob needs one value or one per label");
  for (double p : insertion_prob)
    if (!(p >= 0.0 && p <= 1.0)) throw Error("task: insertion_prob must be in [0, 1]");
  if (min_len < 1 || min_len > max_len) throw Error("task: need 1 <= min_len <= max_len");
  if (!(copy_prob >= 0.0 && copy_prob <= 1.0)) throw Error("task: copy_prob must be in [0, 1]");
  if (!(transition_sharpness >= 0.0)) throw Error("task: transition_sharpness must be >= 0");
}

double SyntheticTaskSpec::insertion(std::size_t label) const {
  return insertion_prob.size() == 1 ? insertion_prob[0] : insertion_prob.at(label);
}

Grammar::Grammar(SyntheticTaskSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  template_index_.assign(spec_.vocab_size, -1);
  disc_owner_.assign(spec_.vocab_size, -1);
  TokenId next = Vocabulary::kReserved;
  for (std::size_t i = 0; i < spec_.template_tokens; ++i, ++next) {
    template_index_[next] = static_cast<int>(i);
    templates_.push_back(next);
  }
  disc_.resize(spec_.num_labels);
  for (std::size_t l = 0; l < spec_.num_labels; ++l)
    for (std::size_t i = 0; i < spec_.disc_tokens_per_label; ++i, ++next) {
      disc_owner_[next] = static_cast<int>(l);
      disc_[l].push_back(next);
    }

  std::mt19937_64 rng(spec_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  transition_.resize(spec_.template_tokens + 1);
  for (auto& row : transition_) {
    std::vector<double> logits(spec_.template_tokens);
    for (auto& z : logits) z = spec_.transition_sharpness * normal(rng);
    row = softmax_stable(logits);
  }
}

std::vector<TokenId> Grammar::sample_templates(std::mt19937_64& rng, std::size_t n) const {
  std::vector<TokenId> out;
  std::size_t prev = 0;
  for (std::size_t j = 0; j < n; ++j) {
    std::discrete_distribution<std::size_t> d(transition_[prev].begin(), transition_[prev].end());
    std::size_t k = d(rng);
    out.push_back(templates_[k]);
    prev = k + 1;
  }
  return out;
}

std::vector<TokenId> Grammar::sample_first(std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> len(spec_.min_len, spec_.max_len);
  return sample_templates(rng, len(rng));
}

LabeledSequence Grammar::sample(std::size_t label, std::mt19937_64& rng) const {
  if (label >= spec_.num_labels) throw Error("grammar: label out of range");
  std::vector<TokenId> first;
  if (spec_.pair) first = sample_first(rng);
  std::uniform_int_distribution<std::size_t> len(spec_.min_len, spec_.max_len);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_disc(0, disc_[label].size() - 1);
  const bool copies = spec_.pair && label == 0;
  const std::size_t n = len(rng);
  std::vector<TokenId> out;
  std::size_t prev = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (u(rng) < spec_.insertion(label)) {
      out.push_back(disc_[label][pick_disc(rng)]);
      continue;
    }
    TokenId t;
    if (copies && u(rng) < spec_.copy_prob) {
      std::uniform_int_distribution<std::size_t> pos(0, first.size() - 1);
      t = first[pos(rng)];
    } else {
      std::discrete_distribution<std::size_t> d(transition_[prev].begin(), transition_[prev].end());
      t = templates_[d(rng)];
    }
    out.push_back(t);
    prev = static_cast<std::size_t>(template_index_[t]) + 1;
  }
  if (spec_.pair) return make_pair(first, out, label, "grammar");
  return make_single(std::move(out), label, "grammar");
}

Grammar::Scored Grammar::score(const LabeledSequence& seq, std::size_t label) const {
  if (label >= spec_.num_labels) throw Error("grammar: label out of range");
  std::vector<TokenId> first = seq.pair ? seq.first() : std::vector<TokenId>{};
  std::vector<TokenId> body = seq.pair ? seq.second() : seq.tokens;
  const double rho = spec_.insertion(label);
  const bool copies = spec_.pair && label == 0;
  const double copy = copies ? spec_.copy_prob : 0.0;
  Scored s;
  std::size_t prev = 0;
  for (auto t : body) {
    if (t >= spec_.vocab_size) throw Error("grammar: token out of range");
    if (disc_owner_[t] == static_cast<int>(label) && rho > 0.0) {
      s.loglik += std::log(rho / static_cast<double>(disc_[label].size()));
      continue;
    }
    int k = template_index_[t];
    if (k < 0 || rho >= 1.0) {
      ++s.impossible;
      continue;
    }
    double p = (1.0 - copy) * transition_[prev][static_cast<std::size_t>(k)];
    if (copy > 0.0 && !first.empty()) {
      double count = static_cast<double>(std::count(first.begin(), first.end(), t));
      p += copy * count / static_cast<double>(first.size());
    }
    if (p <= 0.0) {
      ++s.impossible;
      continue;
    }
    s.loglik += std::log((1.0 - rho) * p);
    prev = static_cast<std::size_t>(k) + 1;
  }
  return s;
}

double Grammar::log_likelihood(const LabeledSequence& seq, std::size_t label) const {
  auto s = score(seq, label);
  return s.impossible ? -std::numeric_limits<double>::infinity() : s.loglik;
}

std::size_t Grammar::impossible_tokens(const LabeledSequence& seq, std::size_t label) const {
  return score(seq, label).impossible;
}

std::size_t Grammar::oracle_label(const LabeledSequence& seq) const {
  std::size_t best = 0;
  Scored best_score = score(seq, 0);
  for (std::size_t l = 1; l < spec_.num_labels; ++l) {
    Scored s = score(seq, l);
    bool better = s.impossible < best_score.impossible ||
                  (s.impossible == best_score.impossible && s.loglik > best_score.loglik);
    if (better) {
      best = l;
      best_score = s;
    }
  }
  return best;
}

double Grammar::bayes_accuracy() const {
  if (spec_.pair || spec_.insertion_prob.size() != 1)
    throw Error("grammar: closed-form Bayes accuracy needs single mode and one insertion rate");
  const double rho = spec_.insertion_prob[0];
  double none = 0.0;
  for (std::size_t n = spec_.min_len; n <= spec_.max_len; ++n) none += std::pow(1.0 - rho, static_cast<double>(n));
  none /= static_cast<double>(spec_.max_len - spec_.min_len + 1);
  return 1.0 - none * (1.0 - 1.0 / static_cast<double>(spec_.num_labels));
}

std::vector<TokenId> Grammar::seed_phrase(std::size_t label, std::size_t length) const {
  const auto& d = disc_set(label);
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < length; ++i) out.push_back(d[i % d.size()]);
  return out;
}

SyntheticTask make_synthetic_task(const Grammar& grammar, std::size_t shots, std::size_t dev_per_label,
                                  std::size_t test_per_label, std::size_t corpus_size, std::uint64_t seed) {
  if (shots == 0) throw Error("task: shots must be >= 1");
  const auto& spec = grammar.spec();
  SyntheticTask task;
  task.vocab = Vocabulary::synthetic(spec.vocab_size);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> any_label(0, spec.num_labels - 1);

  auto tagged = [](LabeledSequence s, const std::string& source, std::size_t i) {
    s.source = source;
    s.id = source + "-" + std::to_string(i);
    return s;
  };
  for (std::size_t i = 0; i < corpus_size; ++i) {
    auto s = tagged(grammar.sample(any_label(rng), rng), "corpus", i);
    if (spec.pair) task.first_pool.push_back(s.first());
    task.corpus.push_back(std::move(s));
  }
  auto split = [&](Dataset& out, std::size_t per_label, const std::string& name) {
    std::size_t i = 0;
    for (std::size_t l = 0; l < spec.num_labels; ++l)
      for (std::size_t k = 0; k < per_label; ++k) out.push_back(tagged(grammar.sample(l, rng), name, i++));
  };
  split(task.train, shots, "train");
  split(task.dev, dev_per_label, "dev");
  split(task.test, test_per_label, "test");
  return task;
}

}  // namespace fewgen
