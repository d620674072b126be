#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "fewgen/vocab.hpp"

namespace fewgen {

/// A labeled toy language. Template tokens follow a label-independent Markov
/// chain; at each position a token from the label's own discriminative set is
/// inserted instead with probability insertion_prob. In pair mode the second
/// sequence of label 0 also copies tokens of the first with copy_prob.
struct SyntheticTaskSpec {
  std::size_t vocab_size = 64;
  std::size_t num_labels = 2;
  std::size_t template_tokens = 40;
  std::size_t disc_tokens_per_label = 6;
  std::vector<double> insertion_prob{0.15};  // one value, or one per label
  double transition_sharpness = 4.0;         // scale of the Markov logits
  std::size_t min_len = 6;
  std::size_t max_len = 12;
  bool pair = false;
  double copy_prob = 0.5;
  std::uint64_t seed = 1234;

  void validate() const;
  double insertion(std::size_t label) const;
};

class Grammar {
 public:
  explicit Grammar(SyntheticTaskSpec spec);

  const SyntheticTaskSpec& spec() const { return spec_; }
  const std::vector<TokenId>& template_set() const { return templates_; }
  const std::vector<TokenId>& disc_set(std::size_t label) const { return disc_.at(label); }

  /// Single mode: a labeled sequence. Pair mode: a first sequence drawn from
  /// the template chain, then a labeled second sequence.
  LabeledSequence sample(std::size_t label, std::mt19937_64& rng) const;
  std::vector<TokenId> sample_first(std::mt19937_64& rng) const;

  /// log P(tokens | label) up to the label-independent length term;
  /// -infinity when a token is impossible under the label.
  double log_likelihood(const LabeledSequence& seq, std::size_t label) const;
  /// Number of tokens that are impossible under the label.
  std::size_t impossible_tokens(const LabeledSequence& seq, std::size_t label) const;

  /// Posterior argmax under a uniform label prior. Ties go to the lowest label.
  /// When every label is impossible, the label with the fewest impossible
  /// tokens wins, then the highest likelihood of the remaining tokens.
  std::size_t oracle_label(const LabeledSequence& seq) const;

  /// 1 - E[(1 - rho)^n] (1 - 1/L) for single mode with a shared insertion rate.
  double bayes_accuracy() const;

  /// A prefix_len-token phrase built from the label's discriminative tokens.
  std::vector<TokenId> seed_phrase(std::size_t label, std::size_t length) const;

 private:
  std::vector<TokenId> sample_templates(std::mt19937_64& rng, std::size_t n) const;
  struct Scored {
    double loglik = 0.0;
    std::size_t impossible = 0;
  };
  Scored score(const LabeledSequence& seq, std::size_t label) const;

  SyntheticTaskSpec spec_;
  std::vector<TokenId> templates_;
  std::vector<std::vector<TokenId>> disc_;
  std::vector<int> template_index_;      // token -> index in templates_, or -1
  std::vector<int> disc_owner_;          // token -> label, or -1
  std::vector<std::vector<double>> transition_;  // row 0 is the start state
};

struct SyntheticTask {
  Vocabulary vocab;
  Dataset corpus;  // unlabeled use: backbone pretraining
  Dataset train, dev, test;
  std::vector<std::vector<TokenId>> first_pool;  // pair mode: first sequences for generation
};

/// Corpus from the label-marginal grammar (labels uniform); per-label splits.
/// Every sequence gets a unique id.
SyntheticTask make_synthetic_task(const Grammar& grammar, std::size_t shots, std::size_t dev_per_label,
                                  std::size_t test_per_label, std::size_t corpus_size, std::uint64_t seed);

}  // namespace fewgen
