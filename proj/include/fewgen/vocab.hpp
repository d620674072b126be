#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "fewgen/tensor.hpp"

namespace fewgen {

using TokenId = std::size_t;

/// Token strings indexed 0..V-1. The first four indices are reserved.
class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kSep = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  /// "<bos>", "<eos>", "<pad>", "<sep>", then "w4" ... "w{V-1}".
  static Vocabulary synthetic(std::size_t size);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  TokenId id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// A token sequence with a label. In pair mode the tokens are x1, <sep>, x2
/// and first_len is |x1|.
struct LabeledSequence {
  std::vector<TokenId> tokens;
  std::size_t label = 0;
  bool pair = false;
  std::size_t first_len = 0;
  std::string source;  // provenance tag written to dataset files
  std::string id;      // unique within an experiment; not serialized

  /// Positions whose target is conditioning text (x1 and the separator).
  bool excluded(std::size_t position) const { return pair && position <= first_len; }
  std::vector<TokenId> first() const;
  std::vector<TokenId> second() const;

  bool operator==(const LabeledSequence& o) const {
    return tokens == o.tokens && label == o.label && pair == o.pair && first_len == o.first_len &&
           source == o.source;
  }
};

LabeledSequence make_single(std::vector<TokenId> tokens, std::size_t label, std::string source = "");
LabeledSequence make_pair(const std::vector<TokenId>& first, const std::vector<TokenId>& second,
                          std::size_t label, std::string source = "");

/// Appends <eos>; the generator is trained to emit it.
LabeledSequence with_eos(const LabeledSequence& seq);

/// Checks the sequence invariants against a vocabulary size, label count and
/// maximum length. Throws Error describing the first violation.
void validate(const LabeledSequence& seq, std::size_t vocab_size, std::size_t num_labels,
              std::size_t max_len);

using Dataset = std::vector<LabeledSequence>;

}  // namespace fewgen
