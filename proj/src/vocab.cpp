#include "fewgen/vocab.hpp"

#include <algorithm>

namespace fewgen {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kReserved) throw Error("vocabulary needs at least the 4 reserved tokens");
  for (TokenId i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) throw Error("duplicate token: " + tokens_[i]);
  }
}

Vocabulary Vocabulary::synthetic(std::size_t size) {
  std::vector<std::string> t{"<bos>", "<eos>", "<pad>", "<sep>"};
  for (std::size_t i = kReserved; i < size; ++i) t.push_back("w" + std::to_string(i));
  return Vocabulary(std::move(t));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw Error("token id out of range: " + std::to_string(id));
  return tokens_[id];
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw Error("unknown token: " + token);
  return it->second;
}

std::vector<TokenId> LabeledSequence::first() const {
  if (!pair) return tokens;
  return {tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(first_len)};
}

std::vector<TokenId> LabeledSequence::second() const {
  if (!pair) return {};
  return {tokens.begin() + static_cast<std::ptrdiff_t>(first_len) + 1, tokens.end()};
}

LabeledSequence make_single(std::vector<TokenId> tokens, std::size_t label, std::string source) {
  LabeledSequence s;
  s.tokens = std::move(tokens);
  s.label = label;
  s.source = std::move(source);
  return s;
}

LabeledSequence make_pair(const std::vector<TokenId>& first, const std::vector<TokenId>& second,
                          std::size_t label, std::string source) {
  LabeledSequence s;
  s.tokens = first;
  s.tokens.push_back(Vocabulary::kSep);
  s.tokens.insert(s.tokens.end(), second.begin(), second.end());
  s.label = label;
  s.pair = true;
  s.first_len = first.size();
  s.source = std::move(source);
  return s;
}

LabeledSequence with_eos(const LabeledSequence& seq) {
  LabeledSequence s = seq;
  s.tokens.push_back(Vocabulary::kEos);
  return s;
}

void validate(const LabeledSequence& seq, std::size_t vocab_size, std::size_t num_labels,
              std::size_t max_len) {
  const auto n = seq.tokens.size();
  if (n < 1 || n > max_len) {
    throw Error("sequence length " + std::to_string(n) + " outside [1, " + std::to_string(max_len) +
                "]");
  }
  for (auto t : seq.tokens)
    if (t >= vocab_size) throw Error("token id " + std::to_string(t) + " >= vocabulary size");
  if (seq.label >= num_labels) {
    throw Error("label " + std::to_string(seq.label) + " >= label count " +
                std::to_string(num_labels));
  }
  auto seps = std::count(seq.tokens.begin(), seq.tokens.end(), Vocabulary::kSep);
  if (seq.pair) {
    if (seps != 1 || seq.first_len >= n || seq.tokens[seq.first_len] != Vocabulary::kSep)
      throw Error("pair sequence must contain exactly one separator at first_len");
  } else if (seps != 0) {
    throw Error("single sequence contains a separator");
  }
}

}  // namespace fewgen
