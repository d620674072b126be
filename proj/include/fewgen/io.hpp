#pragma once

#include <string>

#include "fewgen/checkpoint.hpp"
#include "fewgen/vocab.hpp"

namespace fewgen {

/// One JSON record per line: {"text": [...], "text2": [...] (pairs only),
/// "label": int, "source": str}. Tokens are written as strings.
std::string format_dataset(const Dataset& data, const Vocabulary& vocab);
void write_dataset(const std::string& path, const Dataset& data, const Vocabulary& vocab);

/// Parses and validates every record. Errors name the offending line.
Dataset parse_dataset(const std::string& text, const Vocabulary& vocab, std::size_t num_labels,
                      std::size_t max_len);
Dataset load_dataset(const std::string& path, const Vocabulary& vocab, std::size_t num_labels,
                     std::size_t max_len);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace fewgen
