#include "fewgen/io.hpp"

#include <fstream>
#include <sstream>

namespace fewgen {

std::string format_dataset(const Dataset& data, const Vocabulary& vocab) {
  std::string out;
  for (const auto& s : data) {
    auto words = [&](const std::vector<TokenId>& ids) {
      Json a = Json::array();
      for (auto t : ids) a.push_back(vocab.token(t));
      return a;
    };
    Json rec;
    rec["text"] = words(s.first());
    if (s.pair) rec["text2"] = words(s.second());
    rec["label"] = s.label;
    rec["source"] = s.source;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void write_dataset(const std::string& path, const Dataset& data, const Vocabulary& vocab) {
  write_file(path, format_dataset(data, vocab));
}

Dataset parse_dataset(const std::string& text, const Vocabulary& vocab, std::size_t num_labels,
                      std::size_t max_len) {
  Dataset out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    try {
      Json rec = Json::parse(line);
      if (!rec.is_object() || !rec.contains("text") || !rec.contains("label"))
        throw Error("record needs text and label");
      auto ids = [&](const Json& a) {
        if (!a.is_array()) throw Error("text fields must be token lists");
        std::vector<TokenId> v;
        for (const auto& w : a) v.push_back(vocab.id(w.get<std::string>()));
        return v;
      };
      if (!rec["label"].is_number_integer() || rec["label"].get<long long>() < 0)
        throw Error("label must be a non-negative integer");
      auto label = rec["label"].get<std::size_t>();
      std::string source = rec.contains("source") ? rec["source"].get<std::string>() : "";
      LabeledSequence s = rec.contains("text2") ? make_pair(ids(rec["text"]), ids(rec["text2"]), label, source)
                                                : make_single(ids(rec["text"]), label, source);
      validate(s, vocab.size(), num_labels, max_len);
      s.id = source + ":" + std::to_string(lineno);
      out.push_back(std::move(s));
    } catch (const Json::exception& e) {
      throw Error(where + "malformed record (" + e.what() + ")");
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
  }
  return out;
}

Dataset load_dataset(const std::string& path, const Vocabulary& vocab, std::size_t num_labels,
                     std::size_t max_len) {
  try {
    return parse_dataset(read_file(path), vocab, num_labels, max_len);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << contents;
  if (!out) throw Error("write failed: " + path);
}

}  // namespace fewgen
