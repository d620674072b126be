#include "fewgen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fewgen {

namespace {

void put_le(std::ostream& os, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_le(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error("checkpoint truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(const std::string& path, Json meta, const ParameterSet& params) {
  Json table = Json::array();
  for (const auto& e : params.entries())
    table.push_back({{"name", e.name}, {"shape", e.value.shape()}, {"trainable", e.trainable}});
  meta["tensors"] = table;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint: " + path);
  os << meta.dump() << '\n';
  for (const auto& e : params.entries())
    for (double v : e.value.values()) put_le(os, v);
  if (!os) throw Error("failed writing checkpoint: " + path);
}

ParameterSet read_checkpoint(const std::string& path, Json* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path);
  std::string header;
  if (!std::getline(is, header)) throw Error("checkpoint has no header: " + path);
  Json j;
  try {
    j = Json::parse(header);
  } catch (const std::exception& e) {
    throw Error("malformed checkpoint header in " + path + ": " + e.what());
  }
  ParameterSet ps;
  for (const auto& t : j.at("tensors")) {
    Shape shape = t.at("shape").get<Shape>();
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = get_le(is);
    ps.add(t.at("name").get<std::string>(), Tensor(shape, std::move(v)), t.at("trainable").get<bool>());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw Error("trailing bytes in checkpoint " + path);
  if (meta) *meta = std::move(j);
  return ps;
}

Json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"layers", c.layers},
          {"heads", c.heads},           {"prefix_len", c.prefix_len}, {"max_len", c.max_len},
          {"ffn_mult", c.ffn_mult}};
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.prefix_len = j.value("prefix_len", c.prefix_len);
  c.max_len = j.value("max_len", c.max_len);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.validate();
  return c;
}

void save_backbone(const std::string& path, const BackboneParams& backbone, const Vocabulary& vocab) {
  Json meta;
  meta["kind"] = "backbone";
  meta["config"] = to_json(backbone.config);
  meta["vocabulary"] = vocab.tokens();
  write_checkpoint(path, std::move(meta), backbone.params);
}

BackboneParams load_backbone(const std::string& path, Vocabulary* vocab) {
  Json meta;
  BackboneParams bp;
  bp.params = read_checkpoint(path, &meta);
  if (meta.value("kind", "") != "backbone") throw Error(path + " is not a backbone checkpoint");
  bp.config = model_config_from_json(meta.at("config"));
  if (vocab) *vocab = Vocabulary(meta.at("vocabulary").get<std::vector<std::string>>());
  return bp;
}

void save_prefix_bank(const std::string& path, const PrefixBank& bank, Json extra) {
  Json meta;
  meta["kind"] = "prefix_bank";
  meta["num_labels"] = bank.num_labels;
  meta["prefix_len"] = bank.prefix_len;
  meta["layers"] = bank.layers;
  meta["has_infix"] = bank.has_infix;
  meta["extra"] = std::move(extra);
  write_checkpoint(path, std::move(meta), bank.params);
}

PrefixBank load_prefix_bank(const std::string& path, Json* extra) {
  Json meta;
  PrefixBank bank;
  bank.params = read_checkpoint(path, &meta);
  if (meta.value("kind", "") != "prefix_bank") throw Error(path + " is not a prefix-bank checkpoint");
  bank.num_labels = meta.at("num_labels").get<std::size_t>();
  bank.prefix_len = meta.at("prefix_len").get<std::size_t>();
  bank.layers = meta.at("layers").get<std::size_t>();
  bank.has_infix = meta.at("has_infix").get<bool>();
  if (extra) *extra = meta.at("extra");
  return bank;
}

void save_classifier(const std::string& path, const ClassifierParams& clf) {
  Json meta;
  meta["kind"] = "classifier";
  meta["config"] = to_json(clf.config);
  meta["num_labels"] = clf.num_labels;
  write_checkpoint(path, std::move(meta), clf.params);
}

ClassifierParams load_classifier(const std::string& path) {
  Json meta;
  ClassifierParams clf;
  clf.params = read_checkpoint(path, &meta);
  if (meta.value("kind", "") != "classifier") throw Error(path + " is not a classifier checkpoint");
  clf.config = model_config_from_json(meta.at("config"));
  clf.num_labels = meta.at("num_labels").get<std::size_t>();
  return clf;
}

}  // namespace fewgen
