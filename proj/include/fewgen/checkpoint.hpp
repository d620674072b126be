#pragma once

#include <string>

#include "json.hpp"
#include "fewgen/classifier.hpp"
#include "fewgen/model.hpp"

namespace fewgen {

using Json = nlohmann::ordered_json;

/// Single-file checkpoint: one line of JSON (caller metadata plus a
/// "tensors" table of name/shape/trainable) followed by the raw
/// little-endian float64 values of every tensor in table order.
void write_checkpoint(const std::string& path, Json meta, const ParameterSet& params);
ParameterSet read_checkpoint(const std::string& path, Json* meta = nullptr);

Json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& j);

void save_backbone(const std::string& path, const BackboneParams& backbone, const Vocabulary& vocab);
BackboneParams load_backbone(const std::string& path, Vocabulary* vocab = nullptr);

void save_prefix_bank(const std::string& path, const PrefixBank& bank, Json extra = Json::object());
PrefixBank load_prefix_bank(const std::string& path, Json* extra = nullptr);

void save_classifier(const std::string& path, const ClassifierParams& clf);
ClassifierParams load_classifier(const std::string& path);

}  // namespace fewgen
