#pragma once

#include <map>
#include <string>

#include "wdnet/nets.hpp"
#include "wdnet/tensor.hpp"

#include <nlohmann/json.hpp>

namespace wdnet {

// Versioned binary container: magic, format version, a JSON metadata blob
// (model config, step counters) and named little-endian float32 tensors.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, nn::Tensor<float>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json model_config_to_json(const nn::ModelConfig& cfg);
nn::ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace wdnet
