#pragma once

#include <memory>
#include <string>

#include "wdnet/checkpoint.hpp"
#include "wdnet/image.hpp"
#include "wdnet/nets.hpp"

namespace wdnet {

struct LoadedGenerator {
  nn::ModelConfig config;
  std::shared_ptr<nn::Generator<float>> gen;
  nlohmann::json meta;
};

LoadedGenerator load_generator(const std::string& checkpoint_path);

struct GenOutput {
  ImageRGB y_out;
  AlphaMatte alpha;   // decomposition variants only
  ImageRGB w;
  BinaryMask m_soft;
  ImageRGB y_pre;
  bool has_decomposition = false;
};

// Single-image inference (eval mode, no gradients kept).
GenOutput run_generator(const nn::Generator<float>& gen, const ImageRGB& x);

}  // namespace wdnet
