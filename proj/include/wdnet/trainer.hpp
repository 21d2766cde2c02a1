#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wdnet/image.hpp"
#include "wdnet/losses.hpp"
#include "wdnet/nets.hpp"

namespace wdnet {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.5, beta2 = 0.999;
  int batch = 6;
  int d_steps_per_cycle = 1;
  int g_steps_per_cycle = 3;
  long total_g_steps = 0;
  uint64_t seed = 0;
  nn::LossWeights<float> weights;
  bool intermediate_supervision = true;  // false forces lambda3 = lambda4 = 0
  std::string perceptual = "disabled";   // or "vgg16-relu2_2"
  std::string vgg_weights_path;
  long checkpoint_every = 0;  // 0: only the final checkpoint
  std::string out_dir;        // checkpoint.bin + train_log.jsonl
};

struct StepRecord {
  long g_step = 0, d_step = 0;
  float loss_d = 0, adv_g = 0;
  nn::ContentLossTerms<float> content;
  nlohmann::ordered_json to_json() const;
};

// One trainer owns all mutable state (weights, optimizers, data order).
class Trainer {
 public:
  Trainer(const nn::ModelConfig& model_cfg, const TrainConfig& cfg);
  // Resumes weights, optimizer state and step counters from a checkpoint.
  Trainer(const std::string& checkpoint_path, const TrainConfig& cfg);

  // One training cycle: d_steps_per_cycle discriminator updates followed by
  // g_steps_per_cycle generator updates, each on a fresh batch.
  std::vector<StepRecord> train_cycle(
      const std::function<nn::BatchTargets<float>()>& next_batch);

  // Runs cycles over the dataset until total_g_steps is reached, logging one
  // record per generator step and checkpointing per config.
  void run(const std::vector<Sample>& data,
           const std::function<void(const StepRecord&)>& on_record = {});

  void save(const std::string& path) const;

  long g_step() const { return g_step_; }
  long d_step() const { return d_step_; }
  nn::Generator<float>& generator() { return *gen_; }
  nn::Discriminator<float>& discriminator() { return *disc_; }

  static nn::BatchTargets<float> make_batch(
      const std::vector<const Sample*>& samples);

 private:
  void init_optimizers();
  void check_finite(float v, const char* what) const;

  nn::ModelConfig model_cfg_;
  TrainConfig cfg_;
  std::unique_ptr<nn::Generator<float>> gen_;
  std::unique_ptr<nn::Discriminator<float>> disc_;
  std::unique_ptr<nn::Adam<float>> opt_g_, opt_d_;
  std::optional<nn::FeatureExtractor<float>> extractor_;
  long g_step_ = 0, d_step_ = 0;
};

// Loads every sample of a split into memory.
std::vector<Sample> load_split(const std::string& dataset_root,
                               const std::string& split);

// Convenience wrapper: trains on `<dataset_root>/train`, writes
// `<out_dir>/checkpoint.bin` and `<out_dir>/train_log.jsonl`.
void train(const std::string& dataset_root, const nn::ModelConfig& model_cfg,
           const TrainConfig& cfg);

}  // namespace wdnet
