#include "wdnet/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "wdnet/bridge.hpp"
#include "wdnet/checkpoint.hpp"
#include "wdnet/synth.hpp"

namespace fs = std::filesystem;

namespace wdnet {

nlohmann::ordered_json StepRecord::to_json() const {
  return nlohmann::ordered_json{
      {"step", g_step},        {"d_step", d_step},
      {"loss_d", loss_d},      {"adv_g", adv_g},
      {"content", content.total}, {"l1_y_o", content.l1_y_o},
      {"perceptual", content.perceptual}, {"l1_m", content.l1_m},
      {"l1_w", content.l1_w},  {"l1_alpha", content.l1_alpha}};
}

Trainer::Trainer(const nn::ModelConfig& model_cfg, const TrainConfig& cfg)
    : model_cfg_(model_cfg), cfg_(cfg) {
  Rng rng(Rng::derive(cfg.seed, "init", 0));
  gen_ = std::make_unique<nn::Generator<float>>(model_cfg_, rng);
  disc_ = std::make_unique<nn::Discriminator<float>>(model_cfg_.disc, rng);
  init_optimizers();
}

Trainer::Trainer(const std::string& checkpoint_path, const TrainConfig& cfg)
    : cfg_(cfg) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  model_cfg_ = model_config_from_json(ckpt.meta.at("model"));
  Rng rng(0);
  gen_ = std::make_unique<nn::Generator<float>>(model_cfg_, rng);
  disc_ = std::make_unique<nn::Discriminator<float>>(model_cfg_.disc, rng);
  gen_->params().restore(ckpt.tensors);
  disc_->params().restore(ckpt.tensors);
  init_optimizers();
  const auto& t = ckpt.meta.at("train");
  g_step_ = t.at("g_step").get<long>();
  d_step_ = t.at("d_step").get<long>();
  opt_g_->restore(ckpt.tensors, "opt_g");
  opt_d_->restore(ckpt.tensors, "opt_d");
  opt_g_->set_t(t.at("adam_t_g").get<long>());
  opt_d_->set_t(t.at("adam_t_d").get<long>());
}

void Trainer::init_optimizers() {
  opt_g_ = std::make_unique<nn::Adam<float>>(
      gen_->params().trainable, static_cast<float>(cfg_.lr),
      static_cast<float>(cfg_.beta1), static_cast<float>(cfg_.beta2));
  opt_d_ = std::make_unique<nn::Adam<float>>(
      disc_->params().trainable, static_cast<float>(cfg_.lr),
      static_cast<float>(cfg_.beta1), static_cast<float>(cfg_.beta2));
  if (!cfg_.intermediate_supervision) {
    cfg_.weights.lambda3 = 0.f;
    cfg_.weights.lambda4 = 0.f;
  }
  if (cfg_.weights.lambda2 > 0.f) {
    if (cfg_.perceptual == "vgg16-relu2_2") {
      Checkpoint vgg = load_checkpoint(cfg_.vgg_weights_path);
      extractor_ = nn::FeatureExtractor<float>::from_tensors(vgg.tensors);
    } else {
      throw std::runtime_error(
          "trainer: lambda2 > 0 but perceptual mode is '" + cfg_.perceptual +
          "'; set lambda2 = 0 or perceptual = vgg16-relu2_2 with weights");
    }
  }
}

void Trainer::check_finite(float v, const char* what) const {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string("trainer: non-finite ") + what +
                             " at generator step " + std::to_string(g_step_));
}

nn::BatchTargets<float> Trainer::make_batch(
    const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  int h = samples[0]->x.height(), w = samples[0]->x.width();
  int b = static_cast<int>(samples.size());
  nn::BatchTargets<float> t;
  t.x = nn::Tensor<float>(b, 3, h, w);
  t.y = nn::Tensor<float>(b, 3, h, w);
  t.w = nn::Tensor<float>(b, 3, h, w);
  t.alpha = nn::Tensor<float>(b, 1, h, w);
  t.mask = nn::Tensor<float>(b, 1, h, w);
  for (int i = 0; i < b; ++i) {
    const Sample& s = *samples[i];
    if (s.x.height() != h || s.x.width() != w)
      throw std::invalid_argument("make_batch: mixed sample sizes");
    size_t rgb = static_cast<size_t>(3) * h * w, one = static_cast<size_t>(h) * w;
    std::copy(s.x.data().begin(), s.x.data().end(), t.x.v.begin() + i * rgb);
    std::copy(s.y.data().begin(), s.y.data().end(), t.y.v.begin() + i * rgb);
    std::copy(s.w.data().begin(), s.w.data().end(), t.w.v.begin() + i * rgb);
    std::copy(s.alpha.data().begin(), s.alpha.data().end(),
              t.alpha.v.begin() + i * one);
    std::copy(s.mask.data().begin(), s.mask.data().end(),
              t.mask.v.begin() + i * one);
  }
  return t;
}

std::vector<StepRecord> Trainer::train_cycle(
    const std::function<nn::BatchTargets<float>()>& next_batch) {
  std::vector<StepRecord> records;

  for (int d = 0; d < cfg_.d_steps_per_cycle; ++d) {
    nn::BatchTargets<float> batch = next_batch();
    auto xv = nn::constant(batch.x);
    auto fwd = gen_->forward(xv, /*training=*/false);
    auto fake = nn::detach(fwd.y_out);
    gen_->params().zero_grads();
    disc_->params().zero_grads();
    auto d_real = disc_->forward(xv, nn::constant(batch.y), true);
    auto d_fake = disc_->forward(xv, fake, true);
    auto [loss_d, loss_g_unused] = nn::gan_losses(d_real, d_fake);
    check_finite(loss_d->value.v[0], "discriminator loss");
    nn::backward(loss_d);
    opt_d_->step();
    ++d_step_;
  }

  for (int g = 0; g < cfg_.g_steps_per_cycle; ++g) {
    nn::BatchTargets<float> batch = next_batch();
    auto xv = nn::constant(batch.x);
    gen_->params().zero_grads();
    disc_->params().zero_grads();
    auto fwd = gen_->forward(xv, /*training=*/true);
    auto d_fake = disc_->forward(xv, fwd.y_out, true);
    auto adv_g = nn::scale(nn::mean_log(d_fake), -1.f);
    auto [content, terms] = nn::content_loss(
        fwd, batch, cfg_.weights, extractor_ ? &*extractor_ : nullptr);
    auto total = nn::add(adv_g, content);
    check_finite(total->value.v[0], "generator loss");
    nn::backward(total);
    opt_g_->step();
    ++g_step_;

    StepRecord rec;
    rec.g_step = g_step_;
    rec.d_step = d_step_;
    rec.adv_g = adv_g->value.v[0];
    rec.content = terms;
    rec.loss_d = 0.f;
    records.push_back(rec);
  }
  return records;
}

void Trainer::run(const std::vector<Sample>& data,
                  const std::function<void(const StepRecord&)>& on_record) {
  if (data.empty()) throw std::runtime_error("trainer: empty dataset");
  if (!cfg_.out_dir.empty()) fs::create_directories(cfg_.out_dir);

  std::ofstream log;
  if (!cfg_.out_dir.empty()) {
    log.open(fs::path(cfg_.out_dir) / "train_log.jsonl",
             g_step_ > 0 ? std::ios::app : std::ios::trunc);
  }

  Rng shuffle_rng(Rng::derive(cfg_.seed, "shuffle", 0));
  std::vector<size_t> order(data.size());
  size_t cursor = order.size();  // forces an initial shuffle
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (size_t k = 0; k < order.size(); ++k) order[k] = k;
      for (size_t k = order.size(); k > 1; --k)
        std::swap(order[k - 1],
                  order[shuffle_rng.uniform_int(static_cast<int>(k))]);
      cursor = 0;
    }
    return order[cursor++];
  };
  // fast-forward the data order on resume: one batch per completed step
  for (long b = 0; b < (d_step_ + g_step_) * cfg_.batch; ++b) next_index();
  auto next_batch = [&]() {
    std::vector<const Sample*> picked;
    for (int i = 0; i < cfg_.batch; ++i) picked.push_back(&data[next_index()]);
    return make_batch(picked);
  };

  while (g_step_ < cfg_.total_g_steps) {
    std::vector<StepRecord> records;
    try {
      records = train_cycle(next_batch);
    } catch (const std::exception& ex) {
      if (log.is_open()) {
        log << nlohmann::ordered_json{{"step", g_step_}, {"error", ex.what()}}
            << "\n";
        log.flush();
      }
      throw;
    }
    for (const auto& rec : records) {
      if (log.is_open()) log << rec.to_json().dump() << "\n";
      if (on_record) on_record(rec);
    }
    if (cfg_.checkpoint_every > 0 && !cfg_.out_dir.empty() &&
        g_step_ % cfg_.checkpoint_every < cfg_.g_steps_per_cycle &&
        g_step_ < cfg_.total_g_steps) {
      save((fs::path(cfg_.out_dir) / "checkpoint.bin").string());
    }
  }
  if (!cfg_.out_dir.empty())
    save((fs::path(cfg_.out_dir) / "checkpoint.bin").string());
}

void Trainer::save(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.meta["model"] = model_config_to_json(model_cfg_);
  ckpt.meta["train"] = {{"g_step", g_step_},
                        {"d_step", d_step_},
                        {"adam_t_g", opt_g_->t()},
                        {"adam_t_d", opt_d_->t()}};
  auto add_all = [&](const std::map<std::string, nn::Tensor<float>>& m) {
    for (auto& [k, v] : m) ckpt.tensors[k] = v;
  };
  add_all(gen_->params().snapshot());
  add_all(disc_->params().snapshot());
  add_all(opt_g_->snapshot("opt_g"));
  add_all(opt_d_->snapshot("opt_d"));
  save_checkpoint(path, ckpt);
}

std::vector<Sample> load_split(const std::string& dataset_root,
                               const std::string& split) {
  fs::path dir = fs::path(dataset_root) / split / "watermarked";
  std::vector<Sample> out;
  for (const auto& f : list_pngs(dir.string()))
    out.push_back(load_sample(dataset_root, split, fs::path(f).stem().string()));
  return out;
}

void train(const std::string& dataset_root, const nn::ModelConfig& model_cfg,
           const TrainConfig& cfg) {
  auto data = load_split(dataset_root, "train");
  Trainer trainer(model_cfg, cfg);
  trainer.run(data);
}

}  // namespace wdnet
