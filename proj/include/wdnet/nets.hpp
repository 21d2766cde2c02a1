#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wdnet/autodiff.hpp"
#include "wdnet/rng.hpp"

namespace wdnet::nn {

enum class Norm { instance, batch, none };

inline const char* to_string(Norm n) {
  switch (n) {
    case Norm::instance: return "instance";
    case Norm::batch: return "batch";
    default: return "none";
  }
}
inline Norm norm_from_string(const std::string& s) {
  if (s == "instance") return Norm::instance;
  if (s == "batch") return Norm::batch;
  if (s == "none") return Norm::none;
  throw std::invalid_argument("unknown normalization kind: " + s);
}

enum class GeneratorVariant { baseline, decompnet, full };

inline const char* to_string(GeneratorVariant v) {
  switch (v) {
    case GeneratorVariant::baseline: return "baseline";
    case GeneratorVariant::decompnet: return "decompnet";
    default: return "full";
  }
}
inline GeneratorVariant variant_from_string(const std::string& s) {
  if (s == "baseline") return GeneratorVariant::baseline;
  if (s == "decompnet") return GeneratorVariant::decompnet;
  if (s == "full") return GeneratorVariant::full;
  throw std::invalid_argument("unknown generator variant: " + s);
}

struct DecompNetConfig {
  int depth = 4;            // N downsampling layers
  double mult = 1.0;        // channel multiplier; 0.25 for the tiny model
  Norm norm = Norm::instance;
};

struct RefineNetConfig {
  int blocks = 3;
  int width = 180;
  Norm norm = Norm::instance;
};

struct DiscriminatorConfig {
  double mult = 1.0;
  Norm norm = Norm::instance;
};

struct ModelConfig {
  GeneratorVariant variant = GeneratorVariant::full;
  DecompNetConfig decomp;
  RefineNetConfig refine;
  DiscriminatorConfig disc;
};

inline int scaled_channels(double mult, int base) {
  return std::max(1, static_cast<int>(std::lround(mult * base)));
}
// encoder layer i (1-based) has 2^(5+i) channels, decoder layer j 2^(10-j)
inline int encoder_channels(const DecompNetConfig& c, int i) {
  return scaled_channels(c.mult, 1 << (5 + i));
}
inline int decoder_channels(const DecompNetConfig& c, int j) {
  return scaled_channels(c.mult, 1 << (10 - j));
}
inline int feature_channels(const DecompNetConfig& c) {
  return decoder_channels(c, c.depth);  // 64 at mult 1, depth 4
}

// ---------------------------------------------------------------------------

template <typename T>
struct Params {
  std::vector<std::pair<std::string, Var<T>>> trainable;
  std::vector<std::pair<std::string, Var<T>>> buffers;

  Var<T> add(const std::string& name, Tensor<T> t) {
    auto v = leaf(std::move(t));
    trainable.emplace_back(name, v);
    return v;
  }
  Var<T> add_buffer(const std::string& name, Tensor<T> t) {
    auto v = constant(std::move(t));
    buffers.emplace_back(name, v);
    return v;
  }

  void append(const Params& other) {
    trainable.insert(trainable.end(), other.trainable.begin(),
                     other.trainable.end());
    buffers.insert(buffers.end(), other.buffers.begin(), other.buffers.end());
  }

  void zero_grads() {
    for (auto& [name, p] : trainable) p->zero_grad();
  }

  std::map<std::string, Tensor<float>> snapshot() const {
    std::map<std::string, Tensor<float>> out;
    for (auto& [name, p] : trainable)
      out[name] = p->value.template cast<float>();
    for (auto& [name, p] : buffers)
      out[name] = p->value.template cast<float>();
    return out;
  }

  void restore(const std::map<std::string, Tensor<float>>& named) {
    auto assign = [&](const std::string& name, Var<T>& p) {
      auto it = named.find(name);
      if (it == named.end())
        throw std::runtime_error("checkpoint is missing parameter: " + name);
      Tensor<T> t = it->second.template cast<T>();
      if (!t.same_shape(p->value))
        throw std::runtime_error("checkpoint shape mismatch for " + name +
                                 ": " + t.shape_str() + " vs " +
                                 p->value.shape_str());
      p->value = std::move(t);
    };
    for (auto& [name, p] : trainable) assign(name, p);
    for (auto& [name, p] : buffers) assign(name, p);
  }
};

namespace layers {

template <typename T>
Tensor<T> normal_init(Rng& rng, int n, int c, int h, int w, double stddev) {
  Tensor<T> t(n, c, h, w);
  for (auto& v : t.v) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
struct Conv {
  Var<T> w, b;
  int stride = 1, pad = 0;
  bool transposed = false;

  Var<T> operator()(const Var<T>& x) const {
    return transposed ? conv_transpose2d(x, w, b, stride, pad)
                      : conv2d(x, w, b, stride, pad);
  }
};

template <typename T>
Conv<T> make_conv(Params<T>& ps, const std::string& name, Rng& rng, int cin,
                  int cout, int k, int stride, int pad) {
  Conv<T> c;
  c.w = ps.add(name + "/w", normal_init<T>(rng, cout, cin, k, k, 0.02));
  c.b = ps.add(name + "/b", Tensor<T>(1, cout, 1, 1));
  c.stride = stride;
  c.pad = pad;
  return c;
}

template <typename T>
Conv<T> make_deconv(Params<T>& ps, const std::string& name, Rng& rng, int cin,
                    int cout, int k, int stride, int pad) {
  Conv<T> c;
  c.w = ps.add(name + "/w", normal_init<T>(rng, cin, cout, k, k, 0.02));
  c.b = ps.add(name + "/b", Tensor<T>(1, cout, 1, 1));
  c.stride = stride;
  c.pad = pad;
  c.transposed = true;
  return c;
}

template <typename T>
struct NormOp {
  Norm kind = Norm::none;
  Var<T> running_mean, running_var;  // batch kind only
  T momentum = T(0.1);
  T eps = T(1e-5);

  Var<T> operator()(const Var<T>& x, bool training) const {
    switch (kind) {
      case Norm::none:
        return x;
      case Norm::instance:
        return normalize(x, NormStat::per_instance, eps);
      case Norm::batch:
        if (training) {
          update_running_stats(x->value);
          return normalize(x, NormStat::per_batch, eps);
        } else {
          std::vector<T> scales(x->value.c), shifts(x->value.c);
          for (int c = 0; c < x->value.c; ++c) {
            T s = T(1) / std::sqrt(running_var->value.v[c] + eps);
            scales[c] = s;
            shifts[c] = -running_mean->value.v[c] * s;
          }
          return channel_affine(x, std::move(scales), std::move(shifts));
        }
    }
    return x;
  }

  void update_running_stats(const Tensor<T>& x) const {
    size_t per_c = static_cast<size_t>(x.n) * x.h * x.w;
    for (int c = 0; c < x.c; ++c) {
      T mean = T(0), var = T(0);
      for (int in = 0; in < x.n; ++in) {
        const T* p = x.data() +
                     (static_cast<size_t>(in) * x.c + c) *
                         (static_cast<size_t>(x.h) * x.w);
        for (size_t i = 0; i < static_cast<size_t>(x.h) * x.w; ++i) mean += p[i];
      }
      mean /= static_cast<T>(per_c);
      for (int in = 0; in < x.n; ++in) {
        const T* p = x.data() +
                     (static_cast<size_t>(in) * x.c + c) *
                         (static_cast<size_t>(x.h) * x.w);
        for (size_t i = 0; i < static_cast<size_t>(x.h) * x.w; ++i) {
          T d = p[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<T>(per_c);
      running_mean->value.v[c] =
          (T(1) - momentum) * running_mean->value.v[c] + momentum * mean;
      running_var->value.v[c] =
          (T(1) - momentum) * running_var->value.v[c] + momentum * var;
    }
  }
};

template <typename T>
NormOp<T> make_norm(Params<T>& ps, const std::string& name, Norm kind,
                    int channels) {
  NormOp<T> n;
  n.kind = kind;
  if (kind == Norm::batch) {
    n.running_mean = ps.add_buffer(name + "/running_mean",
                                   Tensor<T>(1, channels, 1, 1));
    n.running_var = ps.add_buffer(name + "/running_var",
                                  Tensor<T>::full(1, channels, 1, 1, T(1)));
  }
  return n;
}

}  // namespace layers

// ---------------------------------------------------------------------------
// DecompNet: U-Net with three sigmoid heads (alpha, W, M) and the 64-channel
// feature map feeding RefineNet. In baseline mode a single 3-channel head
// replaces the three.

template <typename T>
struct DecompOut {
  Var<T> alpha, w, m, fu;
  Var<T> baseline_y;  // baseline variant only
};

template <typename T>
class DecompNet {
 public:
  DecompNet(const DecompNetConfig& cfg, bool baseline_head, Rng& rng,
            const std::string& prefix = "decomp")
      : cfg_(cfg), baseline_head_(baseline_head) {
    int n = cfg.depth;
    int prev = 3;
    for (int i = 1; i <= n; ++i) {
      int ch = encoder_channels(cfg, i);
      enc_.push_back(layers::make_conv(params_, prefix + "/enc" +
                                                    std::to_string(i),
                                       rng, prev, ch, 4, 2, 1));
      enc_norm_.push_back(
          i == 1 ? layers::NormOp<T>{}  // first layer carries no norm
                 : layers::make_norm(params_,
                                     prefix + "/enc" + std::to_string(i),
                                     cfg.norm, ch));
      prev = ch;
    }
    for (int j = 1; j <= n; ++j) {
      int ch = decoder_channels(cfg, j);
      int cin = (j == 1) ? encoder_channels(cfg, n)
                         : decoder_channels(cfg, j - 1) +
                               encoder_channels(cfg, n - j + 1);
      dec_.push_back(layers::make_deconv(params_, prefix + "/dec" +
                                                      std::to_string(j),
                                         rng, cin, ch, 4, 2, 1));
      dec_norm_.push_back(layers::make_norm(
          params_, prefix + "/dec" + std::to_string(j), cfg.norm, ch));
    }
    int fu = feature_channels(cfg);
    if (baseline_head_) {
      head_y_ = layers::make_conv(params_, prefix + "/head_y", rng, fu, 3, 1,
                                  1, 0);
    } else {
      head_alpha_ = layers::make_conv(params_, prefix + "/head_alpha", rng, fu,
                                      1, 1, 1, 0);
      head_w_ =
          layers::make_conv(params_, prefix + "/head_w", rng, fu, 3, 1, 1, 0);
      head_m_ =
          layers::make_conv(params_, prefix + "/head_m", rng, fu, 1, 1, 1, 0);
    }
  }

  DecompOut<T> forward(const Var<T>& x, bool training) const {
    int div = 1 << cfg_.depth;
    if (x->value.h % div != 0 || x->value.w % div != 0)
      throw std::invalid_argument(
          "decompnet: spatial dims must be divisible by 2^depth");
    std::vector<Var<T>> skips;
    Var<T> h = x;
    for (size_t i = 0; i < enc_.size(); ++i) {
      h = enc_[i](h);
      h = enc_norm_[i](h, training);
      h = leaky_relu(h, T(0.2));
      skips.push_back(h);
    }
    for (size_t j = 0; j < dec_.size(); ++j) {
      Var<T> in = (j == 0) ? h : concat_c(h, skips[skips.size() - 1 - j]);
      h = dec_[j](in);
      h = dec_norm_[j](h, training);
      h = relu(h);
    }
    DecompOut<T> out;
    out.fu = h;
    if (baseline_head_) {
      out.baseline_y = sigmoid(head_y_(h));
    } else {
      out.alpha = sigmoid(head_alpha_(h));
      out.w = sigmoid(head_w_(h));
      out.m = sigmoid(head_m_(h));
    }
    return out;
  }

  Params<T>& params() { return params_; }
  const DecompNetConfig& config() const { return cfg_; }

 private:
  DecompNetConfig cfg_;
  bool baseline_head_;
  Params<T> params_;
  std::vector<layers::Conv<T>> enc_, dec_;
  std::vector<layers::NormOp<T>> enc_norm_, dec_norm_;
  layers::Conv<T> head_alpha_, head_w_, head_m_, head_y_;
};

// ---------------------------------------------------------------------------
// RefineNet: stem conv to `width` channels, residual blocks with additive
// skips, sigmoid head back to RGB.

template <typename T>
class RefineNet {
 public:
  RefineNet(const RefineNetConfig& cfg, int in_channels, Rng& rng,
            const std::string& prefix = "refine")
      : cfg_(cfg) {
    stem_ = layers::make_conv(params_, prefix + "/stem", rng, in_channels,
                              cfg.width, 3, 1, 1);
    stem_norm_ = layers::make_norm(params_, prefix + "/stem", cfg.norm,
                                   cfg.width);
    for (int b = 0; b < cfg.blocks; ++b) {
      std::string base = prefix + "/block" + std::to_string(b + 1);
      block_conv1_.push_back(layers::make_conv(params_, base + "/conv1", rng,
                                               cfg.width, cfg.width, 3, 1, 1));
      block_norm1_.push_back(
          layers::make_norm(params_, base + "/conv1", cfg.norm, cfg.width));
      block_conv2_.push_back(layers::make_conv(params_, base + "/conv2", rng,
                                               cfg.width, cfg.width, 3, 1, 1));
      block_norm2_.push_back(
          layers::make_norm(params_, base + "/conv2", cfg.norm, cfg.width));
    }
    head_ = layers::make_conv(params_, prefix + "/head", rng, cfg.width, 3, 3,
                              1, 1);
  }

  Var<T> forward(const Var<T>& y_pre_masked, const Var<T>& fu,
                 bool training) const {
    if (y_pre_masked->value.h != fu->value.h ||
        y_pre_masked->value.w != fu->value.w ||
        y_pre_masked->value.n != fu->value.n)
      throw std::invalid_argument("refinenet: input dims mismatch");
    Var<T> h = concat_c(y_pre_masked, fu);
    h = relu(stem_norm_(stem_(h), training));
    for (size_t b = 0; b < block_conv1_.size(); ++b) {
      Var<T> r = relu(block_norm1_[b](block_conv1_[b](h), training));
      r = block_norm2_[b](block_conv2_[b](r), training);
      h = relu(add(h, r));
    }
    return sigmoid(head_(h));
  }

  Params<T>& params() { return params_; }
  const RefineNetConfig& config() const { return cfg_; }

 private:
  RefineNetConfig cfg_;
  Params<T> params_;
  layers::Conv<T> stem_, head_;
  layers::NormOp<T> stem_norm_;
  std::vector<layers::Conv<T>> block_conv1_, block_conv2_;
  std::vector<layers::NormOp<T>> block_norm1_, block_norm2_;
};

// ---------------------------------------------------------------------------
// Patch discriminator on concat(watermarked, candidate).

template <typename T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, Rng& rng,
                const std::string& prefix = "disc")
      : cfg_(cfg) {
    const int bases[4] = {64, 128, 256, 512};
    const int strides[4] = {2, 2, 2, 1};
    int prev = 6;
    for (int i = 0; i < 4; ++i) {
      int ch = scaled_channels(cfg.mult, bases[i]);
      convs_.push_back(layers::make_conv(params_, prefix + "/conv" +
                                                      std::to_string(i + 1),
                                         rng, prev, ch, 4, strides[i], 1));
      norms_.push_back(i == 0 ? layers::NormOp<T>{}
                              : layers::make_norm(params_,
                                                  prefix + "/conv" +
                                                      std::to_string(i + 1),
                                                  cfg.norm, ch));
      prev = ch;
    }
    head_ = layers::make_conv(params_, prefix + "/head", rng, prev, 1, 4, 1, 1);
  }

  // one sigmoid score per patch
  Var<T> forward(const Var<T>& x, const Var<T>& candidate,
                 bool training) const {
    if (!x->value.same_shape(candidate->value))
      throw std::invalid_argument("discriminator: input dims mismatch");
    Var<T> h = concat_c(x, candidate);
    for (size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i](h);
      h = norms_[i](h, training);
      h = leaky_relu(h, T(0.2));
    }
    return sigmoid(head_(h));
  }

  Params<T>& params() { return params_; }
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  Params<T> params_;
  std::vector<layers::Conv<T>> convs_;
  std::vector<layers::NormOp<T>> norms_;
  layers::Conv<T> head_;
};

// ---------------------------------------------------------------------------
// Full generator: DecompNet + decomposition merge + RefineNet (Fig. 3 wiring).

template <typename T>
struct WDNetForward {
  Var<T> alpha_hat, w_hat, m_hat;
  Var<T> y_pre, y_pre_masked, y_refined, y_out, f_u;

  bool all_finite() const {
    for (const Var<T>* v :
         {&alpha_hat, &w_hat, &m_hat, &y_pre, &y_pre_masked, &y_refined,
          &y_out, &f_u})
      if (*v && !(*v)->value.all_finite()) return false;
    return true;
  }
};

template <typename T>
class Generator {
 public:
  Generator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    decomp_ = std::make_unique<DecompNet<T>>(
        cfg.decomp, cfg.variant == GeneratorVariant::baseline, rng);
    params_.append(decomp_->params());
    if (cfg.variant == GeneratorVariant::full) {
      refine_ = std::make_unique<RefineNet<T>>(
          cfg.refine, 3 + feature_channels(cfg.decomp), rng);
      params_.append(refine_->params());
    }
  }

  WDNetForward<T> forward(const Var<T>& x, bool training) const {
    WDNetForward<T> out;
    DecompOut<T> d = decomp_->forward(x, training);
    out.f_u = d.fu;
    if (cfg_.variant == GeneratorVariant::baseline) {
      out.y_out = d.baseline_y;
      return out;
    }
    out.alpha_hat = d.alpha;
    out.w_hat = d.w;
    out.m_hat = d.m;
    // Eq. 2 with the alpha clamped away from 1 so the denominator stays sane
    Var<T> alpha_c = clamp_above(out.alpha_hat, T(1) - T(1e-6));
    Var<T> num = sub(x, mul(alpha_c, out.w_hat));
    Var<T> den = clamp_below(one_minus(alpha_c), T(1e-6));
    out.y_pre = clamp01(div(num, den));
    out.y_pre_masked = mul(out.m_hat, out.y_pre);
    if (cfg_.variant == GeneratorVariant::full) {
      out.y_refined = refine_->forward(out.y_pre_masked, out.f_u, training);
      out.y_out = merge(out.y_refined, x, out.m_hat);
    } else {
      out.y_out = merge(out.y_pre, x, out.m_hat);
    }
    return out;
  }

  // Eq. 3: M*Y + (1-M)*X, same arithmetic as imaging-core merge_masked
  static Var<T> merge(const Var<T>& y, const Var<T>& x, const Var<T>& m) {
    return add(mul(m, y), mul(one_minus(m), x));
  }

  Params<T>& params() { return params_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Params<T> params_;
  std::unique_ptr<DecompNet<T>> decomp_;
  std::unique_ptr<RefineNet<T>> refine_;
};

}  // namespace wdnet::nn
