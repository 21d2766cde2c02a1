#pragma once

#include <optional>
#include <string>
#include <utility>

#include "wdnet/autodiff.hpp"
#include "wdnet/nets.hpp"

namespace wdnet::nn {

template <typename T>
struct LossWeights {
  T lambda1 = T(50);     // L1 on the merged output
  T lambda2 = T(1e-2);   // perceptual
  T lambda3 = T(10);     // L1 on the mask
  T lambda4 = T(10);     // shared L1 on watermark and alpha
};

// Ground-truth batch as tensors; shapes (b,3,h,w) / (b,1,h,w).
template <typename T>
struct BatchTargets {
  Tensor<T> x, y, w, alpha, mask;
};

// ---------------------------------------------------------------------------
// VGG16 feature stack through relu2_2 for the perceptual term. Weights come
// from a checkpoint-format file (see README); they are frozen, gradients flow
// only through the image input.

template <typename T>
class FeatureExtractor {
 public:
  // conv1_1, conv1_2, pool, conv2_1, conv2_2 (+ relu each)
  static FeatureExtractor with_random_weights(Rng& rng, double stddev = 0.05) {
    FeatureExtractor fe;
    const int chans[4][2] = {{3, 64}, {64, 64}, {64, 128}, {128, 128}};
    for (int i = 0; i < 4; ++i) {
      fe.w_[i] = constant(layers::normal_init<T>(rng, chans[i][1], chans[i][0],
                                                 3, 3, stddev));
      fe.b_[i] = constant(Tensor<T>(1, chans[i][1], 1, 1));
    }
    return fe;
  }

  static FeatureExtractor from_tensors(
      const std::map<std::string, Tensor<float>>& tensors) {
    FeatureExtractor fe;
    const char* names[4] = {"vgg/conv1_1", "vgg/conv1_2", "vgg/conv2_1",
                            "vgg/conv2_2"};
    for (int i = 0; i < 4; ++i) {
      auto wi = tensors.find(std::string(names[i]) + "/w");
      auto bi = tensors.find(std::string(names[i]) + "/b");
      if (wi == tensors.end() || bi == tensors.end())
        throw std::runtime_error(
            std::string("vgg weights: missing tensor for ") + names[i]);
      fe.w_[i] = constant(wi->second.template cast<T>());
      fe.b_[i] = constant(bi->second.template cast<T>());
    }
    return fe;
  }

  // img in [0,1]; standard per-channel normalization, then the conv stack.
  Var<T> features(const Var<T>& img) const {
    static const double mean[3] = {0.485, 0.456, 0.406};
    static const double stdv[3] = {0.229, 0.224, 0.225};
    std::vector<T> scales(img->value.c), shifts(img->value.c);
    for (int c = 0; c < img->value.c; ++c) {
      scales[c] = static_cast<T>(1.0 / stdv[c]);
      shifts[c] = static_cast<T>(-mean[c] / stdv[c]);
    }
    Var<T> h = channel_affine(img, std::move(scales), std::move(shifts));
    h = relu(conv2d(h, w_[0], b_[0], 1, 1));
    h = relu(conv2d(h, w_[1], b_[1], 1, 1));
    h = maxpool2(h);
    h = relu(conv2d(h, w_[2], b_[2], 1, 1));
    h = relu(conv2d(h, w_[3], b_[3], 1, 1));
    return h;
  }

 private:
  Var<T> w_[4], b_[4];
};

// mean |feature(pred) - feature(target)|; target side carries no gradient.
template <typename T>
Var<T> perceptual_loss(const Var<T>& pred, const Tensor<T>& target,
                       const FeatureExtractor<T>& extractor) {
  Var<T> target_feat = extractor.features(constant(target));
  return mean_abs_diff(extractor.features(pred), target_feat->value);
}

// ---------------------------------------------------------------------------

template <typename T>
struct ContentLossTerms {
  T l1_y_o = 0, perceptual = 0, l1_m = 0, l1_w = 0, l1_alpha = 0;
  T total = 0;
};

// total = l1*L1(Y_o) + l2*Lper(Y_o) + l3*L1(M) + l4*(L1(W)+L1(alpha)).
// Terms whose predictions the variant does not produce are skipped; zero
// lambdas skip their term entirely (so the ablation reports exact zeros).
template <typename T>
std::pair<Var<T>, ContentLossTerms<T>> content_loss(
    const WDNetForward<T>& out, const BatchTargets<T>& gt,
    const LossWeights<T>& weights, const FeatureExtractor<T>* extractor) {
  if (!out.y_out->value.same_shape(gt.y))
    throw std::invalid_argument("content_loss: output/target shape mismatch");
  ContentLossTerms<T> terms;
  Var<T> total;
  auto accumulate = [&](Var<T> term, T lambda, T& slot) {
    slot = term->value.v[0];
    Var<T> weighted = scale(term, lambda);
    total = total ? add(total, weighted) : weighted;
  };
  accumulate(mean_abs_diff(out.y_out, gt.y), weights.lambda1, terms.l1_y_o);
  if (weights.lambda2 > T(0)) {
    if (!extractor)
      throw std::runtime_error(
          "content_loss: lambda2 > 0 requires a perceptual extractor; set "
          "lambda2 = 0 or provide VGG weights");
    accumulate(perceptual_loss(out.y_out, gt.y, *extractor), weights.lambda2,
               terms.perceptual);
  }
  if (out.m_hat && weights.lambda3 > T(0))
    accumulate(mean_abs_diff(out.m_hat, gt.mask), weights.lambda3, terms.l1_m);
  if (out.w_hat && weights.lambda4 > T(0)) {
    accumulate(mean_abs_diff(out.w_hat, gt.w), weights.lambda4, terms.l1_w);
    accumulate(mean_abs_diff(out.alpha_hat, gt.alpha), weights.lambda4,
               terms.l1_alpha);
  }
  terms.total = total->value.v[0];
  return {total, terms};
}

// Non-saturating binary cross-entropy on patch scores.
template <typename T>
std::pair<Var<T>, Var<T>> gan_losses(const Var<T>& d_real_scores,
                                     const Var<T>& d_fake_scores) {
  Var<T> loss_d = add(scale(mean_log(d_real_scores), T(-1)),
                      scale(mean_log_one_minus(d_fake_scores), T(-1)));
  Var<T> loss_g = scale(mean_log(d_fake_scores), T(-1));
  return {loss_d, loss_g};
}

// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Var<T>>> params, T lr, T beta1,
       T beta2, T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto& [name, p] : params_) {
      m_.push_back(Tensor<T>::zeros_like(p->value));
      v_.push_back(Tensor<T>::zeros_like(p->value));
    }
  }

  void step() {
    ++t_;
    T bc1 = T(1) - std::pow(b1_, static_cast<T>(t_));
    T bc2 = T(1) - std::pow(b2_, static_cast<T>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      if (p->grad.v.empty()) continue;
      for (size_t k = 0; k < p->value.size(); ++k) {
        T g = p->grad.v[k];
        m_[i].v[k] = b1_ * m_[i].v[k] + (T(1) - b1_) * g;
        v_[i].v[k] = b2_ * v_[i].v[k] + (T(1) - b2_) * g * g;
        T mhat = m_[i].v[k] / bc1;
        T vhat = v_[i].v[k] / bc2;
        p->value.v[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  long t() const { return t_; }
  void set_t(long t) { t_ = t; }

  // moment access for checkpointing, keyed by parameter name
  std::map<std::string, Tensor<float>> snapshot(const std::string& prefix) const {
    std::map<std::string, Tensor<float>> out;
    for (size_t i = 0; i < params_.size(); ++i) {
      out[prefix + "/m/" + params_[i].first] = m_[i].template cast<float>();
      out[prefix + "/v/" + params_[i].first] = v_[i].template cast<float>();
    }
    return out;
  }
  void restore(const std::map<std::string, Tensor<float>>& named,
               const std::string& prefix) {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto mi = named.find(prefix + "/m/" + params_[i].first);
      auto vi = named.find(prefix + "/v/" + params_[i].first);
      if (mi == named.end() || vi == named.end())
        throw std::runtime_error("checkpoint: missing optimizer state for " +
                                 params_[i].first);
      m_[i] = mi->second.template cast<T>();
      v_[i] = vi->second.template cast<T>();
    }
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<Tensor<T>> m_, v_;
  T lr_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace wdnet::nn
