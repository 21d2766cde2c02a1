#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "wdnet/bridge.hpp"
#include "wdnet/checkpoint.hpp"
#include "wdnet/losses.hpp"
#include "wdnet/nets.hpp"

using namespace wdnet;
using namespace wdnet::nn;

namespace {

template <typename T>
Tensor<T> random_tensor(int n, int c, int h, int w, Rng& rng, double lo = 0.0,
                        double hi = 1.0) {
  Tensor<T> t(n, c, h, w);
  for (auto& v : t.v) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// micro config in double precision for finite differences
ModelConfig micro_model() {
  ModelConfig mc;
  mc.variant = GeneratorVariant::full;
  mc.decomp.depth = 2;
  mc.decomp.mult = 1.0 / 32.0;
  mc.decomp.norm = Norm::instance;
  mc.refine.blocks = 1;
  mc.refine.width = 4;
  mc.refine.norm = Norm::instance;
  mc.disc.mult = 1.0 / 32.0;
  mc.disc.norm = Norm::instance;
  return mc;
}

}  // namespace

TEST_CASE("channel schedules match the defaults") {
  DecompNetConfig d;  // depth 4, mult 1
  CHECK(encoder_channels(d, 1) == 64);
  CHECK(encoder_channels(d, 2) == 128);
  CHECK(encoder_channels(d, 3) == 256);
  CHECK(encoder_channels(d, 4) == 512);
  CHECK(decoder_channels(d, 1) == 512);
  CHECK(decoder_channels(d, 4) == 64);
  CHECK(feature_channels(d) == 64);
  RefineNetConfig r;
  CHECK(r.width == 180);
  CHECK(r.blocks == 3);
}

TEST_CASE("init statistics: normal(0, 0.02), zero biases, deterministic") {
  Rng rng(71);
  Tensor<float> w = layers::normal_init<float>(rng, 50, 50, 5, 8, 0.02);
  REQUIRE(w.size() == 100000);
  double mean = 0, var = 0;
  for (float v : w.v) mean += v;
  mean /= w.size();
  for (float v : w.v) var += (v - mean) * (v - mean);
  double sd = std::sqrt(var / w.size());
  CHECK(sd > 0.018);
  CHECK(sd < 0.022);

  Rng r1(5), r2(5);
  Generator<float> g1(testsup::tiny_model(), r1);
  Generator<float> g2(testsup::tiny_model(), r2);
  auto s1 = g1.params().snapshot(), s2 = g2.params().snapshot();
  REQUIRE(s1.size() == s2.size());
  for (auto& [name, t] : s1) {
    CHECK(t.v == s2.at(name).v);
    if (name.ends_with("/b"))
      for (float v : t.v) CHECK(v == 0.f);
  }
}

TEST_CASE("wdnet forward shape and range contracts") {
  Rng rng(72);
  Generator<float> gen(testsup::tiny_model(), rng);
  Rng drng(73);
  auto x = constant(random_tensor<float>(2, 3, 32, 32, drng));
  WDNetForward<float> out = gen.forward(x, false);
  REQUIRE(out.alpha_hat);
  CHECK(out.alpha_hat->value.n == 2);
  CHECK(out.alpha_hat->value.c == 1);
  CHECK(out.alpha_hat->value.h == 32);
  CHECK(out.alpha_hat->value.w == 32);
  CHECK(out.w_hat->value.c == 3);
  CHECK(out.m_hat->value.c == 1);
  CHECK(out.y_out->value.c == 3);
  CHECK(out.f_u->value.c == feature_channels(gen.config().decomp));
  CHECK(out.all_finite());
  for (float v : out.alpha_hat->value.v) {
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }
  for (float v : out.m_hat->value.v) {
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }
  for (float v : out.y_out->value.v) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
}

TEST_CASE("all-zero input stays finite with sigmoid-bounded heads") {
  Rng rng(74);
  Generator<float> gen(testsup::tiny_model(), rng);
  auto x = constant(Tensor<float>(1, 3, 16, 16));
  WDNetForward<float> out = gen.forward(x, false);
  CHECK(out.all_finite());
  for (float v : out.alpha_hat->value.v) {
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }
}

TEST_CASE("indivisible dims rejected before compute") {
  Rng rng(75);
  Generator<float> gen(testsup::tiny_model(), rng);  // depth 3 -> divisor 8
  auto x = constant(Tensor<float>(1, 3, 20, 16));
  CHECK_THROWS_AS(gen.forward(x, false), std::invalid_argument);
}

TEST_CASE("forward finite over many random seeds") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    ModelConfig mc = micro_model();
    Generator<float> gen(mc, rng);
    Rng drng(seed + 1000);
    auto x = constant(random_tensor<float>(1, 3, 8, 8, drng));
    CHECK(gen.forward(x, false).all_finite());
  }
}

TEST_CASE("reconstruction identity is bitwise") {
  Rng rng(76);
  Generator<float> gen(testsup::tiny_model(), rng);
  Rng drng(77);
  auto x = constant(random_tensor<float>(1, 3, 32, 32, drng));
  WDNetForward<float> out = gen.forward(x, false);

  ImageRGB x_img = tensor_to_image(x->value);
  ImageRGB y_ref = tensor_to_image(out.y_refined->value);
  BinaryMask m = tensor_to_mask(out.m_hat->value);
  ImageRGB merged = merge_masked(y_ref, x_img, m);
  Tensor<float> merged_t = image_to_tensor<float>(merged);
  REQUIRE(merged_t.size() == out.y_out->value.size());
  for (size_t i = 0; i < merged_t.size(); ++i)
    CHECK(merged_t.v[i] == out.y_out->value.v[i]);  // bitwise
}

TEST_CASE("merge with a zero mask returns x exactly") {
  Rng rng(78);
  auto x = constant(random_tensor<float>(1, 3, 8, 8, rng));
  auto y = constant(random_tensor<float>(1, 3, 8, 8, rng));
  auto m = constant(Tensor<float>(1, 1, 8, 8));
  auto out = Generator<float>::merge(y, x, m);
  for (size_t i = 0; i < x->value.size(); ++i)
    CHECK(out->value.v[i] == x->value.v[i]);
}

TEST_CASE("baseline and decompnet variants honor the contracts") {
  Rng rng(79);
  Generator<float> base(testsup::tiny_model(GeneratorVariant::baseline), rng);
  Rng drng(80);
  auto x = constant(random_tensor<float>(1, 3, 16, 16, drng));
  WDNetForward<float> bo = base.forward(x, false);
  CHECK(!bo.alpha_hat);
  CHECK(bo.y_out->value.c == 3);
  CHECK(bo.y_out->value.h == 16);
  for (float v : bo.y_out->value.v) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }

  Rng rng2(81);
  Generator<float> dec(testsup::tiny_model(GeneratorVariant::decompnet), rng2);
  WDNetForward<float> dout = dec.forward(x, false);
  REQUIRE(dout.alpha_hat);
  CHECK(!dout.y_refined);
  CHECK(dout.y_out->value.same_shape(x->value));
}

TEST_CASE("refinenet zeroed residual block is the identity") {
  RefineNetConfig two;
  two.blocks = 2;
  two.width = 8;
  two.norm = Norm::instance;
  Rng rng(82);
  RefineNet<float> net2(two, 7, rng);
  // zero the second block so it must act as identity
  for (auto& [name, p] : net2.params().trainable)
    if (name.find("block2") != std::string::npos)
      std::fill(p->value.v.begin(), p->value.v.end(), 0.f);

  RefineNetConfig one = two;
  one.blocks = 1;
  Rng rng2(83);
  RefineNet<float> net1(one, 7, rng2);
  net1.params().restore(net2.params().snapshot());  // shared names line up

  Rng drng(84);
  auto y = constant(random_tensor<float>(1, 3, 16, 16, drng));
  auto fu = constant(random_tensor<float>(1, 4, 16, 16, drng));
  auto o2 = net2.forward(y, fu, false);
  auto o1 = net1.forward(y, fu, false);
  for (size_t i = 0; i < o1->value.size(); ++i)
    CHECK(o2->value.v[i] == doctest::Approx(o1->value.v[i]).epsilon(1e-6));
}

TEST_CASE("discriminator is patch-based with sigmoid scores") {
  DiscriminatorConfig dc;
  dc.mult = 0.125;
  Rng rng(85);
  Discriminator<float> disc(dc, rng);
  Rng drng(86);
  auto x = constant(random_tensor<float>(1, 3, 64, 64, drng));
  auto cand = constant(random_tensor<float>(1, 3, 64, 64, drng));
  auto scores = disc.forward(x, cand, false);
  CHECK(scores->value.c == 1);
  CHECK(scores->value.h > 1);
  CHECK(scores->value.w > 1);
  for (float v : scores->value.v) {
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }
  CHECK_THROWS_AS(
      disc.forward(x, constant(Tensor<float>(1, 3, 32, 32)), false),
      std::invalid_argument);
}

TEST_CASE("discriminator scores shift with the input (norm = none)") {
  DiscriminatorConfig dc;
  dc.mult = 0.125;
  dc.norm = Norm::none;  // instance norm is not shift-equivariant
  Rng rng(87);
  Discriminator<float> disc(dc, rng);

  // zero background, content patch far from every border
  const int hw = 256, patch = 32, off_a = 112, off_b = 120;  // 8 px shift
  Rng drng(88);
  Tensor<float> content = random_tensor<float>(1, 3, patch, patch, drng);
  auto embed = [&](int col0) {
    Tensor<float> t(1, 3, hw, hw);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < patch; ++r)
        for (int cc = 0; cc < patch; ++cc)
          t.v[(static_cast<size_t>(c) * hw + 112 + r) * hw + col0 + cc] =
              content.v[(static_cast<size_t>(c) * patch + r) * patch + cc];
    return constant(t);
  };
  auto za = embed(off_a), zb = embed(off_b);
  auto sa = disc.forward(za, za, false);
  auto sb = disc.forward(zb, zb, false);
  // patch stride is 8, so an 8 px shift moves scores one column right
  int W = sa->value.w;
  REQUIRE(sb->value.w == W);
  for (int i = 10; i <= 20; ++i)
    for (int j = 10; j <= 20; ++j) {
      float a = sa->value.v[static_cast<size_t>(i) * W + (j - 1)];
      float b = sb->value.v[static_cast<size_t>(i) * W + j];
      CHECK(b == doctest::Approx(a).epsilon(1e-4));
    }
}

TEST_CASE("checkpoint round trip restores the model bitwise") {
  std::string dir = testsup::scratch_dir("nets_ckpt");
  Rng rng(89);
  ModelConfig mc = testsup::tiny_model();
  Generator<float> gen(mc, rng);

  Checkpoint ckpt;
  ckpt.meta["model"] = model_config_to_json(mc);
  ckpt.meta["train"] = {{"g_step", 7}, {"d_step", 3}};
  ckpt.tensors = gen.params().snapshot();
  save_checkpoint(dir + "/c.bin", ckpt);

  Checkpoint back = load_checkpoint(dir + "/c.bin");
  CHECK(back.meta.at("train").at("g_step") == 7);
  ModelConfig mc2 = model_config_from_json(back.meta.at("model"));
  CHECK(mc2.decomp.depth == mc.decomp.depth);
  CHECK(mc2.refine.width == mc.refine.width);
  CHECK(to_string(mc2.variant) == std::string(to_string(mc.variant)));

  Rng rng2(999);
  Generator<float> gen2(mc2, rng2);
  gen2.params().restore(back.tensors);
  auto s1 = gen.params().snapshot(), s2 = gen2.params().snapshot();
  for (auto& [name, t] : s1) CHECK(t.v == s2.at(name).v);

  // same forward output after restore
  Rng drng(90);
  auto x = constant(random_tensor<float>(1, 3, 16, 16, drng));
  auto o1 = gen.forward(x, false), o2 = gen2.forward(x, false);
  CHECK(o1.y_out->value.v == o2.y_out->value.v);

  // missing tensor and shape mismatch both throw
  Checkpoint broken = back;
  broken.tensors.erase(broken.tensors.begin());
  Rng rng3(1);
  Generator<float> gen3(mc2, rng3);
  CHECK_THROWS(gen3.params().restore(broken.tensors));
}

TEST_CASE("batch norm variant runs in train and eval modes") {
  ModelConfig mc = testsup::tiny_model();
  mc.decomp.norm = Norm::batch;
  mc.refine.norm = Norm::batch;
  Rng rng(91);
  Generator<float> gen(mc, rng);
  Rng drng(92);
  auto x = constant(random_tensor<float>(2, 3, 16, 16, drng));
  CHECK(gen.forward(x, true).all_finite());
  CHECK(gen.forward(x, false).all_finite());
}

TEST_CASE("analytic gradients match finite differences") {
  ModelConfig mc = micro_model();
  Rng rng(93);
  Generator<double> gen(mc, rng);
  Discriminator<double> disc(mc.disc, rng);

  Rng drng(94);
  BatchTargets<double> gt;
  gt.x = random_tensor<double>(1, 3, 32, 32, drng);
  gt.y = random_tensor<double>(1, 3, 32, 32, drng);
  gt.w = random_tensor<double>(1, 3, 32, 32, drng);
  gt.alpha = random_tensor<double>(1, 1, 32, 32, drng, 0.0, 0.7);
  gt.mask = random_tensor<double>(1, 1, 32, 32, drng);
  LossWeights<double> weights;
  weights.lambda2 = 0;

  auto objective = [&]() {
    auto x = constant(gt.x);
    auto fwd = gen.forward(x, true);
    auto d_fake = disc.forward(x, fwd.y_out, true);
    auto adv = scale(mean_log(d_fake), -1.0);
    auto [content, terms] = content_loss(
        fwd, gt, weights, static_cast<const FeatureExtractor<double>*>(nullptr));
    return add(adv, content);
  };

  gen.params().zero_grads();
  disc.params().zero_grads();
  auto loss = objective();
  backward(loss);

  // sample 50 parameters across all generator tensors
  std::vector<std::pair<Var<double>*, size_t>> picks;
  Rng prng(95);
  auto& trainable = gen.params().trainable;
  for (int k = 0; k < 50; ++k) {
    auto& p = trainable[prng.uniform_int(static_cast<int>(trainable.size()))]
                  .second;
    picks.push_back({&p, static_cast<size_t>(
                             prng.uniform_int(static_cast<int>(p->value.size())))});
  }

  const double h = 1e-7;
  int checked = 0;
  double max_rel = 0;
  for (auto& [pp, idx] : picks) {
    double analytic = (*pp)->grad.v[idx];
    double orig = (*pp)->value.v[idx];
    (*pp)->value.v[idx] = orig + h;
    double up = objective()->value.v[0];
    (*pp)->value.v[idx] = orig - h;
    double dn = objective()->value.v[0];
    (*pp)->value.v[idx] = orig;
    double numeric = (up - dn) / (2 * h);
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    double rel = std::abs(analytic - numeric) / denom;
    max_rel = std::max(max_rel, rel);
    CHECK(rel < 1e-3);
    ++checked;
  }
  CHECK(checked == 50);
  MESSAGE("max relative gradient error: ", max_rel);
}
