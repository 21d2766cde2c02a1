#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "wdnet/augment.hpp"
#include "wdnet/checkpoint.hpp"
#include "wdnet/image_io.hpp"

namespace fs = std::filesystem;
using namespace wdnet;

namespace {

std::string save_random_model(const std::string& dir, uint64_t seed) {
  Rng rng(seed);
  nn::ModelConfig mc = testsup::tiny_model();
  nn::Generator<float> gen(mc, rng);
  Checkpoint ckpt;
  ckpt.meta["model"] = model_config_to_json(mc);
  ckpt.meta["train"] = {{"g_step", 0}, {"d_step", 0}};
  ckpt.tensors = gen.params().snapshot();
  std::string path = dir + "/model.bin";
  save_checkpoint(path, ckpt);
  return path;
}

// harvested watermark built by hand from a known shape asset
HarvestedWatermark synthetic_harvest(int size, int kind, double opacity) {
  WatermarkAsset a = testsup::make_asset(size, kind, "src");
  HarvestedWatermark hw;
  hw.rgb = a.rgb;
  hw.alpha = a.intrinsic_alpha;
  double sum = 0;
  size_t support = 0;
  for (auto& v : hw.alpha.data())
    if (v > 0) {
      v = static_cast<float>(opacity);
      sum += v;
      ++support;
    }
  hw.bbox = CropBox{0, 0, size - 1, size - 1};
  hw.area_fraction = static_cast<double>(support) / (size * size);
  hw.mean_opacity = sum / support;
  hw.source_id = "synthetic";
  hw.checkpoint_id = "none";
  return hw;
}

}  // namespace

TEST_CASE("separate_watermark crops to the brute-force bounding box") {
  Rng rng(101);
  nn::Generator<float> gen(testsup::tiny_model(), rng);
  ImageRGB x = testsup::make_host(32, 32, 102);
  SeparationResult res = separate_watermark(gen, x, "img0", "ckpt0");
  // an untrained model emits mid-gray masks, so some support exists
  REQUIRE(res.asset);
  const HarvestedWatermark& hw = *res.asset;

  GenOutput out = run_generator(gen, x);
  BinaryMask hard = out.m_soft.binarized(0.5f);
  int r0, c0, r1, c1;
  testsup::bbox_bruteforce(hard, r0, c0, r1, c1);
  CHECK(hw.bbox.row0 == r0);
  CHECK(hw.bbox.col0 == c0);
  CHECK(hw.bbox.row1 == r1);
  CHECK(hw.bbox.col1 == c1);
  CHECK(hw.rgb.height() == hw.bbox.height());
  CHECK(hw.alpha.width() == hw.bbox.width());

  // alpha support equals the binarized mask crop exactly
  for (int r = 0; r < hw.alpha.height(); ++r)
    for (int c = 0; c < hw.alpha.width(); ++c) {
      bool in_mask = hard.at(r0 + r, c0 + c) > 0.5f;
      if (in_mask)
        CHECK(hw.alpha.at(r, c) == out.alpha.at(r0 + r, c0 + c));
      else
        CHECK(hw.alpha.at(r, c) == 0.f);
    }
  for (float v : hw.alpha.data()) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  CHECK(hw.source_id == "img0");
  CHECK(hw.checkpoint_id == "ckpt0");
}

TEST_CASE("separate_watermark rejects an empty mask") {
  // baseline variant has no decomposition head -> structural rejection
  Rng rng(103);
  nn::Generator<float> base(
      testsup::tiny_model(nn::GeneratorVariant::baseline), rng);
  ImageRGB x = testsup::make_host(32, 32, 104);
  SeparationResult res = separate_watermark(base, x);
  CHECK(!res.asset);
  CHECK(!res.rejection.empty());

  // a full model whose mask head is pushed hard negative -> empty support
  Rng rng2(105);
  nn::Generator<float> gen(testsup::tiny_model(), rng2);
  for (auto& [name, p] : gen.params().trainable)
    if (name.find("head_m") != std::string::npos) {
      if (name.ends_with("/w"))
        std::fill(p->value.v.begin(), p->value.v.end(), 0.f);
      else
        std::fill(p->value.v.begin(), p->value.v.end(), -20.f);
    }
  SeparationResult res2 = separate_watermark(gen, x);
  CHECK(!res2.asset);
  CHECK(res2.rejection == "no watermark detected");
}

TEST_CASE("harvest scans every image and applies the filter window") {
  std::string root = testsup::scratch_dir("augment_harvest");
  std::string ckpt = save_random_model(root, 106);
  testsup::write_hosts(root + "/unlabeled", 5, 32, 32, 107);

  HarvestResult res = harvest(ckpt, root + "/unlabeled");
  CHECK(res.scanned == 5);
  CHECK(res.assets.size() <= 5);  // one-per-image bound
  CHECK(static_cast<int>(res.assets.size()) + res.rejected_no_watermark +
            res.rejected_filter ==
        res.scanned);
  HarvestFilter f;
  for (const auto& hw : res.assets) {
    CHECK(hw.area_fraction >= f.min_area_fraction);
    CHECK(hw.area_fraction <= f.max_area_fraction);
    CHECK(hw.mean_opacity >= f.min_mean_opacity);
    CHECK(hw.mean_opacity <= f.max_mean_opacity);
  }

  // impossible filter excludes everything, counted in the rejection summary
  HarvestFilter none;
  none.min_area_fraction = 0.998;
  none.max_area_fraction = 0.999;
  HarvestResult rej = harvest(ckpt, root + "/unlabeled", none);
  CHECK(rej.assets.empty());
  CHECK(rej.rejected_filter + rej.rejected_no_watermark == 5);
  CHECK(!rej.rejection_reasons.empty());

  fs::create_directories(root + "/empty");
  CHECK_THROWS(harvest(ckpt, root + "/empty"));
}

TEST_CASE("write_harvested emits paired pngs and an index") {
  std::string root = testsup::scratch_dir("augment_write");
  HarvestResult res;
  res.scanned = 1;
  res.assets.push_back(synthetic_harvest(12, 0, 0.5));
  write_harvested(root + "/harvested", res);
  CHECK(fs::exists(root + "/harvested/harvested_synthetic.rgb.png"));
  CHECK(fs::exists(root + "/harvested/harvested_synthetic.alpha.png"));
  std::ifstream is(root + "/harvested/index.json");
  nlohmann::json idx;
  is >> idx;
  CHECK(idx.at("accepted") == 1);
  CHECK(idx.at("assets")[0].at("source") == "synthetic");
}

TEST_CASE("asset_from_harvested normalizes alpha by mean in-support value") {
  HarvestedWatermark hw = synthetic_harvest(12, 0, 0.4);
  WatermarkAsset a = asset_from_harvested(hw, "h0");
  float mx = 0.f;
  for (float v : a.intrinsic_alpha.data()) mx = std::max(mx, v);
  CHECK(mx == doctest::Approx(1.0f).epsilon(1e-5));
  // support unchanged
  for (size_t i = 0; i < hw.alpha.data().size(); ++i)
    CHECK((a.intrinsic_alpha.data()[i] > 0) == (hw.alpha.data()[i] > 0));
}

TEST_CASE("augment_dataset appends a valid augmented split") {
  std::string root = testsup::scratch_dir("augment_ds");
  testsup::write_hosts(root + "/hosts", 3, 48, 48, 108);
  testsup::write_assets(root + "/assets", 0, 2, 16);
  SynthesisConfig cfg;
  cfg.canvas = 48;
  cfg.seed = 9;
  cfg.output_root = root + "/ds";
  cfg.test_asset_count = 0;
  cfg.test_host_count = 0;
  cfg.samples_per_host = 2;
  DatasetManifest base = build_dataset(root + "/hosts", root + "/assets", cfg);
  REQUIRE(base.entries.size() == 6);

  std::vector<HarvestedWatermark> harvested = {synthetic_harvest(14, 1, 0.5),
                                               synthetic_harvest(14, 4, 0.6)};
  cfg.samples_per_host = 1;
  DatasetManifest merged =
      augment_dataset(base, harvested, root + "/hosts", cfg);
  CHECK(merged.count("augmented") == 3);
  CHECK(merged.entries.size() == 9);

  // base entries unchanged, augmented entries carry provenance
  for (size_t i = 0; i < base.entries.size(); ++i)
    CHECK(merged.entries[i].id == base.entries[i].id);
  for (const auto& e : merged.entries)
    if (e.split == "augmented") {
      CHECK(!e.provenance.is_null());
      CHECK(e.provenance.at("source") == "synthetic");
      Sample s = load_sample(root + "/ds", "augmented", e.id);
      ImageRGB recomposed = compose(s.y, s.w, s.alpha);
      for (size_t i = 0; i < s.x.data().size(); ++i)
        CHECK(std::abs(s.x.data()[i] - recomposed.data()[i]) <= 1.f / 255.f);
      // opacity resampled inside the configured range
      CHECK(e.placement.opacity > cfg.opacity_min);
      CHECK(e.placement.opacity < cfg.opacity_max);
    }

  // deterministic rerun
  std::string root2 = testsup::scratch_dir("augment_ds2");
  fs::create_directories(root2);
  SynthesisConfig cfg2 = cfg;
  cfg2.output_root = root2 + "/ds";
  // rebuild the base too so the trees are comparable
  SynthesisConfig cfg_base = cfg2;
  cfg_base.samples_per_host = 2;
  DatasetManifest base2 =
      build_dataset(root + "/hosts", root + "/assets", cfg_base);
  DatasetManifest merged2 =
      augment_dataset(base2, harvested, root + "/hosts", cfg2);
  CHECK(manifest_to_json(merged2).dump() == manifest_to_json(merged).dump());
  CHECK(dataset_hash(root + "/ds") == dataset_hash(root2 + "/ds"));

  CHECK_THROWS(augment_dataset(base, {}, root + "/hosts", cfg));
}
