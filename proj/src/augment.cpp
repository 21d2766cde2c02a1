#include "wdnet/augment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "wdnet/image_io.hpp"

namespace fs = std::filesystem;

namespace wdnet {

SeparationResult separate_watermark(const nn::Generator<float>& gen,
                                    const ImageRGB& x,
                                    const std::string& source_id,
                                    const std::string& checkpoint_id) {
  SeparationResult res;
  GenOutput out = run_generator(gen, x);
  if (!out.has_decomposition) {
    res.rejection = "model has no decomposition head";
    return res;
  }
  BinaryMask hard = out.m_soft.binarized(0.5f);
  int h = hard.height(), w = hard.width();
  CropBox box{h, w, -1, -1};
  size_t support = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (hard.at(r, c) > 0.5f) {
        ++support;
        box.row0 = std::min(box.row0, r);
        box.col0 = std::min(box.col0, c);
        box.row1 = std::max(box.row1, r);
        box.col1 = std::max(box.col1, c);
      }
  if (support == 0) {
    res.rejection = "no watermark detected";
    return res;
  }

  HarvestedWatermark hw;
  hw.bbox = box;
  hw.rgb = ImageRGB(box.height(), box.width());
  hw.alpha = AlphaMatte(box.height(), box.width());
  double alpha_sum = 0.0;
  for (int r = 0; r < box.height(); ++r)
    for (int c = 0; c < box.width(); ++c) {
      int sr = box.row0 + r, sc = box.col0 + c;
      for (int ch = 0; ch < 3; ++ch)
        hw.rgb.at(ch, r, c) = out.w.at(ch, sr, sc);
      if (hard.at(sr, sc) > 0.5f) {
        hw.alpha.at(r, c) = out.alpha.at(sr, sc);
        alpha_sum += hw.alpha.at(r, c);
      }
    }
  hw.area_fraction = static_cast<double>(support) / (static_cast<double>(h) * w);
  hw.mean_opacity = alpha_sum / static_cast<double>(support);
  hw.source_id = source_id;
  hw.checkpoint_id = checkpoint_id;
  res.asset = std::move(hw);
  return res;
}

HarvestResult harvest(const std::string& checkpoint_path,
                      const std::string& unlabeled_dir,
                      const HarvestFilter& filter) {
  auto files = list_pngs(unlabeled_dir);
  if (files.empty())
    throw std::runtime_error("harvest: no PNGs in " + unlabeled_dir);
  LoadedGenerator lg = load_generator(checkpoint_path);

  HarvestResult result;
  for (const auto& f : files) {
    ++result.scanned;
    std::string id = fs::path(f).stem().string();
    ImageRGB x;
    try {
      x = read_png_rgb(f);
    } catch (const std::exception& ex) {
      ++result.rejected_filter;
      result.rejection_reasons.push_back(id + ": unreadable (" + ex.what() +
                                         ")");
      continue;
    }
    SeparationResult sep;
    try {
      sep = separate_watermark(*lg.gen, x, id, checkpoint_path);
    } catch (const std::exception& ex) {
      ++result.rejected_filter;
      result.rejection_reasons.push_back(id + ": " + ex.what());
      continue;
    }
    if (!sep.asset) {
      ++result.rejected_no_watermark;
      result.rejection_reasons.push_back(id + ": " + sep.rejection);
      continue;
    }
    const HarvestedWatermark& hw = *sep.asset;
    if (hw.area_fraction < filter.min_area_fraction ||
        hw.area_fraction > filter.max_area_fraction) {
      ++result.rejected_filter;
      result.rejection_reasons.push_back(
          id + ": area fraction " + std::to_string(hw.area_fraction) +
          " outside filter");
      continue;
    }
    if (hw.mean_opacity < filter.min_mean_opacity ||
        hw.mean_opacity > filter.max_mean_opacity) {
      ++result.rejected_filter;
      result.rejection_reasons.push_back(
          id + ": mean opacity " + std::to_string(hw.mean_opacity) +
          " outside filter");
      continue;
    }
    result.assets.push_back(std::move(*sep.asset));
  }
  return result;
}

void write_harvested(const std::string& out_dir, const HarvestResult& result) {
  fs::create_directories(out_dir);
  nlohmann::ordered_json index;
  index["scanned"] = result.scanned;
  index["accepted"] = result.assets.size();
  index["rejected_no_watermark"] = result.rejected_no_watermark;
  index["rejected_filter"] = result.rejected_filter;
  index["assets"] = nlohmann::ordered_json::array();
  for (const auto& hw : result.assets) {
    std::string id = "harvested_" + hw.source_id;
    write_png_rgb((fs::path(out_dir) / (id + ".rgb.png")).string(), hw.rgb);
    write_png_gray((fs::path(out_dir) / (id + ".alpha.png")).string(),
                   hw.alpha);
    index["assets"].push_back(
        {{"id", id},
         {"source", hw.source_id},
         {"checkpoint", hw.checkpoint_id},
         {"bbox", {hw.bbox.row0, hw.bbox.col0, hw.bbox.row1, hw.bbox.col1}},
         {"area_fraction", hw.area_fraction},
         {"mean_opacity", hw.mean_opacity}});
  }
  index["rejections"] = result.rejection_reasons;
  std::ofstream os(fs::path(out_dir) / "index.json", std::ios::trunc);
  os << index.dump(2) << "\n";
}

WatermarkAsset asset_from_harvested(const HarvestedWatermark& hw,
                                    const std::string& name) {
  WatermarkAsset a;
  a.rgb = hw.rgb;
  a.intrinsic_alpha = hw.alpha;
  a.name = name;
  if (hw.mean_opacity > 0) {
    float inv = static_cast<float>(1.0 / hw.mean_opacity);
    for (auto& v : a.intrinsic_alpha.data())
      v = std::min(1.f, std::max(0.f, v * inv));
  }
  validate_asset(a);
  return a;
}

DatasetManifest augment_dataset(const DatasetManifest& base,
                                const std::vector<HarvestedWatermark>& harvested,
                                const std::string& hosts_dir,
                                const SynthesisConfig& config) {
  if (harvested.empty())
    throw std::runtime_error("augment_dataset: no harvested assets");
  if (config.output_root.empty())
    throw std::runtime_error("augment_dataset: output_root not set");

  std::vector<WatermarkAsset> assets;
  std::vector<nlohmann::ordered_json> provenance;
  for (size_t i = 0; i < harvested.size(); ++i) {
    char nbuf[32];
    std::snprintf(nbuf, sizeof(nbuf), "harvested_%03zu", i);
    assets.push_back(asset_from_harvested(harvested[i], nbuf));
    provenance.push_back({{"source", harvested[i].source_id},
                          {"checkpoint", harvested[i].checkpoint_id},
                          {"mean_opacity", harvested[i].mean_opacity},
                          {"area_fraction", harvested[i].area_fraction}});
  }

  auto host_files = list_pngs(hosts_dir);
  if (host_files.empty())
    throw std::runtime_error("augment_dataset: no host PNGs in " + hosts_dir);

  DatasetManifest merged = base;
  uint64_t idx = 0;
  for (const auto& host_file : host_files) {
    ImageRGB host = read_png_rgb(host_file);
    if (host.height() != config.canvas || host.width() != config.canvas)
      host = resize_bilinear(host, config.canvas, config.canvas);
    for (int s = 0; s < config.samples_per_host; ++s, ++idx) {
      Rng rng(Rng::derive(config.seed, "augmented", idx));
      size_t ai = static_cast<size_t>(rng.uniform_int(static_cast<int>(assets.size())));
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "augmented_%05llu",
                    static_cast<unsigned long long>(idx));
      PlacementSpec spec = sample_placement(rng, config, assets[ai],
                                            config.canvas, config.canvas);
      write_sample_files(config.output_root, "augmented", idbuf, host,
                         assets[ai], spec, config.tau);
      ManifestEntry e;
      e.id = idbuf;
      e.split = "augmented";
      e.host_file = fs::path(host_file).filename().string();
      e.asset_name = assets[ai].name;
      e.placement = spec;
      e.provenance = provenance[ai];
      merged.entries.push_back(std::move(e));
    }
  }
  save_manifest((fs::path(config.output_root) / "manifest.json").string(),
                merged);
  return merged;
}

}  // namespace wdnet
