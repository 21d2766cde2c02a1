#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wdnet/image.hpp"
#include "wdnet/infer.hpp"
#include "wdnet/synth.hpp"

namespace wdnet {

struct CropBox {
  int row0 = 0, col0 = 0, row1 = 0, col1 = 0;  // inclusive bounds
  int height() const { return row1 - row0 + 1; }
  int width() const { return col1 - col0 + 1; }
};

struct HarvestedWatermark {
  ImageRGB rgb;      // cropped W_hat
  AlphaMatte alpha;  // cropped alpha_hat, zero outside the binarized mask
  CropBox bbox;
  double area_fraction = 0;  // binarized-mask pixels / source pixels
  double mean_opacity = 0;   // mean alpha over the mask support
  std::string source_id;
  std::string checkpoint_id;
};

struct SeparationResult {
  std::optional<HarvestedWatermark> asset;
  std::string rejection;  // set when asset is empty
};

// Runs the generator, binarizes M_hat at 0.5, crops (W_hat, alpha_hat) to the
// tight bounding box of the mask and zeroes alpha outside it.
SeparationResult separate_watermark(const nn::Generator<float>& gen,
                                    const ImageRGB& x,
                                    const std::string& source_id = "",
                                    const std::string& checkpoint_id = "");

struct HarvestFilter {
  double min_area_fraction = 0.01;
  double max_area_fraction = 0.50;
  double min_mean_opacity = 0.2;
  double max_mean_opacity = 0.8;
};

struct HarvestResult {
  std::vector<HarvestedWatermark> assets;
  int scanned = 0;
  int rejected_no_watermark = 0;
  int rejected_filter = 0;
  std::vector<std::string> rejection_reasons;  // one line per rejection
};

// separate_watermark over every PNG in `unlabeled_dir`, filtered. Throws on an
// empty directory.
HarvestResult harvest(const std::string& checkpoint_path,
                      const std::string& unlabeled_dir,
                      const HarvestFilter& filter = {});

// Writes `<id>.rgb.png` + `<id>.alpha.png` per asset and an `index.json` with
// quality stats and provenance.
void write_harvested(const std::string& out_dir, const HarvestResult& result);

// Harvested alpha normalized by its mean in-support value approximates an
// intrinsic silhouette; opacity is resampled at synthesis time.
WatermarkAsset asset_from_harvested(const HarvestedWatermark& hw,
                                    const std::string& name);

// Synthesizes config.samples_per_host samples per host from the harvested
// assets (round-robin) and appends them to a copy of the base manifest under
// split "augmented". Sample files are written next to the base dataset.
DatasetManifest augment_dataset(const DatasetManifest& base,
                                const std::vector<HarvestedWatermark>& harvested,
                                const std::string& hosts_dir,
                                const SynthesisConfig& config);

}  // namespace wdnet
