#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wdnet/image.hpp"
#include "wdnet/rng.hpp"

namespace wdnet {

struct WatermarkAsset {
  ImageRGB rgb;               // logo colors
  AlphaMatte intrinsic_alpha; // silhouette, 0 outside the logo
  std::string name;
};

// Throws if the asset is empty (max alpha == 0).
void validate_asset(const WatermarkAsset& asset);

struct SynthesisConfig {
  int canvas = 128;
  double scale_min = 0.3, scale_max = 0.7;       // fraction of canvas width
  double rotation_min = 0.0, rotation_max = 360.0;  // degrees
  double opacity_min = 0.3, opacity_max = 0.7;
  int samples_per_host = 1;
  uint64_t seed = 0;
  float tau = 0.1f;           // mask threshold applied to alpha
  int test_asset_count = -1;  // -1: max(1, n/5); assets split is disjoint
  int test_host_count = -1;   // -1: max(1, n/10)
  std::string output_root;
};

struct ManifestEntry {
  std::string id;
  std::string split;  // train / test / augmented
  std::string host_file;
  std::string asset_name;
  PlacementSpec placement;
  nlohmann::ordered_json provenance;  // augmented entries only
};

struct DatasetManifest {
  int version = 1;
  uint64_t seed = 0;
  int canvas = 0;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> warnings;

  size_t count(const std::string& split) const;
};

nlohmann::ordered_json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

// Scales (bilinear), rotates about the asset center (bilinear, zero fill) and
// translates so the asset center lands on spec.center; alpha is the intrinsic
// silhouette times spec.opacity. Throws if the footprint exceeds the canvas.
std::pair<ImageRGB, AlphaMatte> transform_asset(const WatermarkAsset& asset,
                                                const PlacementSpec& spec,
                                                int canvas_h, int canvas_w);

bool placement_fits(const PlacementSpec& spec, int asset_h, int asset_w,
                    int canvas_h, int canvas_w);

// Uniform draws over the configured ranges, rejection-sampled for containment.
// Throws after 1000 rejections.
PlacementSpec sample_placement(Rng& rng, const SynthesisConfig& config,
                               const WatermarkAsset& asset, int canvas_h,
                               int canvas_w);

Sample synthesize_sample(const ImageRGB& host, const WatermarkAsset& asset,
                         const PlacementSpec& spec, float tau);

// Asset files: either `<name>.rgb.png` + `<name>.alpha.png` pairs or RGBA
// PNGs whose alpha channel is the silhouette.
std::vector<WatermarkAsset> load_assets(const std::string& dir,
                                        std::vector<std::string>* warnings = nullptr);
std::vector<std::string> list_pngs(const std::string& dir);

// Builds `<root>/{train,test}/{watermarked,target,watermark,alpha,mask}/` and
// manifest.json. Fully determined by (seed, config, sorted inputs).
DatasetManifest build_dataset(const std::string& hosts_dir,
                              const std::string& assets_dir,
                              const SynthesisConfig& config);

// Emits one sample's five PNGs. The ground truth grids are quantized to 8 bit
// first and x recomposed from the quantized grids, so the compose identity
// survives the file round trip.
void write_sample_files(const std::string& root, const std::string& split,
                        const std::string& id, const ImageRGB& host,
                        const WatermarkAsset& asset, const PlacementSpec& spec,
                        float tau);

// Loads one sample back from the on-disk layout.
Sample load_sample(const std::string& root, const std::string& split,
                   const std::string& id);

// FNV-1a over the manifest and all sample files in sorted order; used by the
// CLI to surface determinism.
uint64_t dataset_hash(const std::string& root);

}  // namespace wdnet
