#include "wdnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "wdnet/image_io.hpp"

namespace fs = std::filesystem;

namespace wdnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double bilinear_zero(const float* plane, int h, int w, double y, double x) {
  int y0 = static_cast<int>(std::floor(y));
  int x0 = static_cast<int>(std::floor(x));
  double wy = y - y0, wx = x - x0;
  auto tap = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return plane[static_cast<size_t>(yy) * w + xx];
  };
  return (1 - wy) * ((1 - wx) * tap(y0, x0) + wx * tap(y0, x0 + 1)) +
         wy * ((1 - wx) * tap(y0 + 1, x0) + wx * tap(y0 + 1, x0 + 1));
}

struct Affine {
  // canvas -> asset coordinates
  double cos_t, sin_t, inv_s, acr, acc, cr, cc;
};

Affine make_inverse(const PlacementSpec& spec, int asset_h, int asset_w,
                    int canvas_w) {
  double s = spec.scale * canvas_w / asset_w;
  double t = spec.rotation_deg * kPi / 180.0;
  return Affine{std::cos(t), std::sin(t), 1.0 / s, asset_h / 2.0,
                asset_w / 2.0, spec.center_row, spec.center_col};
}

}  // namespace

void validate_asset(const WatermarkAsset& asset) {
  require(asset.rgb.height() == asset.intrinsic_alpha.height() &&
              asset.rgb.width() == asset.intrinsic_alpha.width(),
          "asset '" + asset.name + "': rgb/alpha dimension mismatch");
  float mx = 0.f;
  for (float v : asset.intrinsic_alpha.data()) mx = std::max(mx, v);
  require(mx > 0.f, "asset '" + asset.name + "' is empty");
}

bool placement_fits(const PlacementSpec& spec, int asset_h, int asset_w,
                    int canvas_h, int canvas_w) {
  double s = spec.scale * canvas_w / asset_w;
  double t = spec.rotation_deg * kPi / 180.0;
  double ct = std::cos(t), st = std::sin(t);
  double hw = asset_w / 2.0, hh = asset_h / 2.0;
  for (double dy : {-hh, hh})
    for (double dx : {-hw, hw}) {
      double col = spec.center_col + s * (ct * dx - st * dy);
      double row = spec.center_row + s * (st * dx + ct * dy);
      if (col < 0 || col > canvas_w || row < 0 || row > canvas_h) return false;
    }
  return true;
}

std::pair<ImageRGB, AlphaMatte> transform_asset(const WatermarkAsset& asset,
                                                const PlacementSpec& spec,
                                                int canvas_h, int canvas_w) {
  require(placement_fits(spec, asset.intrinsic_alpha.height(),
                         asset.intrinsic_alpha.width(), canvas_h, canvas_w),
          "transform_asset: footprint exceeds canvas");
  int ah = asset.intrinsic_alpha.height(), aw = asset.intrinsic_alpha.width();
  Affine inv = make_inverse(spec, ah, aw, canvas_w);
  ImageRGB w_full(canvas_h, canvas_w);
  AlphaMatte alpha_full(canvas_h, canvas_w);
  for (int r = 0; r < canvas_h; ++r)
    for (int c = 0; c < canvas_w; ++c) {
      double u = (c - inv.cc) * inv.inv_s;
      double v = (r - inv.cr) * inv.inv_s;
      double ax = inv.cos_t * u + inv.sin_t * v + inv.acc;
      double ay = -inv.sin_t * u + inv.cos_t * v + inv.acr;
      double a = bilinear_zero(asset.intrinsic_alpha.data().data(), ah, aw, ay,
                               ax);
      if (a <= 0.0) continue;
      alpha_full.at(r, c) = static_cast<float>(spec.opacity * a);
      for (int ch = 0; ch < 3; ++ch)
        w_full.at(ch, r, c) = static_cast<float>(bilinear_zero(
            &asset.rgb.data()[static_cast<size_t>(ch) * ah * aw], ah, aw, ay,
            ax));
    }
  return {std::move(w_full), std::move(alpha_full)};
}

PlacementSpec sample_placement(Rng& rng, const SynthesisConfig& config,
                               const WatermarkAsset& asset, int canvas_h,
                               int canvas_w) {
  int ah = asset.intrinsic_alpha.height(), aw = asset.intrinsic_alpha.width();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    PlacementSpec spec;
    spec.scale = rng.uniform(config.scale_min, config.scale_max);
    spec.rotation_deg =
        std::fmod(rng.uniform(config.rotation_min, config.rotation_max), 360.0);
    spec.opacity = rng.uniform(config.opacity_min, config.opacity_max);
    spec.center_row = rng.uniform(0.0, canvas_h);
    spec.center_col = rng.uniform(0.0, canvas_w);
    if (placement_fits(spec, ah, aw, canvas_h, canvas_w)) return spec;
  }
  throw std::runtime_error(
      "sample_placement: no valid placement after 1000 attempts; check scale "
      "range vs canvas");
}

Sample synthesize_sample(const ImageRGB& host, const WatermarkAsset& asset,
                         const PlacementSpec& spec, float tau) {
  Sample s;
  auto [w_full, alpha_full] =
      transform_asset(asset, spec, host.height(), host.width());
  s.y = host;
  s.w = std::move(w_full);
  s.alpha = std::move(alpha_full);
  s.x = compose(s.y, s.w, s.alpha);
  s.mask = mask_from_alpha(s.alpha, tau);
  s.meta = spec;
  return s;
}

// ---------------------------------------------------------------------------
// manifest

size_t DatasetManifest::count(const std::string& split) const {
  size_t n = 0;
  for (const auto& e : entries)
    if (e.split == split) ++n;
  return n;
}

nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["canvas"] = m.canvas;
  j["counts"] = {{"train", m.count("train")},
                 {"test", m.count("test")},
                 {"augmented", m.count("augmented")}};
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    nlohmann::ordered_json je;
    je["id"] = e.id;
    je["split"] = e.split;
    je["host"] = e.host_file;
    je["asset"] = e.asset_name;
    je["placement"] = {{"scale", e.placement.scale},
                       {"rotation_deg", e.placement.rotation_deg},
                       {"center", {e.placement.center_row, e.placement.center_col}},
                       {"opacity", e.placement.opacity}};
    if (!e.provenance.is_null()) je["provenance"] = e.provenance;
    j["entries"].push_back(std::move(je));
  }
  j["warnings"] = m.warnings;
  return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  m.seed = j.at("seed").get<uint64_t>();
  m.canvas = j.at("canvas").get<int>();
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.id = je.at("id").get<std::string>();
    e.split = je.at("split").get<std::string>();
    e.host_file = je.at("host").get<std::string>();
    e.asset_name = je.at("asset").get<std::string>();
    const auto& p = je.at("placement");
    e.placement.scale = p.at("scale").get<double>();
    e.placement.rotation_deg = p.at("rotation_deg").get<double>();
    e.placement.center_row = p.at("center")[0].get<double>();
    e.placement.center_col = p.at("center")[1].get<double>();
    e.placement.opacity = p.at("opacity").get<double>();
    if (je.contains("provenance")) e.provenance = je.at("provenance");
    m.entries.push_back(std::move(e));
  }
  if (j.contains("warnings"))
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << manifest_to_json(m).dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read manifest: " + path);
  nlohmann::json j;
  is >> j;
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// asset / host loading

std::vector<std::string> list_pngs(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png")
      out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<WatermarkAsset> load_assets(const std::string& dir,
                                        std::vector<std::string>* warnings) {
  std::vector<WatermarkAsset> assets;
  auto files = list_pngs(dir);
  for (const auto& f : files) {
    fs::path p(f);
    std::string stem = p.stem().string();
    try {
      if (stem.size() > 6 && stem.ends_with(".alpha")) continue;
      WatermarkAsset a;
      if (stem.size() > 4 && stem.ends_with(".rgb")) {
        std::string base = stem.substr(0, stem.size() - 4);
        std::string alpha_path =
            (p.parent_path() / (base + ".alpha.png")).string();
        a.rgb = read_png_rgb(f);
        a.intrinsic_alpha = read_png_gray(alpha_path);
        a.name = base;
      } else {
        RgbaImage img = read_png_rgba(f);
        if (!img.had_alpha_channel)
          throw std::runtime_error("asset PNG lacks an alpha channel");
        a.rgb = std::move(img.rgb);
        a.intrinsic_alpha = std::move(img.alpha);
        a.name = stem;
      }
      validate_asset(a);
      assets.push_back(std::move(a));
    } catch (const std::exception& ex) {
      if (warnings)
        warnings->push_back("skipped asset " + f + ": " + ex.what());
    }
  }
  std::sort(assets.begin(), assets.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  return assets;
}

// ---------------------------------------------------------------------------
// dataset build

namespace {

const char* kKinds[5] = {"watermarked", "target", "watermark", "alpha", "mask"};

ImageRGB quantized(const ImageRGB& img) {
  ImageRGB out = img;
  for (auto& v : out.data()) v = quantize8(v);
  return out;
}

AlphaMatte quantized(const AlphaMatte& m) {
  AlphaMatte out = m;
  for (auto& v : out.data()) v = quantize8(v);
  return out;
}

}  // namespace

void write_sample_files(const std::string& root, const std::string& split,
                        const std::string& id, const ImageRGB& host,
                        const WatermarkAsset& asset, const PlacementSpec& spec,
                        float tau) {
  auto [w_full, alpha_full] =
      transform_asset(asset, spec, host.height(), host.width());
  // Quantize the ground truth first and recompose from the quantized grids so
  // x = compose(y, w, alpha) holds within one 8-bit step after reload.
  ImageRGB y_q = quantized(host);
  ImageRGB w_q = quantized(w_full);
  AlphaMatte a_q = quantized(alpha_full);
  ImageRGB x = compose(y_q, w_q, a_q);
  BinaryMask mask = mask_from_alpha(a_q, tau);

  for (const char* kind : kKinds)
    fs::create_directories(fs::path(root) / split / kind);
  auto path = [&](const char* kind) {
    return (fs::path(root) / split / kind / (id + ".png")).string();
  };
  write_png_rgb(path("watermarked"), x);
  write_png_rgb(path("target"), y_q);
  write_png_rgb(path("watermark"), w_q);
  write_png_gray(path("alpha"), a_q);
  write_png_gray(path("mask"), mask);
}

Sample load_sample(const std::string& root, const std::string& split,
                   const std::string& id) {
  auto path = [&](const char* kind) {
    return (fs::path(root) / split / kind / (id + ".png")).string();
  };
  Sample s;
  s.x = read_png_rgb(path("watermarked"));
  s.y = read_png_rgb(path("target"));
  s.w = read_png_rgb(path("watermark"));
  s.alpha = read_png_gray(path("alpha"));
  AlphaMatte m = read_png_gray(path("mask"));
  s.mask = BinaryMask(m.height(), m.width());
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c)
      s.mask.at(r, c) = m.at(r, c) > 0.5f ? 1.f : 0.f;
  return s;
}

DatasetManifest build_dataset(const std::string& hosts_dir,
                              const std::string& assets_dir,
                              const SynthesisConfig& config) {
  if (config.output_root.empty())
    throw std::runtime_error("build_dataset: output_root not set");
  DatasetManifest manifest;
  manifest.seed = config.seed;
  manifest.canvas = config.canvas;

  auto host_files = list_pngs(hosts_dir);
  auto assets = load_assets(assets_dir, &manifest.warnings);
  if (host_files.empty())
    throw std::runtime_error("build_dataset: no host PNGs in " + hosts_dir);
  if (assets.empty())
    throw std::runtime_error("build_dataset: no usable assets in " + assets_dir);

  int n_assets = static_cast<int>(assets.size());
  int test_assets = config.test_asset_count >= 0
                        ? std::min(config.test_asset_count, n_assets - 1)
                        : (n_assets >= 2 ? std::max(1, n_assets / 5) : 0);
  int n_hosts = static_cast<int>(host_files.size());
  int test_hosts = config.test_host_count >= 0
                       ? std::min(config.test_host_count, n_hosts - 1)
                       : (n_hosts >= 2 ? std::max(1, n_hosts / 10) : 0);

  struct SplitPlan {
    std::string name;
    std::vector<std::string> hosts;
    const WatermarkAsset* assets_begin;
    int assets_count;
  };
  std::vector<SplitPlan> plans;
  plans.push_back({"train",
                   {host_files.begin(), host_files.end() - test_hosts},
                   assets.data(), n_assets - test_assets});
  if (test_hosts > 0 && test_assets > 0)
    plans.push_back({"test",
                     {host_files.end() - test_hosts, host_files.end()},
                     assets.data() + (n_assets - test_assets), test_assets});

  for (const auto& plan : plans) {
    uint64_t idx = 0;
    for (const auto& host_file : plan.hosts) {
      ImageRGB host;
      try {
        host = read_png_rgb(host_file);
      } catch (const std::exception& ex) {
        manifest.warnings.push_back("skipped host " + host_file + ": " +
                                    ex.what());
        idx += config.samples_per_host;
        continue;
      }
      if (host.height() != config.canvas || host.width() != config.canvas)
        host = resize_bilinear(host, config.canvas, config.canvas);
      for (int s = 0; s < config.samples_per_host; ++s, ++idx) {
        Rng rng(Rng::derive(config.seed, plan.name, idx));
        const WatermarkAsset& asset =
            plan.assets_begin[rng.uniform_int(plan.assets_count)];
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "%s_%05llu", plan.name.c_str(),
                      static_cast<unsigned long long>(idx));
        PlacementSpec spec =
            sample_placement(rng, config, asset, config.canvas, config.canvas);
        write_sample_files(config.output_root, plan.name, idbuf, host, asset,
                           spec, config.tau);
        ManifestEntry e;
        e.id = idbuf;
        e.split = plan.name;
        e.host_file = fs::path(host_file).filename().string();
        e.asset_name = asset.name;
        e.placement = spec;
        manifest.entries.push_back(std::move(e));
      }
    }
  }

  save_manifest((fs::path(config.output_root) / "manifest.json").string(),
                manifest);
  return manifest;
}

uint64_t dataset_hash(const std::string& root) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix_file = [&](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
      for (std::streamsize i = 0; i < is.gcount(); ++i) {
        h ^= static_cast<uint8_t>(buf[i]);
        h *= 0x100000001b3ull;
      }
      if (!is) break;
    }
  };
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) mix_file(f);
  return h;
}

}  // namespace wdnet
