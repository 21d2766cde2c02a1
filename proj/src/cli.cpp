#include "wdnet/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "wdnet/augment.hpp"
#include "wdnet/image_io.hpp"
#include "wdnet/infer.hpp"
#include "wdnet/metrics.hpp"
#include "wdnet/synth.hpp"
#include "wdnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace wdnet {

ordered_json default_config() {
  return ordered_json{
      {"synth",
       {{"canvas", 128},
        {"scale_min", 0.3},
        {"scale_max", 0.7},
        {"rotation_min", 0.0},
        {"rotation_max", 360.0},
        {"opacity_min", 0.3},
        {"opacity_max", 0.7},
        {"samples_per_host", 1},
        {"tau", 0.1},
        {"test_asset_count", -1},
        {"test_host_count", -1}}},
      {"model",
       {{"variant", "full"},
        {"depth", 4},
        {"mult", 1.0},
        {"norm", "instance"},
        {"refine_blocks", 3},
        {"refine_width", 180},
        {"disc_mult", 1.0},
        {"disc_norm", "instance"}}},
      {"train",
       {{"lr", 2e-4},
        {"beta1", 0.5},
        {"beta2", 0.999},
        {"batch", 6},
        {"d_steps_per_cycle", 1},
        {"g_steps_per_cycle", 3},
        {"total_g_steps", 100},
        {"lambda1", 50.0},
        {"lambda2", 0.0},
        {"lambda3", 10.0},
        {"lambda4", 10.0},
        {"intermediate_supervision", true},
        {"perceptual", "disabled"},
        {"vgg_weights_path", ""},
        {"checkpoint_every", 0}}},
      {"eval", {{"split", "test"}, {"mask_threshold", 0.5}}},
      {"harvest",
       {{"min_area_fraction", 0.01},
        {"max_area_fraction", 0.5},
        {"min_mean_opacity", 0.2},
        {"max_mean_opacity", 0.8}}}};
}

void merge_config(ordered_json& base, const json& overrides,
                  const std::string& prefix) {
  if (!overrides.is_object())
    throw std::runtime_error("config: expected an object at '" +
                             (prefix.empty() ? "<root>" : prefix) + "'");
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key()))
      throw std::runtime_error("config: unknown key '" + path + "'");
    if (base[it.key()].is_object())
      merge_config(base[it.key()], it.value(), path);
    else
      base[it.key()] = it.value();
  }
}

void apply_set(ordered_json& config, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("--set expects key=value, got '" + kv + "'");
  std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // plain string
  }
  // build a nested object from the dotted key, then merge for validation
  json nested = value;
  size_t end = key.size();
  while (true) {
    auto dot = key.rfind('.', end - 1);
    std::string part =
        dot == std::string::npos ? key.substr(0, end) : key.substr(dot + 1, end - dot - 1);
    if (part.empty()) throw std::runtime_error("--set: empty key segment in '" + kv + "'");
    nested = json{{part, nested}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_config(config, nested);
}

namespace {

struct CommonArgs {
  std::string config_path, out, checkpoint, dataset;
  uint64_t seed = 0;
  bool seed_given = false;
  std::vector<std::string> sets;
};

ordered_json resolve_config(const CommonArgs& args) {
  ordered_json cfg = default_config();
  if (!args.config_path.empty()) {
    std::ifstream is(args.config_path);
    if (!is)
      throw std::runtime_error("cannot read config: " + args.config_path);
    json user;
    is >> user;
    merge_config(cfg, user);
  }
  for (const auto& kv : args.sets) apply_set(cfg, kv);
  return cfg;
}

SynthesisConfig synth_config(const ordered_json& cfg, uint64_t seed,
                             const std::string& out) {
  const auto& s = cfg.at("synth");
  SynthesisConfig sc;
  sc.canvas = s.at("canvas").get<int>();
  sc.scale_min = s.at("scale_min").get<double>();
  sc.scale_max = s.at("scale_max").get<double>();
  sc.rotation_min = s.at("rotation_min").get<double>();
  sc.rotation_max = s.at("rotation_max").get<double>();
  sc.opacity_min = s.at("opacity_min").get<double>();
  sc.opacity_max = s.at("opacity_max").get<double>();
  sc.samples_per_host = s.at("samples_per_host").get<int>();
  sc.tau = s.at("tau").get<float>();
  sc.test_asset_count = s.at("test_asset_count").get<int>();
  sc.test_host_count = s.at("test_host_count").get<int>();
  sc.seed = seed;
  sc.output_root = out;
  return sc;
}

nn::ModelConfig model_config(const ordered_json& cfg) {
  const auto& m = cfg.at("model");
  nn::ModelConfig mc;
  mc.variant = nn::variant_from_string(m.at("variant").get<std::string>());
  mc.decomp.depth = m.at("depth").get<int>();
  mc.decomp.mult = m.at("mult").get<double>();
  mc.decomp.norm = nn::norm_from_string(m.at("norm").get<std::string>());
  mc.refine.blocks = m.at("refine_blocks").get<int>();
  mc.refine.width = m.at("refine_width").get<int>();
  mc.refine.norm = mc.decomp.norm;
  mc.disc.mult = m.at("disc_mult").get<double>();
  mc.disc.norm = nn::norm_from_string(m.at("disc_norm").get<std::string>());
  return mc;
}

TrainConfig train_config(const ordered_json& cfg, uint64_t seed,
                         const std::string& out) {
  const auto& t = cfg.at("train");
  TrainConfig tc;
  tc.lr = t.at("lr").get<double>();
  tc.beta1 = t.at("beta1").get<double>();
  tc.beta2 = t.at("beta2").get<double>();
  tc.batch = t.at("batch").get<int>();
  tc.d_steps_per_cycle = t.at("d_steps_per_cycle").get<int>();
  tc.g_steps_per_cycle = t.at("g_steps_per_cycle").get<int>();
  tc.total_g_steps = t.at("total_g_steps").get<long>();
  tc.weights.lambda1 = t.at("lambda1").get<float>();
  tc.weights.lambda2 = t.at("lambda2").get<float>();
  tc.weights.lambda3 = t.at("lambda3").get<float>();
  tc.weights.lambda4 = t.at("lambda4").get<float>();
  tc.intermediate_supervision = t.at("intermediate_supervision").get<bool>();
  tc.perceptual = t.at("perceptual").get<std::string>();
  tc.vgg_weights_path = t.at("vgg_weights_path").get<std::string>();
  tc.checkpoint_every = t.at("checkpoint_every").get<long>();
  tc.seed = seed;
  tc.out_dir = out;
  return tc;
}

void write_result(const std::string& out, ordered_json result) {
  if (out.empty()) return;
  fs::create_directories(out);
  std::ofstream os(fs::path(out) / "result.json", std::ios::trunc);
  os << result.dump(2) << "\n";
}

char hex_digit(uint64_t v) { return "0123456789abcdef"[v & 0xf]; }

std::string hash_hex(uint64_t h) {
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[i] = hex_digit(h);
  return s;
}

int cmd_synth(const CommonArgs& args, const std::string& hosts,
              const std::string& assets) {
  ordered_json cfg = resolve_config(args);
  SynthesisConfig sc = synth_config(cfg, args.seed, args.out);
  DatasetManifest manifest = build_dataset(hosts, assets, sc);
  uint64_t h = dataset_hash(args.out);
  std::cout << "dataset_hash " << hash_hex(h) << "\n";
  std::cout << "train " << manifest.count("train") << " test "
            << manifest.count("test") << "\n";
  for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
  write_result(args.out, {{"command", "synth"},
                          {"dataset_hash", hash_hex(h)},
                          {"train_count", manifest.count("train")},
                          {"test_count", manifest.count("test")},
                          {"warnings", manifest.warnings}});
  return 0;
}

int cmd_train(const CommonArgs& args) {
  ordered_json cfg = resolve_config(args);
  TrainConfig tc = train_config(cfg, args.seed, args.out);
  auto data = load_split(args.dataset, "train");
  std::unique_ptr<Trainer> trainer;
  if (!args.checkpoint.empty())
    trainer = std::make_unique<Trainer>(args.checkpoint, tc);
  else
    trainer = std::make_unique<Trainer>(model_config(cfg), tc);
  float last_content = 0.f;
  trainer->run(data, [&](const StepRecord& rec) {
    last_content = rec.content.total;
    if (rec.g_step % 50 == 0)
      std::cout << "step " << rec.g_step << " content " << rec.content.total
                << " adv " << rec.adv_g << "\n";
  });
  std::string ckpt = (fs::path(args.out) / "checkpoint.bin").string();
  write_result(args.out, {{"command", "train"},
                          {"g_steps", trainer->g_step()},
                          {"d_steps", trainer->d_step()},
                          {"final_content_loss", last_content},
                          {"checkpoint", ckpt}});
  std::cout << "checkpoint " << ckpt << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& model_mode) {
  ordered_json cfg = resolve_config(args);
  EvaluateOptions opts;
  opts.split = cfg.at("eval").at("split").get<std::string>();
  opts.mask_threshold = cfg.at("eval").at("mask_threshold").get<float>();
  opts.model_mode = model_mode;
  MetricReport report = evaluate(args.checkpoint, args.dataset, opts);
  std::cout << report_table(report);
  if (!args.out.empty()) {
    fs::create_directories(args.out);
    std::ofstream os(fs::path(args.out) / "report.json", std::ios::trunc);
    os << report_to_json(report).dump(2) << "\n";
  }
  write_result(args.out, {{"command", "eval"},
                          {"psnr", report.mean_psnr},
                          {"ssim", report.mean_ssim},
                          {"rmse", report.mean_rmse},
                          {"rmse_w", report.mean_rmse_w},
                          {"mask_iou", report.mean_mask_iou},
                          {"samples", report.sample_count},
                          {"skipped", report.skipped}});
  return 0;
}

std::vector<std::string> input_pngs(const std::string& input) {
  if (fs::is_directory(input)) return list_pngs(input);
  if (fs::is_regular_file(input)) return {input};
  throw std::runtime_error("no such file or directory: " + input);
}

int cmd_remove(const CommonArgs& args, const std::string& input) {
  LoadedGenerator lg = load_generator(args.checkpoint);
  fs::create_directories(args.out);
  ordered_json processed = ordered_json::array();
  for (const auto& f : input_pngs(input)) {
    ImageRGB x = read_png_rgb(f);
    GenOutput out = run_generator(*lg.gen, x);
    std::string dst =
        (fs::path(args.out) / fs::path(f).filename()).string();
    write_png_rgb(dst, out.y_out);
    processed.push_back(dst);
  }
  write_result(args.out, {{"command", "remove"},
                          {"count", processed.size()},
                          {"outputs", processed}});
  std::cout << "wrote " << processed.size() << " images to " << args.out
            << "\n";
  return 0;
}

HarvestFilter harvest_filter(const ordered_json& cfg) {
  const auto& h = cfg.at("harvest");
  HarvestFilter f;
  f.min_area_fraction = h.at("min_area_fraction").get<double>();
  f.max_area_fraction = h.at("max_area_fraction").get<double>();
  f.min_mean_opacity = h.at("min_mean_opacity").get<double>();
  f.max_mean_opacity = h.at("max_mean_opacity").get<double>();
  return f;
}

int cmd_separate(const CommonArgs& args, const std::string& input) {
  ordered_json cfg = resolve_config(args);
  HarvestResult result = harvest(args.checkpoint, input, harvest_filter(cfg));
  write_harvested(args.out, result);
  std::cout << "harvested " << result.assets.size() << " of " << result.scanned
            << " (rejected: " << result.rejected_no_watermark
            << " empty, " << result.rejected_filter << " filtered)\n";
  write_result(args.out,
               {{"command", "separate"},
                {"scanned", result.scanned},
                {"accepted", result.assets.size()},
                {"rejected_no_watermark", result.rejected_no_watermark},
                {"rejected_filter", result.rejected_filter}});
  return 0;
}

int cmd_augment(const CommonArgs& args, const std::string& input,
                const std::string& hosts) {
  ordered_json cfg = resolve_config(args);
  HarvestResult result = harvest(args.checkpoint, input, harvest_filter(cfg));
  if (result.assets.empty())
    throw std::runtime_error("augment: no assets survived harvesting");
  DatasetManifest base =
      load_manifest((fs::path(args.dataset) / "manifest.json").string());
  SynthesisConfig sc = synth_config(cfg, args.seed, args.dataset);
  DatasetManifest merged =
      augment_dataset(base, result.assets, hosts, sc);
  std::cout << "augmented split: " << merged.count("augmented")
            << " samples (base " << base.entries.size() << ")\n";
  write_result(args.out.empty() ? args.dataset : args.out,
               {{"command", "augment"},
                {"harvested", result.assets.size()},
                {"base_entries", base.entries.size()},
                {"augmented_entries", merged.count("augmented")}});
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  ordered_json cfg = resolve_config(args);
  struct VariantRun {
    std::string label;
    std::string variant;
    bool supervision;
  };
  const VariantRun runs[] = {{"baseline", "baseline", true},
                             {"decompnet", "decompnet", true},
                             {"full", "full", true},
                             {"full-no-supervision", "full", false}};
  ordered_json rows = ordered_json::array();
  std::string table =
      "variant              PSNR     SSIM     RMSE   RMSE_w\n";
  for (const auto& run : runs) {
    ordered_json vcfg = cfg;
    vcfg["model"]["variant"] = run.variant;
    vcfg["train"]["intermediate_supervision"] = run.supervision;
    std::string vout = (fs::path(args.out) / run.label).string();
    TrainConfig tc = train_config(vcfg, args.seed, vout);
    auto data = load_split(args.dataset, "train");
    Trainer trainer(model_config(vcfg), tc);
    trainer.run(data);
    EvaluateOptions opts;
    opts.split = vcfg.at("eval").at("split").get<std::string>();
    MetricReport report = evaluate(
        (fs::path(vout) / "checkpoint.bin").string(), args.dataset, opts);
    char line[128];
    std::snprintf(line, sizeof(line), "%-18s %7.2f  %7.4f  %7.2f  %7.2f\n",
                  run.label.c_str(), report.mean_psnr, report.mean_ssim,
                  report.mean_rmse, report.mean_rmse_w);
    table += line;
    rows.push_back({{"variant", run.label},
                    {"psnr", report.mean_psnr},
                    {"ssim", report.mean_ssim},
                    {"rmse", report.mean_rmse},
                    {"rmse_w", report.mean_rmse_w}});
  }
  std::cout << table;
  fs::create_directories(args.out);
  std::ofstream os(fs::path(args.out) / "ablation.txt", std::ios::trunc);
  os << table;
  write_result(args.out, {{"command", "ablate"}, {"rows", rows}});
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"wdnet: visible watermark removal via decomposition"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string hosts, assets, input, model_mode = "checkpoint";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "JSON config file");
    sub->add_option("--seed", args.seed, "RNG seed");
    sub->add_option("--out", args.out, "output directory");
    sub->add_option("--checkpoint", args.checkpoint, "checkpoint path");
    sub->add_option("--dataset", args.dataset, "dataset root");
    sub->add_option("--set", args.sets,
                    "config override key=value (repeatable)");
  };

  auto* synth = app.add_subcommand("synth", "build a synthetic dataset");
  add_common(synth);
  synth->add_option("--hosts", hosts, "host image directory")->required();
  synth->add_option("--assets", assets, "watermark asset directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--mode", model_mode,
                       "checkpoint | identity | oracle");

  auto* remove = app.add_subcommand("remove", "remove watermarks from images");
  add_common(remove);
  remove->add_option("--input", input, "input PNG or directory")->required();

  auto* separate =
      app.add_subcommand("separate", "harvest watermarks from images");
  add_common(separate);
  separate->add_option("--input", input, "unlabeled image directory")
      ->required();

  auto* augment = app.add_subcommand("augment", "build an augmented dataset");
  add_common(augment);
  augment->add_option("--input", input, "unlabeled image directory")
      ->required();
  augment->add_option("--hosts", hosts, "host image directory")->required();

  auto* ablate = app.add_subcommand("ablate", "train + compare variants");
  add_common(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto require = [](const std::string& v, const char* flag) {
    if (v.empty())
      throw std::runtime_error(std::string("missing required flag ") + flag);
  };

  try {
    if (synth->parsed()) {
      require(args.out, "--out");
      return cmd_synth(args, hosts, assets);
    }
    if (train->parsed()) {
      require(args.dataset, "--dataset");
      require(args.out, "--out");
      return cmd_train(args);
    }
    if (eval_cmd->parsed()) {
      require(args.dataset, "--dataset");
      if (model_mode == "checkpoint") require(args.checkpoint, "--checkpoint");
      return cmd_eval(args, model_mode);
    }
    if (remove->parsed()) {
      require(args.checkpoint, "--checkpoint");
      require(args.out, "--out");
      return cmd_remove(args, input);
    }
    if (separate->parsed()) {
      require(args.checkpoint, "--checkpoint");
      require(args.out, "--out");
      return cmd_separate(args, input);
    }
    if (augment->parsed()) {
      require(args.checkpoint, "--checkpoint");
      require(args.dataset, "--dataset");
      return cmd_augment(args, input, hosts);
    }
    if (ablate->parsed()) {
      require(args.dataset, "--dataset");
      require(args.out, "--out");
      return cmd_ablate(args);
    }
  } catch (const std::invalid_argument& ex) {
    std::cerr << "configuration error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace wdnet
