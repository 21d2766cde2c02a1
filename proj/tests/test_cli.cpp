#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "wdnet/checkpoint.hpp"
#include "wdnet/cli.hpp"
#include "wdnet/image_io.hpp"
#include "wdnet/synth.hpp"

namespace fs = std::filesystem;
using namespace wdnet;

namespace {

int run_cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"wdnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

// capture stdout of a cli run
std::pair<int, std::string> run_cli_capture(std::vector<std::string> args) {
  std::string path =
      (fs::temp_directory_path() / "wdnet_cli_capture.txt").string();
  fflush(stdout);
  int saved = dup(1);
  FILE* f = freopen(path.c_str(), "w", stdout);
  REQUIRE(f != nullptr);
  int rc = run_cli(std::move(args));
  fflush(stdout);
  dup2(saved, 1);
  close(saved);
  std::ifstream is(path);
  std::string out((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());
  return {rc, out};
}

std::string fixture_dataset(const std::string& name, uint64_t seed) {
  std::string root = testsup::scratch_dir(name);
  testsup::write_hosts(root + "/hosts", 4, 32, 32, seed);
  testsup::write_assets(root + "/assets", 0, 3, 12);
  return root;
}

const std::vector<std::string> kTinyModelSets = {
    "--set", "model.depth=3",        "--set", "model.mult=0.25",
    "--set", "model.refine_width=16", "--set", "model.refine_blocks=2",
    "--set", "model.disc_mult=0.125"};

}  // namespace

TEST_CASE("config merging validates keys") {
  auto cfg = default_config();
  merge_config(cfg, nlohmann::json{{"train", {{"lr", 1e-3}}}});
  CHECK(cfg.at("train").at("lr") == 1e-3);

  CHECK_THROWS_WITH_AS(
      merge_config(cfg, nlohmann::json{{"train", {{"leraning_rate", 1.0}}}}),
      doctest::Contains("train.leraning_rate"), std::runtime_error);
  CHECK_THROWS_WITH_AS(merge_config(cfg, nlohmann::json{{"bogus", 1}}),
                       doctest::Contains("bogus"), std::runtime_error);

  apply_set(cfg, "train.batch=3");
  CHECK(cfg.at("train").at("batch") == 3);
  apply_set(cfg, "model.variant=decompnet");
  CHECK(cfg.at("model").at("variant") == "decompnet");
  CHECK_THROWS(apply_set(cfg, "no_equals_sign"));
  CHECK_THROWS(apply_set(cfg, "train.nope=1"));
}

TEST_CASE("help exits zero, unknown flags exit nonzero") {
  auto [rc_help, help_text] = run_cli_capture({"--help"});
  CHECK(rc_help == 0);
  CHECK(help_text.find("synth") != std::string::npos);
  CHECK(help_text.find("ablate") != std::string::npos);
  CHECK(run_cli({"synth", "--bogus-flag"}) != 0);
  CHECK(run_cli({"not-a-command"}) != 0);
  CHECK(run_cli({}) != 0);
}

TEST_CASE("synth prints the same dataset hash for identical seeds") {
  std::string root = fixture_dataset("cli_synth", 201);
  std::vector<std::string> base = {
      "synth",  "--hosts", root + "/hosts", "--assets", root + "/assets",
      "--seed", "42",      "--set",         "synth.canvas=32"};
  auto a = base;
  a.insert(a.end(), {"--out", root + "/ds1"});
  auto b = base;
  b.insert(b.end(), {"--out", root + "/ds2"});
  auto [rc1, out1] = run_cli_capture(a);
  auto [rc2, out2] = run_cli_capture(b);
  REQUIRE(rc1 == 0);
  REQUIRE(rc2 == 0);
  auto hash_line = [](const std::string& s) {
    return s.substr(0, s.find('\n'));
  };
  CHECK(hash_line(out1) == hash_line(out2));
  CHECK(hash_line(out1).find("dataset_hash") == 0);
  CHECK(fs::exists(root + "/ds1/result.json"));

  // different seed -> different hash
  auto c = base;
  c[6] = "43";
  c.insert(c.end(), {"--out", root + "/ds3"});
  auto [rc3, out3] = run_cli_capture(c);
  REQUIRE(rc3 == 0);
  CHECK(hash_line(out3) != hash_line(out1));
}

TEST_CASE("train then eval via the cli") {
  std::string root = fixture_dataset("cli_train", 202);
  REQUIRE(run_cli({"synth", "--hosts", root + "/hosts", "--assets",
                   root + "/assets", "--seed", "1", "--out", root + "/ds",
                   "--set", "synth.canvas=32", "--set",
                   "synth.samples_per_host=2"}) == 0);

  std::vector<std::string> train_args = {
      "train", "--dataset", root + "/ds",       "--out",
      root + "/run",        "--seed",           "3",
      "--set", "train.total_g_steps=6",         "--set",
      "train.batch=2",      "--set",            "train.lambda2=0"};
  train_args.insert(train_args.end(), kTinyModelSets.begin(),
                    kTinyModelSets.end());
  REQUIRE(run_cli(train_args) == 0);
  CHECK(fs::exists(root + "/run/checkpoint.bin"));
  CHECK(fs::exists(root + "/run/train_log.jsonl"));
  std::ifstream rj(root + "/run/result.json");
  nlohmann::json res;
  rj >> res;
  CHECK(res.at("g_steps") == 6);
  CHECK(res.at("d_steps") == 2);

  auto [rc, out] = run_cli_capture(
      {"eval", "--dataset", root + "/ds", "--checkpoint",
       root + "/run/checkpoint.bin", "--out", root + "/eval"});
  REQUIRE(rc == 0);
  CHECK(out.find("PSNR") != std::string::npos);
  CHECK(fs::exists(root + "/eval/report.json"));

  // identity-mode eval works without a checkpoint
  CHECK(run_cli({"eval", "--dataset", root + "/ds", "--mode", "identity",
                 "--out", root + "/eval_id"}) == 0);
}

TEST_CASE("remove with a suppressed mask returns the input") {
  std::string root = testsup::scratch_dir("cli_remove");
  // model whose mask head is pinned hard negative: M ~ 0
  Rng rng(203);
  nn::ModelConfig mc = testsup::tiny_model();
  nn::Generator<float> gen(mc, rng);
  for (auto& [name, p] : gen.params().trainable)
    if (name.find("head_m") != std::string::npos) {
      float fill = name.ends_with("/b") ? -30.f : 0.f;
      std::fill(p->value.v.begin(), p->value.v.end(), fill);
    }
  Checkpoint ckpt;
  ckpt.meta["model"] = model_config_to_json(mc);
  ckpt.meta["train"] = {{"g_step", 0}, {"d_step", 0}};
  ckpt.tensors = gen.params().snapshot();
  save_checkpoint(root + "/m.bin", ckpt);

  fs::create_directories(root + "/in");
  ImageRGB img = testsup::make_host(32, 32, 204);
  for (auto& v : img.data()) v = quantize8(v);
  write_png_rgb(root + "/in/a.png", img);

  REQUIRE(run_cli({"remove", "--checkpoint", root + "/m.bin", "--input",
                   root + "/in", "--out", root + "/out"}) == 0);
  ImageRGB back = read_png_rgb(root + "/out/a.png");
  for (size_t i = 0; i < img.data().size(); ++i)
    CHECK(back.data()[i] == img.data()[i]);
}

TEST_CASE("separate and augment round trip through the cli") {
  std::string root = fixture_dataset("cli_augment", 205);
  REQUIRE(run_cli({"synth", "--hosts", root + "/hosts", "--assets",
                   root + "/assets", "--seed", "1", "--out", root + "/ds",
                   "--set", "synth.canvas=32"}) == 0);

  // random tiny model checkpoint; harvest structure is what matters here
  Rng rng(206);
  nn::ModelConfig mc = testsup::tiny_model();
  nn::Generator<float> gen(mc, rng);
  Checkpoint ckpt;
  ckpt.meta["model"] = model_config_to_json(mc);
  ckpt.meta["train"] = {{"g_step", 0}, {"d_step", 0}};
  ckpt.tensors = gen.params().snapshot();
  save_checkpoint(root + "/m.bin", ckpt);

  int rc = run_cli({"separate", "--checkpoint", root + "/m.bin", "--input",
                    root + "/ds/train/watermarked", "--out",
                    root + "/harvested", "--set",
                    "harvest.min_area_fraction=0.0", "--set",
                    "harvest.min_mean_opacity=0.0", "--set",
                    "harvest.max_mean_opacity=1.0", "--set",
                    "harvest.max_area_fraction=1.0"});
  REQUIRE(rc == 0);
  CHECK(fs::exists(root + "/harvested/index.json"));

  int rc2 = run_cli({"augment", "--checkpoint", root + "/m.bin", "--input",
                     root + "/ds/train/watermarked", "--hosts",
                     root + "/hosts", "--dataset", root + "/ds", "--seed",
                     "5", "--set", "synth.canvas=32", "--set",
                     "harvest.min_area_fraction=0.0", "--set",
                     "harvest.min_mean_opacity=0.0", "--set",
                     "harvest.max_mean_opacity=1.0", "--set",
                     "harvest.max_area_fraction=1.0"});
  REQUIRE(rc2 == 0);
  DatasetManifest m = load_manifest(root + "/ds/manifest.json");
  CHECK(m.count("augmented") > 0);
}

TEST_CASE("ablate writes the four-variant comparison table") {
  std::string root = fixture_dataset("cli_ablate", 207);
  REQUIRE(run_cli({"synth", "--hosts", root + "/hosts", "--assets",
                   root + "/assets", "--seed", "1", "--out", root + "/ds",
                   "--set", "synth.canvas=32"}) == 0);
  std::vector<std::string> args = {
      "ablate", "--dataset", root + "/ds", "--out", root + "/ablate",
      "--seed", "2",
      "--set", "train.total_g_steps=3",
      "--set", "train.batch=2",
      "--set", "train.lambda2=0"};
  args.insert(args.end(), kTinyModelSets.begin(), kTinyModelSets.end());
  auto [rc, out] = run_cli_capture(args);
  REQUIRE(rc == 0);
  CHECK(fs::exists(root + "/ablate/ablation.txt"));
  std::ifstream is(root + "/ablate/ablation.txt");
  std::string table((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  CHECK(table.find("baseline") != std::string::npos);
  CHECK(table.find("decompnet") != std::string::npos);
  CHECK(table.find("full") != std::string::npos);
  CHECK(table.find("full-no-supervision") != std::string::npos);
  CHECK(table.find("RMSE_w") != std::string::npos);
  std::ifstream rj(root + "/ablate/result.json");
  nlohmann::json res;
  rj >> res;
  CHECK(res.at("rows").size() == 4);
}

TEST_CASE("config file feeds the pipeline and bad keys fail loudly") {
  std::string root = fixture_dataset("cli_config", 208);
  std::ofstream(root + "/good.json") << R"({"synth": {"canvas": 32}})";
  CHECK(run_cli({"synth", "--hosts", root + "/hosts", "--assets",
                 root + "/assets", "--out", root + "/ds", "--config",
                 root + "/good.json"}) == 0);

  std::ofstream(root + "/bad.json") << R"({"synth": {"canvs": 32}})";
  CHECK(run_cli({"synth", "--hosts", root + "/hosts", "--assets",
                 root + "/assets", "--out", root + "/ds_bad", "--config",
                 root + "/bad.json"}) != 0);

  CHECK(run_cli({"eval", "--dataset", root + "/does_not_exist", "--mode",
                 "identity"}) != 0);
}
