#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "l1bsr/cli.hpp"
#include "support.hpp"

using namespace l1bsr;
using l1bsr::testing::max_abs_interior;
using l1bsr::testing::temp_dir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

/// Runs the l1bsr executable; `env` is a prefix such as "L1BSR_SEED=3".
Result run(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path log = fs::temp_directory_path() / ("l1bsr_cli_" + std::to_string(++counter) + ".log");
  const std::string cmd = "env -u L1BSR_SEED " + env + " '" + std::string(L1BSR_CLI_PATH) + "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Result r{WIFEXITED(status) ? WEXITSTATUS(status) : -1, imagery::read_text(log)};
  fs::remove(log);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// Relative path -> file bytes for every regular file under `root`.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = imagery::read_text(e.path());
  return out;
}

/// Two 128 px scenes tiled into 64 px crops: 8 pairs of 32x32 LR images.
fs::path small_dataset(const std::string& name, const std::string& extra = "") {
  const fs::path root = temp_dir(name);
  EXPECT_EQ(run("synth-scenes --out " + q(root / "scenes") + " --count 2 --size 128 --seed 4").code, 0);
  const auto r = run("simulate --input " + q(root / "scenes") + " --out " + q(root / "ds") + " --crop 64 --seed 4 " + extra);
  EXPECT_EQ(r.code, 0) << r.out;
  return root / "ds";
}

const std::string kTinyCsr = "--iterations 4 --batch 2 --crop 16 --set csr.widths=[8,8]";
const std::string kTinyRec = "--iterations 4 --batch 2 --crop 16 --set rec.channels=8 --set rec.groups=1 "
                             "--set rec.blocks=1 --set training.val_crop=32";

}  // namespace

// ---------------------------------------------------------------------------
// Configuration layering (in-process)

TEST(Config, DefaultsAreTheDeskProfile) {
  const auto c = cli::resolve_config(std::nullopt, {});
  EXPECT_EQ(c.csr.widths, networks::CsrConfig::desk().widths);
  EXPECT_EQ(c.training.rec.iterations, 5000);
  EXPECT_EQ(c.training.csr.iterations, 5000);
  EXPECT_EQ(c.rec.groups, 2);
  EXPECT_EQ(c.seed, 0u);
}

TEST(Config, OverridesLayerOverTheFileAndEchoRoundTrips) {
  const fs::path dir = temp_dir("cli_config");
  imagery::write_text(dir / "c.json", R"({"training": {"rec": {"lr": 0.001}}, "rec": {"bands": "g"}, "seed": 9})");
  const auto c = cli::resolve_config(dir / "c.json", {{"training.rec.lr", "0.002"}, {"paths.dataset", "x"}});
  EXPECT_EQ(c.training.rec.lr, 0.002);
  EXPECT_EQ(c.rec.bands, "g");
  EXPECT_EQ(c.rec.channels, 32);
  EXPECT_EQ(c.paths.dataset, "x");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.training.seed, 9u);
  EXPECT_EQ(c.simulation.seed, 9u);

  cli::echo_config(c, dir / "echo.json");
  const auto again = cli::resolve_config(dir / "echo.json", {});
  EXPECT_EQ(cli::to_json(again), cli::to_json(c));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(cli::resolve_config(std::nullopt, {{"bogus", "1"}}), ConfigError);
  EXPECT_THROW(cli::resolve_config(std::nullopt, {{"training.rec.momentum", "1"}}), ConfigError);
  EXPECT_THROW(cli::resolve_config(std::nullopt, {{"training.seed", "1"}}), ConfigError);
  EXPECT_THROW(cli::resolve_config(std::nullopt, {{"simulation.band_translation_max", "9"}}), ConfigError);
  EXPECT_THROW(cli::resolve_config(std::nullopt, {{"evaluation.error_mode", "max"}}), ConfigError);
  EXPECT_THROW(cli::resolve_config(std::nullopt, {{"rec.bands", "gb"}}), ConfigError);
  EXPECT_THROW(cli::resolve_config(std::nullopt, {{"training..lr", "1"}}), ConfigError);
}

TEST(Config, SeedFallsBackToTheEnvironment) {
  ::setenv("L1BSR_SEED", "17", 1);
  EXPECT_EQ(cli::resolve_config(std::nullopt, {}).seed, 17u);
  EXPECT_EQ(cli::resolve_config(std::nullopt, {{"seed", "3"}}).seed, 3u);
  ::setenv("L1BSR_SEED", "x7", 1);
  EXPECT_THROW(cli::resolve_config(std::nullopt, {}), ConfigError);
  ::unsetenv("L1BSR_SEED");
}

// ---------------------------------------------------------------------------
// Exit codes

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("eval-csr --no-such-flag").code, 2);
  EXPECT_EQ(run("eval-csr --set bogus.key=1").code, 2);
  EXPECT_EQ(run("train-csr --iterations many").code, 2);
  EXPECT_EQ(run("eval-csr --dataset x --out y.json").code, 2);  // no checkpoint given
}

TEST(Cli, DataErrorsExitWithThree) {
  const fs::path dir = temp_dir("cli_data_errors");
  fs::create_directories(dir / "empty");
  EXPECT_EQ(run("simulate --input " + q(dir / "empty") + " --out " + q(dir / "o")).code, 3);
  EXPECT_EQ(run("simulate --input " + q(dir / "missing") + " --out " + q(dir / "o")).code, 3);
  ASSERT_EQ(run("synth-scenes --out " + q(dir / "scenes") + " --count 1 --size 64").code, 0);
  EXPECT_EQ(run("simulate --input " + q(dir / "scenes") + " --out " + q(dir / "o") + " --crop 128").code, 3);
  EXPECT_EQ(run("train-csr --dataset " + q(dir / "missing") + " --out " + q(dir / "run")).code, 3);
  imagery::write_text(dir / "not_a_checkpoint.ck", "junk");
  EXPECT_EQ(run("infer --rec " + q(dir / "not_a_checkpoint.ck") + " --input x.tif --out " + q(dir / "y.tif")).code, 3);
}

TEST(Cli, NonFiniteLossExitsWithFour) {
  // Rasters cannot carry non-finite values (refused on write and on load), so
  // a diverging optimizer is the way to reach a non-finite loss.
  const fs::path ds = small_dataset("cli_diverge");
  const auto r = run("train-csr --dataset " + q(ds) + " --out " + q(ds.parent_path() / "run") +
                     " --iterations 20 --batch 2 --crop 16 --lr 1e36");
  EXPECT_EQ(r.code, 4) << r.out;
}

// ---------------------------------------------------------------------------
// simulate

TEST(Simulate, RerunIsByteIdentical) {
  const fs::path a = small_dataset("cli_sim");
  const auto first = snapshot(a);
  EXPECT_EQ(first.size(), 8u * 9u + 2u);  // 9 files per pair, manifest, config echo
  const std::string again = "simulate --input " + q(a.parent_path() / "scenes") + " --out " + q(a) + " --crop 64 --seed ";
  ASSERT_EQ(run(again + "4").code, 0);
  EXPECT_EQ(snapshot(a), first);

  ASSERT_EQ(run(again + "5").code, 0);
  EXPECT_NE(snapshot(a).at("pairs/000000/I0.tif"), first.at("pairs/000000/I0.tif"));
}

TEST(Simulate, SeedFromEnvironmentMatchesTheFlag) {
  const fs::path root = temp_dir("cli_env_seed");
  ASSERT_EQ(run("synth-scenes --out " + q(root / "flag") + " --count 1 --size 64 --seed 6").code, 0);
  ASSERT_EQ(run("synth-scenes --out " + q(root / "env") + " --count 1 --size 64", "L1BSR_SEED=6").code, 0);
  ASSERT_EQ(run("synth-scenes --out " + q(root / "other") + " --count 1 --size 64", "L1BSR_SEED=7").code, 0);
  EXPECT_EQ(snapshot(root / "flag").at("scene_0000.tif"), snapshot(root / "env").at("scene_0000.tif"));
  EXPECT_NE(snapshot(root / "flag").at("scene_0000.tif"), snapshot(root / "other").at("scene_0000.tif"));
}

TEST(Simulate, ZeroMotionZeroNoiseGivesIdenticalImages) {
  const fs::path ds = small_dataset("cli_zero",
                                    "--scene-corner-max 0 --band-translation-max 0 "
                                    "--band-perturbation-max 0 --noise-std 0");
  const auto data = simulation::load_dataset(ds);
  ASSERT_EQ(data.items.size(), 8u);
  for (const auto& item : data.items) {
    EXPECT_EQ(item.i0, item.i1) << item.id;
    for (const auto& f : *item.flows)
      for (float v : f.data()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Simulate, StoredGeometryAndFlowsAreConsistent) {
  const fs::path ds = small_dataset("cli_geo", "--set simulation.noise_std=0");
  const auto data = simulation::load_dataset(ds);
  for (const auto& item : data.items) {
    const int h = item.i0.height(), w = item.i0.width();
    for (int t = 0; t < 2; ++t)
      for (int i = 0; i < kNumBands; ++i) {
        const auto flow = geometry::homography_to_flow<float>(item.geometry->band[t][i].rescaled(2.0), h, w);
        const auto rebuilt = geometry::warp_and_downsample((*item.hr)[t].channel(i), flow);
        EXPECT_LE(max_abs_interior(rebuilt, (t ? item.i1 : item.i0).channel(i), 4), 1e-3);
      }
    for (int i = 0; i < kNumBands; ++i)
      EXPECT_EQ((*item.flows)[i], simulation::gt_flow(*item.geometry, 1, i, h, w));
  }
  const auto echo = nlohmann::json::parse(imagery::read_text(ds / "config.json"));
  EXPECT_EQ(echo["simulation"]["noise_std"], 0.0);
  EXPECT_EQ(echo["seed"], 4);
}

// ---------------------------------------------------------------------------
// Training, inference and evaluation

TEST(Pipeline, TrainInferEvaluate) {
  const fs::path ds = small_dataset("cli_pipeline");
  const fs::path root = ds.parent_path();
  auto r = run("train-csr --dataset " + q(ds) + " --val " + q(ds) + " --out " + q(root / "csr") + " " + kTinyCsr +
               " --validate-every 2 --seed 1");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"final.ck", "best.ck", "state.ck", "log.ndjson", "config.json"})
    EXPECT_TRUE(fs::exists(root / "csr" / f)) << f;

  r = run("train-rec --dataset " + q(ds) + " --val " + q(ds) + " --csr " + q(root / "csr/final.ck") + " --out " +
          q(root / "rec") + " " + kTinyRec + " --validate-every 2 --seed 1");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(run("train-rec --dataset " + q(ds) + " --out " + q(root / "rec_nocsr") + " " + kTinyRec).code, 2);

  // Shape and determinism of inference.
  Rng scene_rng(3);
  imagery::save_raster(simulation::synthesize_scene(scene_rng, 96, 96), root / "in.tif", imagery::BitDepth::f32);
  const std::string infer = "infer --rec " + q(root / "rec/final.ck") + " --input " + q(root / "in.tif");
  ASSERT_EQ(run(infer + " --out " + q(root / "a.tif") + " --preview " + q(root / "a.png")).code, 0);
  ASSERT_EQ(run(infer + " --out " + q(root / "b.tif")).code, 0);
  const auto out = imagery::load_raster(root / "a.tif");
  EXPECT_EQ(out.channels(), 4);
  EXPECT_EQ(out.height(), 192);
  EXPECT_EQ(out.width(), 192);
  EXPECT_EQ(imagery::read_text(root / "a.tif"), imagery::read_text(root / "b.tif"));
  EXPECT_EQ(imagery::read_text(root / "a.png").substr(1, 3), "PNG");
  imagery::save_raster(Image<float>(4, 12, 12, 0.5f), root / "tiny.tif", imagery::BitDepth::f32);
  EXPECT_EQ(run("infer --rec " + q(root / "rec/final.ck") + " --input " + q(root / "tiny.tif") + " --out " +
                q(root / "c.tif"))
                .code,
            3);

  // eval-sr agrees with aligned PSNR computed on the inferred output.
  r = run("eval-sr --rec " + q(root / "rec/final.ck") + " --dataset " + q(ds) + " --out " + q(root / "sr.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PSNR"), std::string::npos) << r.out;
  const auto report = nlohmann::json::parse(imagery::read_text(root / "sr.json"));
  const auto data = simulation::load_dataset(ds);
  double g_sum = 0;
  for (const auto& item : data.items) {
    imagery::save_raster(item.i0, root / "item.tif", imagery::BitDepth::f32);
    ASSERT_EQ(run("infer --rec " + q(root / "rec/final.ck") + " --input " + q(root / "item.tif") + " --out " +
                  q(root / "item_sr.tif"))
                  .code,
              0);
    const auto sr = imagery::load_raster(root / "item_sr.tif");
    g_sum += evaluation::aligned_psnr_bands(sr, (*item.hr)[0])[1];
  }
  EXPECT_NEAR(report["psnr_db"]["g"].get<double>(), g_sum / data.items.size(), 1e-6);

  r = run("eval-sr --dataset " + q(ds) + " --out " + q(root / "bicubic.json") + " --bands g --no-align");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto bic = nlohmann::json::parse(imagery::read_text(root / "bicubic.json"));
  EXPECT_EQ(bic["alignment"], "none");
  EXPECT_EQ(bic["psnr_db"].size(), 1u);

  r = run("eval-csr --csr " + q(root / "csr/final.ck") + " --dataset " + q(ds) + " --out " + q(root / "csr.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto m = nlohmann::json::parse(imagery::read_text(root / "csr.json"));
  EXPECT_EQ(m["samples"], 8);
  EXPECT_TRUE(fs::exists(root / "csr.json.config.json"));
  EXPECT_EQ(run("eval-csr --csr " + q(root / "rec/final.ck") + " --dataset " + q(ds) + " --out " +
                q(root / "x.json"))
                .code,
            3);
}

TEST(Pipeline, RerunsResumesAndEchoesReproduceCheckpoints) {
  const fs::path ds = small_dataset("cli_repro");
  const fs::path root = ds.parent_path();
  const std::string base = "train-csr --dataset " + q(ds) + " " + kTinyCsr + " --seed 2 --out ";
  ASSERT_EQ(run(base + q(root / "a")).code, 0);
  ASSERT_EQ(run(base + q(root / "b")).code, 0);
  EXPECT_EQ(imagery::read_text(root / "a/final.ck"), imagery::read_text(root / "b/final.ck"));

  ASSERT_EQ(run(base + q(root / "c") + " --stop-after 2").code, 0);
  EXPECT_FALSE(fs::exists(root / "c/final.ck"));
  ASSERT_EQ(run(base + q(root / "c") + " --resume").code, 0);
  EXPECT_EQ(imagery::read_text(root / "a/final.ck"), imagery::read_text(root / "c/final.ck"));
  EXPECT_EQ(run(base + q(root / "d") + " --resume").code, 3);

  // The echoed config alone reproduces the run.
  ASSERT_EQ(run("train-csr --config " + q(root / "a/config.json") + " --set paths.out=" + q(root / "e")).code, 0);
  EXPECT_EQ(imagery::read_text(root / "a/final.ck"), imagery::read_text(root / "e/final.ck"));

  // The header records the worker count; the weights do not depend on it.
  ASSERT_EQ(run(base + q(root / "f") + " --workers 3").code, 0);
  EXPECT_EQ(networks::load_csr(root / "a/final.ck").params().checksum(),
            networks::load_csr(root / "f/final.ck").params().checksum());
}
