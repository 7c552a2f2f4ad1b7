// l1bsr: simulate, train, infer and evaluate from the command line.
#include <CLI11.hpp>

#include <iostream>

#include "l1bsr/cli.hpp"

namespace {

using namespace l1bsr;
using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Options shared by every subcommand. Typed flags become dotted overrides so
/// that they layer over the config file exactly like --set.
struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  Overrides extra;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override, key.path=value (repeatable)");
    app->add_option("--seed", seed, "seed (falls back to the config, then L1BSR_SEED)");
    app->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  }

  template <class T>
  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<T>(
        name, [this, key](const T& v) { extra.emplace_back(key, nlohmann::json(v).dump()); }, help);
  }

  void path(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        name, [this, key](const std::string& v) { extra.emplace_back(key, nlohmann::json(v).dump()); }, help);
  }

  cli::CliConfig resolve() const {
    Overrides all;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key.path=value, got " + s);
      all.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& kv : extra) all.push_back(kv);
    if (seed) all.emplace_back("seed", std::to_string(*seed));
    if (workers) all.emplace_back("training.workers", std::to_string(*workers));
    return cli::resolve_config(config.empty() ? std::nullopt : std::optional<std::filesystem::path>(config), all);
  }
};

void phase_flags(Common& c, CLI::App* app, const std::string& phase) {
  const std::string p = "training." + phase + ".";
  c.flag<int>(app, "--iterations", p + "iterations", "training iterations");
  c.flag<int>(app, "--batch", p + "batch", "batch size");
  c.flag<int>(app, "--crop", p + "crop", "LR crop side");
  c.flag<double>(app, "--lr", p + "lr", "learning rate");
  c.flag<int>(app, "--validate-every", p + "validate_every", "validation cadence (0 disables)");
  c.flag<int>(app, "--checkpoint-every", p + "checkpoint_every", "checkpoint cadence (0 disables)");
  c.path(app, "--dataset", "paths.dataset", "training dataset directory");
  c.path(app, "--val", "paths.val_dataset", "validation dataset directory");
  c.path(app, "--out", "paths.out", "run directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised x2 super-resolution and band alignment of 4-band imagery"};
  app.require_subcommand(1);

  Common common;
  bool resume = false;
  long stop_after = -1;
  int count = 16, size = 512;
  std::string preview;

  auto* simulate = app.add_subcommand("simulate", "simulate LR pairs from 4-band HR rasters");
  common.path(simulate, "--input", "paths.input", "directory of HR .tif rasters");
  common.path(simulate, "--out", "paths.out", "dataset directory");
  common.flag<int>(simulate, "--crop", "simulation.crop", "HR crop side");
  common.flag<std::string>(simulate, "--split", "simulation.split", "train or test");
  common.flag<double>(simulate, "--blur-sigma", "simulation.blur_sigma", "Gaussian PSF sigma (HR px)");
  common.flag<double>(simulate, "--scene-corner-max", "simulation.scene_corner_max",
                      "max corner displacement of the scene homographies (HR px)");
  common.flag<double>(simulate, "--band-translation-max", "simulation.band_translation_max",
                      "max translation of the band homographies (HR px)");
  common.flag<double>(simulate, "--band-perturbation-max", "simulation.band_perturbation_max",
                      "max projective jitter of the band homographies (HR px)");
  common.flag<double>(simulate, "--noise-std", "simulation.noise_std", "Gaussian noise std, fraction of [0,1]");
  common.flag<double>(simulate, "--source-band-misalignment", "simulation.source_band_misalignment",
                      "residual band shifts already present in the HR source (HR px)");

  auto* synth = app.add_subcommand("synth-scenes", "write synthetic 4-band HR scenes");
  common.path(synth, "--out", "paths.out", "output directory");
  synth->add_option("--count", count, "number of scenes");
  synth->add_option("--size", size, "scene side in px");

  auto* train_csr = app.add_subcommand("train-csr", "phase 1: train the registration network");
  phase_flags(common, train_csr, "csr");
  common.flag<std::string>(train_csr, "--loss", "training.csr_loss", "anchor or supervised_flow");

  auto* train_rec = app.add_subcommand("train-rec", "phase 2: train the reconstruction network");
  phase_flags(common, train_rec, "rec");
  common.flag<std::string>(train_rec, "--loss", "training.rec_loss", "self_sr, self_sr_deconv or supervised_l1");
  common.flag<std::string>(train_rec, "--bands", "rec.bands", "band subset, e.g. bgrn or g");
  common.path(train_rec, "--csr", "paths.csr_checkpoint", "trained CSR checkpoint");

  for (auto* sub : {train_csr, train_rec}) {
    sub->add_flag("--resume", resume, "continue from <out>/state.ck");
    sub->add_option("--stop-after", stop_after, "stop (with state saved) after this many steps");
  }

  auto* infer = app.add_subcommand("infer", "super-resolve one raster");
  common.path(infer, "--rec", "paths.rec_checkpoint", "REC checkpoint");
  common.path(infer, "--input", "paths.input", "LR 4-band raster");
  common.path(infer, "--out", "paths.out", "HR output raster (.tif)");
  infer->add_option("--preview", preview, "optional PNG panel, LR next to HR");

  auto* eval_csr = app.add_subcommand("eval-csr", "registration error matrix on a simulated test set");
  common.path(eval_csr, "--csr", "paths.csr_checkpoint", "CSR checkpoint");
  common.path(eval_csr, "--dataset", "paths.dataset", "test dataset directory");
  common.path(eval_csr, "--out", "paths.out", "JSON report path");
  common.flag<std::string>(eval_csr, "--error-mode", "evaluation.error_mode", "euclidean or component");

  auto* eval_sr = app.add_subcommand("eval-sr", "aligned PSNR of a REC model (bicubic without --rec)");
  common.path(eval_sr, "--rec", "paths.rec_checkpoint", "REC checkpoint");
  common.path(eval_sr, "--dataset", "paths.dataset", "test dataset directory");
  common.path(eval_sr, "--out", "paths.out", "JSON report path");
  common.flag<std::string>(eval_sr, "--bands", "rec.bands", "bands for the bicubic baseline");
  eval_sr->add_flag_function(
      "--no-align", [&](std::int64_t) { common.extra.emplace_back("evaluation.align", "false"); },
      "skip TV-L1 alignment");

  for (auto* sub : app.get_subcommands({})) common.add_to(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  try {
    const cli::CliConfig cfg = common.resolve();
    if (simulate->parsed()) cli::cmd_simulate(cfg);
    else if (synth->parsed()) cli::cmd_synth_scenes(cfg, count, size);
    else if (train_csr->parsed()) cli::cmd_train_csr(cfg, resume, stop_after);
    else if (train_rec->parsed()) cli::cmd_train_rec(cfg, resume, stop_after);
    else if (infer->parsed()) cli::cmd_infer(cfg, preview);
    else if (eval_csr->parsed()) cli::cmd_eval_csr(cfg);
    else if (eval_sr->parsed()) cli::cmd_eval_sr(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return cli::kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return cli::kExitNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return cli::kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return cli::kExitOk;
}
