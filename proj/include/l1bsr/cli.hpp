#pragma once

#include <png.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "l1bsr/evaluation.hpp"
#include "l1bsr/training.hpp"

// Command implementations behind the l1bsr executable. Each command takes a
// fully resolved configuration and writes its artifacts plus a config echo.
namespace l1bsr::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

// ---------------------------------------------------------------------------
// Configuration

struct EvaluationConfig {
  std::string error_mode = "euclidean";  // euclidean | component
  bool align = true;                     // TV-L1 alignment before PSNR
};

struct Paths {
  std::string input;
  std::string dataset;
  std::string val_dataset;
  std::string csr_checkpoint;
  std::string rec_checkpoint;
  std::string out;
};

/// Defaults are the desk profile; the full-scale schedule ships as a config file.
struct CliConfig {
  simulation::SimulationParams simulation;
  int crop = 512;               // HR crop side used by simulate
  std::string split = "train";  // manifest split written by simulate
  networks::CsrConfig csr = networks::CsrConfig::desk();
  networks::RecConfig rec = networks::RecConfig::desk();
  training::TrainConfig training = training::TrainConfig::desk();
  EvaluationConfig evaluation;
  Paths paths;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const CliConfig& c) {
  nlohmann::json sim = c.simulation;
  sim.erase("seed");
  sim["crop"] = c.crop;
  sim["split"] = c.split;
  nlohmann::json tr = c.training;
  tr.erase("seed");
  return {{"simulation", sim},
          {"csr", c.csr},
          {"rec", c.rec},
          {"training", tr},
          {"evaluation", {{"error_mode", c.evaluation.error_mode}, {"align", c.evaluation.align}}},
          {"paths",
           {{"input", c.paths.input},
            {"dataset", c.paths.dataset},
            {"val_dataset", c.paths.val_dataset},
            {"csr_checkpoint", c.paths.csr_checkpoint},
            {"rec_checkpoint", c.paths.rec_checkpoint},
            {"out", c.paths.out}}},
          {"seed", c.seed}};
}

inline void read_simulation(const nlohmann::json& j, CliConfig& c) {
  StrictObject o(j, "simulation");
  auto& p = c.simulation;
  o.get("blur_sigma", p.blur_sigma).get("scene_corner_max", p.scene_corner_max);
  o.get("band_translation_max", p.band_translation_max).get("band_perturbation_max", p.band_perturbation_max);
  o.get("noise_std", p.noise_std).get("source_band_misalignment", p.source_band_misalignment);
  o.get("crop", c.crop).get("split", c.split).finish();
  p.validate();
  if (c.crop <= 0 || c.crop % 2) throw ConfigError("simulation.crop must be positive and even");
  if (c.split != "train" && c.split != "test") throw ConfigError("simulation.split must be train or test");
}

/// Overlays `j` onto `c`. Unknown keys anywhere are rejected. Seeds live only
/// at the top level.
inline void read_cli_config(const nlohmann::json& j, CliConfig& c) {
  StrictObject o(j, "config");
  if (o.has("simulation")) read_simulation(o.at("simulation"), c);
  if (o.has("csr")) {
    nlohmann::json merged = c.csr;
    merged.update(o.at("csr"));
    c.csr = merged.get<networks::CsrConfig>();
  }
  if (o.has("rec")) {
    nlohmann::json merged = c.rec;
    merged.update(o.at("rec"));
    c.rec = merged.get<networks::RecConfig>();
  }
  if (o.has("training")) {
    if (o.at("training").contains("seed")) throw ConfigError("training.seed: use the top-level seed");
    training::read_train_config(o.at("training"), c.training);
  }
  if (o.has("evaluation")) {
    StrictObject e(o.at("evaluation"), "evaluation");
    e.get("error_mode", c.evaluation.error_mode).get("align", c.evaluation.align).finish();
    evaluation::parse_error_mode(c.evaluation.error_mode);
  }
  if (o.has("paths")) {
    StrictObject p(o.at("paths"), "paths");
    p.get("input", c.paths.input).get("dataset", c.paths.dataset).get("val_dataset", c.paths.val_dataset);
    p.get("csr_checkpoint", c.paths.csr_checkpoint).get("rec_checkpoint", c.paths.rec_checkpoint);
    p.get("out", c.paths.out).finish();
  }
  o.get("seed", c.seed).finish();
}

/// Sets `value` at a dotted key path such as "training.rec.lr", creating
/// objects as needed. The value is parsed as JSON, else taken as a string.
inline void set_dotted(nlohmann::json& doc, const std::string& key, const std::string& value) {
  if (key.empty()) throw ConfigError("empty override key");
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    parsed = value;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed override key: " + key);
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[part] = parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline nlohmann::json read_json_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(imagery::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  } catch (const DataError&) {
    throw ConfigError("cannot read config " + path.string());
  }
}

/// Layers: built-in defaults, then the config file, then overrides (dotted
/// keys in order). The seed falls back to L1BSR_SEED when neither the file nor
/// an override sets it.
inline CliConfig resolve_config(const std::optional<fs::path>& file,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::json doc = file ? read_json_file(*file) : nlohmann::json::object();
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : overrides) set_dotted(doc, k, v);
  if (!doc.contains("seed"))
    if (const char* env = std::getenv("L1BSR_SEED")) {
      try {
        std::size_t used = 0;
        const unsigned long long s = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument("trailing");
        doc["seed"] = s;
      } catch (const std::exception&) {
        throw ConfigError(std::string("L1BSR_SEED is not an unsigned integer: ") + env);
      }
    }
  CliConfig c;
  read_cli_config(doc, c);
  c.simulation.seed = c.seed;
  c.training.seed = c.seed;
  return c;
}

inline void echo_config(const CliConfig& c, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  imagery::write_text(path, to_json(c).dump(2) + "\n");
}

/// Echo location for commands whose output is one file: "<out>.config.json".
inline fs::path echo_path_for_file(const fs::path& out) { return fs::path(out.string() + ".config.json"); }

inline const std::string& need(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(std::string("missing required path: ") + what);
  return value;
}

// ---------------------------------------------------------------------------
// PNG previews

/// 8-bit PNG: 1 channel is grey, 3 channels RGB. Values in [0,1] are clamped.
inline void write_png(const Image<float>& im, const fs::path& path) {
  require(im.channels() == 1 || im.channels() == 3, "write_png: 1 or 3 channels expected");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialization failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(im.width()) * im.channels());
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, im.width(), im.height(), 8, im.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < im.height(); ++y) {
    for (int x = 0; x < im.width(); ++x)
      for (int c = 0; c < im.channels(); ++c)
        row[static_cast<std::size_t>(x) * im.channels() + c] =
            static_cast<png_byte>(std::lround(255.0 * std::clamp(im(c, y, x), 0.0f, 1.0f)));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Side-by-side panel: nearest-neighbour x2 of the LR input next to the HR
/// output, as a true-colour composite (grey for single-band models). Both
/// halves share one contrast stretch.
inline Image<float> preview_panel(const Image<float>& lr, const Image<float>& hr, const std::string& bands) {
  std::vector<int> pick;
  for (char c : std::string("rgb"))
    if (bands.find(c) != std::string::npos) pick.push_back(static_cast<int>(bands.find(c)));
  if (pick.size() != 3) pick = {static_cast<int>(bands.find('g') != std::string::npos ? bands.find('g') : 0)};
  const int H = hr.height(), W = hr.width();
  Image<float> panel(static_cast<int>(pick.size()), H, 2 * W);
  float lo = 1, hi = 0;
  for (int c : pick)
    for (float v : hr.channel(c).data()) lo = std::min(lo, v), hi = std::max(hi, v);
  const float scale = hi > lo ? 1.0f / (hi - lo) : 1.0f;
  for (std::size_t k = 0; k < pick.size(); ++k)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        panel(static_cast<int>(k), y, x) = (lr(pick[k], y / 2, x / 2) - lo) * scale;
        panel(static_cast<int>(k), y, W + x) = (hr(pick[k], y, x) - lo) * scale;
      }
  return panel;
}

// ---------------------------------------------------------------------------
// Commands

inline std::vector<fs::path> list_rasters(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("input directory not found: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".tif" || ext == ".tiff")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no .tif rasters in " + dir.string());
  return out;
}

inline void cmd_simulate(const CliConfig& c) {
  const fs::path out = need(c.paths.out, "out");
  std::vector<MultiBandImage> crops;
  for (const auto& path : list_rasters(need(c.paths.input, "input"))) {
    const MultiBandImage hr = imagery::load_raster(path);
    check_multiband(hr);
    if (hr.height() < c.crop || hr.width() < c.crop)
      throw DataError(path.filename().string() + " is smaller than the " + std::to_string(c.crop) + " px crop");
    for (auto& crop : simulation::tile_crops(hr, c.crop)) crops.push_back(std::move(crop));
  }
  if (fs::exists(out / "pairs")) fs::remove_all(out / "pairs");
  const auto manifest = simulation::write_dataset(crops, c.simulation, out, c.split);
  echo_config(c, out / "config.json");
  std::cout << "simulated " << manifest.entries.size() << " pairs into " << out.string() << "\n";
}

/// Synthetic 4-band HR scenes, usable as `simulate` input when no real
/// imagery is at hand.
inline void cmd_synth_scenes(const CliConfig& c, int count, int size) {
  if (count <= 0 || size <= 0 || size % 2) throw ConfigError("synth-scenes: count > 0 and an even size required");
  const fs::path out = need(c.paths.out, "out");
  fs::create_directories(out);
  Rng rng(c.seed);
  for (int k = 0; k < count; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d.tif", k);
    imagery::save_raster(simulation::synthesize_scene(rng, size, size), out / name, imagery::BitDepth::f32);
  }
  echo_config(c, out / "config.json");
  std::cout << "wrote " << count << " scenes of " << size << " px into " << out.string() << "\n";
}

inline std::optional<simulation::Dataset> load_optional(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return simulation::load_dataset(path);
}

inline training::RunOptions run_options(const CliConfig& c, bool resume, long stop_after) {
  training::RunOptions run;
  run.out_dir = need(c.paths.out, "out");
  if (resume) {
    run.resume = run.out_dir / "state.ck";
    if (!fs::exists(*run.resume)) throw DataError("nothing to resume: " + run.resume->string() + " missing");
  }
  run.stop_after = stop_after;
  run.on_record = [](const nlohmann::json& r) {
    if (r["split"] == "val") std::cout << "step " << r["step"] << " validation " << r["loss"] << "\n";
  };
  return run;
}

inline void cmd_train_csr(const CliConfig& c, bool resume, long stop_after) {
  const auto train = simulation::load_dataset(need(c.paths.dataset, "dataset"));
  const auto val = load_optional(c.paths.val_dataset);
  const auto run = run_options(c, resume, stop_after);
  fs::create_directories(run.out_dir);
  echo_config(c, run.out_dir / "config.json");
  const auto res = training::train_csr(train, val ? &*val : nullptr, c.csr, c.training, run);
  std::cout << "csr: " << res.steps << " steps";
  if (res.best_step >= 0) std::cout << ", best validation " << res.best_metric << " at step " << res.best_step;
  std::cout << "\n";
}

inline void cmd_train_rec(const CliConfig& c, bool resume, long stop_after) {
  const auto train = simulation::load_dataset(need(c.paths.dataset, "dataset"));
  const auto val = load_optional(c.paths.val_dataset);
  std::optional<networks::Csr<float>> csr;
  if (c.training.rec_loss != "supervised_l1") csr = networks::load_csr(need(c.paths.csr_checkpoint, "csr_checkpoint"));
  const auto run = run_options(c, resume, stop_after);
  fs::create_directories(run.out_dir);
  echo_config(c, run.out_dir / "config.json");
  const auto res = training::train_rec(train, val ? &*val : nullptr, csr ? &*csr : nullptr, c.rec, c.training, run);
  std::cout << "rec: " << res.steps << " steps";
  if (res.best_step >= 0) std::cout << ", best validation " << res.best_metric << " at step " << res.best_step;
  std::cout << "\n";
}

inline void cmd_infer(const CliConfig& c, const std::string& preview) {
  const auto rec = networks::load_rec(need(c.paths.rec_checkpoint, "rec_checkpoint"));
  const Image<float> lr = networks::select_bands(imagery::load_raster(need(c.paths.input, "input")), rec.config());
  if (lr.height() < 16 || lr.width() < 16) throw DataError("infer: input must be at least 16x16");
  const Image<float> hr = evaluation::clamp01(networks::rec_forward(rec, lr));
  const fs::path out = need(c.paths.out, "out");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  imagery::save_raster(hr, out, imagery::BitDepth::f32);
  if (!preview.empty()) write_png(preview_panel(lr, hr, rec.config().bands), preview);
  echo_config(c, echo_path_for_file(out));
  std::cout << "wrote " << hr.width() << "x" << hr.height() << "x" << hr.channels() << " to " << out.string() << "\n";
}

inline void write_report(const fs::path& out, nlohmann::json report, const CliConfig& c) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  imagery::write_text(out, report.dump(2) + "\n");
  echo_config(c, echo_path_for_file(out));
}

inline void cmd_eval_csr(const CliConfig& c) {
  const auto csr = networks::load_csr(need(c.paths.csr_checkpoint, "csr_checkpoint"));
  const auto ds = simulation::load_dataset(need(c.paths.dataset, "dataset"));
  const auto m = evaluation::registration_error_matrix(csr, ds, evaluation::parse_error_mode(c.evaluation.error_mode),
                                                       c.training.workers);
  nlohmann::json report = evaluation::to_json(m);
  report["checkpoint"] = c.paths.csr_checkpoint;
  report["dataset"] = c.paths.dataset;
  write_report(need(c.paths.out, "out"), report, c);
  std::cout << evaluation::format_table(m);
}

/// Evaluates the REC checkpoint, or bicubic interpolation of the configured
/// bands when no checkpoint is given.
inline void cmd_eval_sr(const CliConfig& c) {
  const auto ds = simulation::load_dataset(need(c.paths.dataset, "dataset"));
  evaluation::SrEvalOptions opt;
  opt.align = c.evaluation.align;
  opt.workers = c.training.workers;
  evaluation::PsnrReport r;
  std::string label;
  if (c.paths.rec_checkpoint.empty()) {
    r = evaluation::evaluate_bicubic(ds, c.rec.bands, opt);
    label = "bicubic";
  } else {
    r = evaluation::evaluate_sr(networks::load_rec(c.paths.rec_checkpoint), ds, opt);
    label = fs::path(c.paths.rec_checkpoint).filename().string();
  }
  nlohmann::json report = evaluation::to_json(r);
  report["model"] = label;
  report["dataset"] = c.paths.dataset;
  write_report(need(c.paths.out, "out"), report, c);
  std::cout << evaluation::format_table(r, label);
}

}  // namespace l1bsr::cli
