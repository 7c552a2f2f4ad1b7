#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "l1bsr/core/config.hpp"
#include "l1bsr/core/errors.hpp"
#include "l1bsr/core/rng.hpp"
#include "l1bsr/evaluation.hpp"
#include "l1bsr/losses.hpp"
#include "l1bsr/networks.hpp"
#include "l1bsr/nn/optim.hpp"
#include "l1bsr/simulation.hpp"

// Two-phase training: CSR with anchor consistency, then REC with the
// Self-SR loss through the frozen CSR.
namespace l1bsr::training {

namespace fs = std::filesystem;
using networks::Csr;
using nn::ParamSet;
using networks::CsrConfig;
using networks::Rec;
using networks::RecConfig;
using simulation::Dataset;
using simulation::DatasetItem;

// ---------------------------------------------------------------------------
// Configuration

struct PhaseConfig {
  int batch = 16;
  int iterations = 60000;
  int crop = 96;  // LR crop side
  double lr = 5e-5;
  double lr_decay = 1.0;
  int decay_every = 0;  // 0 keeps the rate constant
  int validate_every = 0;
  int checkpoint_every = 0;

  /// lr * lr_decay^floor(step / decay_every), step counted from 0.
  double learning_rate(long step) const {
    if (decay_every <= 0) return lr;
    return lr * std::pow(lr_decay, static_cast<double>(step / decay_every));
  }

  void validate(const std::string& where) const {
    if (batch <= 0 || iterations <= 0 || crop <= 0)
      throw ConfigError(where + ": batch, iterations and crop must be positive");
    if (!(lr > 0)) throw ConfigError(where + ": learning rate must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError(where + ": lr_decay must lie in (0, 1]");
    if (decay_every < 0 || validate_every < 0 || checkpoint_every < 0)
      throw ConfigError(where + ": cadences must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const PhaseConfig& p) {
  j = {{"batch", p.batch},           {"iterations", p.iterations},
       {"crop", p.crop},             {"lr", p.lr},
       {"lr_decay", p.lr_decay},     {"decay_every", p.decay_every},
       {"validate_every", p.validate_every}, {"checkpoint_every", p.checkpoint_every}};
}

inline void read_phase(const nlohmann::json& j, PhaseConfig& p, const std::string& where) {
  StrictObject o(j, where);
  o.get("batch", p.batch).get("iterations", p.iterations).get("crop", p.crop).get("lr", p.lr);
  o.get("lr_decay", p.lr_decay).get("decay_every", p.decay_every);
  o.get("validate_every", p.validate_every).get("checkpoint_every", p.checkpoint_every).finish();
}

/// Defaults are the full-scale schedule; desk() is the small CPU profile.
struct TrainConfig {
  PhaseConfig csr{64, 200000, 96, 5e-5, 1.0, 0, 5000, 5000};
  PhaseConfig rec{16, 60000, 96, 5e-5, 0.6, 12000, 5000, 5000};
  int val_crop = 256;               // side of the centred REC validation crop
  bool augment = true;              // flips and quarter turns
  std::string csr_loss = "anchor";  // anchor | supervised_flow
  std::string rec_loss = "self_sr"; // self_sr | self_sr_deconv | supervised_l1
  double kernel_sigma = 0.7;        // deconvolution kernel
  int kernel_size = 7;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int workers = 1;

  static TrainConfig desk() {
    TrainConfig c;
    c.csr = {8, 5000, 32, 5e-4, 1.0, 0, 500, 1000};
    c.rec = {4, 5000, 32, 5e-4, 0.6, 1000, 500, 1000};
    c.val_crop = 64;
    return c;
  }

  void validate() const {
    csr.validate("training.csr");
    rec.validate("training.rec");
    if (val_crop <= 0) throw ConfigError("training.val_crop must be positive");
    if (csr_loss != "anchor" && csr_loss != "supervised_flow")
      throw ConfigError("training.csr_loss must be anchor or supervised_flow");
    if (rec_loss != "self_sr" && rec_loss != "self_sr_deconv" && rec_loss != "supervised_l1")
      throw ConfigError("training.rec_loss must be self_sr, self_sr_deconv or supervised_l1");
    if (!(kernel_sigma >= 0) || kernel_size <= 0 || kernel_size % 2 == 0)
      throw ConfigError("training: kernel needs sigma >= 0 and an odd positive size");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
      throw ConfigError("training: invalid Adam hyperparameters");
    if (workers <= 0) throw ConfigError("training.workers must be positive");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"csr", c.csr},
       {"rec", c.rec},
       {"val_crop", c.val_crop},
       {"augment", c.augment},
       {"csr_loss", c.csr_loss},
       {"rec_loss", c.rec_loss},
       {"kernel_sigma", c.kernel_sigma},
       {"kernel_size", c.kernel_size},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"seed", c.seed},
       {"workers", c.workers}};
}

/// Overlays the keys present in `j` onto `c`; unknown keys are rejected.
inline void read_train_config(const nlohmann::json& j, TrainConfig& c) {
  StrictObject o(j, "training");
  if (o.has("csr")) read_phase(o.at("csr"), c.csr, "training.csr");
  if (o.has("rec")) read_phase(o.at("rec"), c.rec, "training.rec");
  o.get("val_crop", c.val_crop).get("augment", c.augment).get("csr_loss", c.csr_loss);
  o.get("rec_loss", c.rec_loss).get("kernel_sigma", c.kernel_sigma).get("kernel_size", c.kernel_size);
  o.get("adam_beta1", c.adam_beta1).get("adam_beta2", c.adam_beta2).get("adam_eps", c.adam_eps);
  o.get("seed", c.seed).get("workers", c.workers).finish();
  c.validate();
}

// ---------------------------------------------------------------------------
// Randomness

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t kCsrStream = 0x637372;  // "csr"
inline constexpr std::uint64_t kRecStream = 0x726563;  // "rec"

/// Independent stream for sample `index` of step `step`. Every sample has its
/// own stream, so the drawn sequence does not depend on how many workers
/// prepare the batch, and resuming only needs the step counter.
inline Rng sample_rng(std::uint64_t seed, std::uint64_t stream, long step, int index) {
  return Rng(mix64(mix64(mix64(seed ^ mix64(stream)) + static_cast<std::uint64_t>(step)) +
                   static_cast<std::uint64_t>(index)));
}

// ---------------------------------------------------------------------------
// Augmentation

/// One of the 8 symmetries of the square: op % 4 quarter turns after a
/// horizontal flip when op >= 4. `factor` is the decimation factor of the grid
/// relative to the LR grid (2 for HR), so that reflections fix the sites
/// shared with the LR grid and decimation commutes with the transform.
template <class T>
Image<T> dihedral(const Image<T>& im, int op, int factor = 1) {
  require(op >= 0 && op < 8, "dihedral: op must be in [0, 8)");
  Image<T> cur = im;
  auto clampi = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  if (op >= 4) {
    Image<T> out(cur.channels(), cur.height(), cur.width());
    const int r = cur.width() - factor;
    for (int c = 0; c < cur.channels(); ++c)
      for (int y = 0; y < cur.height(); ++y)
        for (int x = 0; x < cur.width(); ++x) out(c, y, x) = cur(c, y, clampi(r - x, cur.width()));
    cur = std::move(out);
  }
  for (int k = 0; k < op % 4; ++k) {
    // out(y, x) = in(x, r - y): a quarter turn.
    Image<T> out(cur.channels(), cur.width(), cur.height());
    const int r = cur.width() - factor;
    for (int c = 0; c < cur.channels(); ++c)
      for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) out(c, y, x) = cur(c, x, clampi(r - y, cur.width()));
    cur = std::move(out);
  }
  return cur;
}

/// Same spatial transform as dihedral(), with displacement vectors mapped by
/// its linear part so that pullback relations are preserved.
template <class T>
FlowField<T> dihedral_flow(const FlowField<T>& f, int op) {
  Image<T> planes = dihedral(static_cast<const Image<T>&>(f), op);
  for (std::size_t i = 0; i < planes.plane_size(); ++i) {
    T dx = planes.plane(0)[i], dy = planes.plane(1)[i];
    if (op >= 4) dx = -dx;
    for (int k = 0; k < op % 4; ++k) {
      const T t = dx;
      dx = dy;
      dy = -t;
    }
    planes.plane(0)[i] = dx;
    planes.plane(1)[i] = dy;
  }
  return FlowField<T>(std::move(planes));
}

// ---------------------------------------------------------------------------
// CSR sampling

/// One anchor-consistency triple. `ref_image` says which image of the pair
/// plays I0 (the other plays I1); `anchor` selects I0 (0) or I1 (1) as the
/// source of the anchor band j.
struct CsrExample {
  int ref_image = 0;
  int band_i = 0;
  int band_j = 0;
  int anchor = 0;
  BandImage i0i, itj, i1i;
};

/// Draws, in order: reference/target order, band i, band j (i == j allowed),
/// anchor side.
inline CsrExample sample_csr_example(const MultiBandImage& a, const MultiBandImage& b, Rng& rng) {
  check_multiband(a);
  require(a.same_shape(b), "sample_csr_example: pair shapes differ");
  CsrExample ex;
  ex.ref_image = rng.uniform_int(2);
  ex.band_i = rng.uniform_int(kNumBands);
  ex.band_j = rng.uniform_int(kNumBands);
  ex.anchor = rng.uniform_int(2);
  const MultiBandImage& i0 = ex.ref_image == 0 ? a : b;
  const MultiBandImage& i1 = ex.ref_image == 0 ? b : a;
  ex.i0i = i0.channel(ex.band_i);
  ex.i1i = i1.channel(ex.band_i);
  ex.itj = (ex.anchor == 0 ? i0 : i1).channel(ex.band_j);
  return ex;
}

/// Geometry of the pair with the roles of I0 and I1 exchanged.
inline simulation::PairGeometry swapped(const simulation::PairGeometry& g) {
  return {{g.scene[1], g.scene[0]}, {g.band[1], g.band[0]}};
}

// ---------------------------------------------------------------------------
// Run plumbing

struct RunOptions {
  fs::path out_dir;                  // empty: nothing is written
  std::optional<fs::path> resume;    // training-state checkpoint to continue from
  long stop_after = -1;              // stop once this many steps are done (state is saved)
  std::function<void(const nlohmann::json&)> on_record;
};

template <class Model>
struct TrainResult {
  Model final_model;
  Model best_model;
  double best_metric = std::numeric_limits<double>::quiet_NaN();
  long best_step = -1;
  long steps = 0;
  std::vector<nlohmann::json> records;
};

namespace detail {

inline Tensor<float> batch_of(const std::vector<Image<float>>& images) {
  return Tensor<float>::from_images(images);
}

class Recorder {
 public:
  Recorder(const RunOptions& run, bool append) : run_(run), start_(std::chrono::steady_clock::now()) {
    if (!run.out_dir.empty()) {
      fs::create_directories(run.out_dir);
      log_.open(run.out_dir / "log.ndjson", append ? std::ios::app : std::ios::trunc);
      if (!log_) throw DataError("cannot open " + (run.out_dir / "log.ndjson").string());
    }
  }

  void record(std::vector<nlohmann::json>& sink, nlohmann::json rec) {
    rec["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (log_) log_ << rec.dump() << "\n" << std::flush;
    if (run_.on_record) run_.on_record(rec);
    sink.push_back(std::move(rec));
  }

 private:
  const RunOptions& run_;
  std::chrono::steady_clock::time_point start_;
  std::ofstream log_;
};

inline void check_finite(double loss, const char* phase, long step) {
  if (!std::isfinite(loss))
    throw NumericalError(std::string(phase) + ": non-finite loss at step " + std::to_string(step));
}

template <class Model>
nn::Checkpoint state_checkpoint(const char* phase, const Model& model, const ParamSet<float>& best,
                                const nn::Adam& adam, const TrainConfig& cfg, long step,
                                double best_metric, long best_step) {
  nn::Checkpoint ck;
  ck.header["kind"] = "train_state";
  ck.header["phase"] = phase;
  ck.header["architecture"] = model.config();
  ck.header["training"] = cfg;
  ck.header["step"] = step;
  ck.header["rng"] = {{"seed", cfg.seed}, {"next_step", step}};
  ck.header["best_metric"] = std::isfinite(best_metric) ? nlohmann::json(best_metric) : nlohmann::json();
  ck.header["best_step"] = best_step;
  nn::put_params(ck, model.params(), "model.");
  nn::put_params(ck, best, "best.");
  adam.save(ck);
  return ck;
}

template <class Model>
nn::Checkpoint model_checkpoint(const Model& model, const TrainConfig& cfg, long step) {
  nn::Checkpoint ck = networks::to_checkpoint(model);
  ck.header["step"] = step;
  ck.header["training"] = cfg;
  return ck;
}

/// Restores model, best parameters and optimizer; returns the step to resume at.
template <class Model>
long restore_state(const fs::path& path, const char* phase, Model& model, ParamSet<float>& best,
                   nn::Adam& adam, const TrainConfig& cfg, double& best_metric, long& best_step) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.header.value("kind", "") != "train_state" || ck.header.value("phase", "") != phase)
    throw DataError(path.string() + " is not a " + phase + " training state");
  if (ck.header.at("rng").at("seed").get<std::uint64_t>() != cfg.seed)
    throw ConfigError("resume: checkpoint seed differs from the configured seed");
  if (nlohmann::json(model.config()) != ck.header.at("architecture"))
    throw ConfigError("resume: checkpoint architecture differs from the configured one");
  nn::get_params(ck, model.params(), "model.");
  nn::get_params(ck, best, "best.");
  adam.load(ck);
  const auto& bm = ck.header.at("best_metric");
  best_metric = bm.is_null() ? std::numeric_limits<double>::quiet_NaN() : bm.get<double>();
  best_step = ck.header.at("best_step").get<long>();
  return ck.header.at("step").get<long>();
}

inline bool improves(double metric, double best) { return !std::isfinite(best) || metric < best; }

/// Square crop side no larger than `want`, the image and a multiple of `divisor`.
inline int fit_crop(int want, int h, int w, int divisor) {
  const int side = std::min({want, h, w});
  return side - side % divisor;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Phase 1: CSR

/// Validation metric of phase 1: mean registration error over all 16 band
/// combinations when the set carries geometry, otherwise the mean held-out
/// anchor-consistency loss over fixed triples.
inline double csr_validation(const Csr<float>& csr, const Dataset& val, const TrainConfig& cfg) {
  bool has_geometry = true;
  for (const auto& item : val.items) has_geometry = has_geometry && item.geometry.has_value();
  if (has_geometry)
    return evaluation::registration_error_matrix(csr, val, evaluation::ErrorMode::euclidean, cfg.workers).mean();
  NoGradGuard ng;
  double acc = 0;
  for (std::size_t k = 0; k < val.items.size(); ++k) {
    Rng r = sample_rng(cfg.seed, kCsrStream ^ 0xffff, 0, static_cast<int>(k));
    const auto ex = sample_csr_example(val.items[k].i0, val.items[k].i1, r);
    acc += losses::anchor_consistency(csr, Tensor<float>::from_image(ex.i0i), Tensor<float>::from_image(ex.itj),
                                      Tensor<float>::from_image(ex.i1i))
               .item();
  }
  return acc / static_cast<double>(val.items.size());
}

inline TrainResult<Csr<float>> train_csr(const Dataset& train, const Dataset* val, const CsrConfig& arch,
                                         const TrainConfig& cfg, const RunOptions& run = {}) {
  cfg.validate();
  arch.validate();
  require(!train.items.empty(), "train_csr: empty training set");
  const PhaseConfig& ph = cfg.csr;
  const int h = train.items[0].i0.height(), w = train.items[0].i0.width();
  for (const auto& item : train.items)
    require(item.i0.height() == h && item.i0.width() == w, "train_csr: all pairs must share one size");
  require(ph.crop <= h && ph.crop <= w, "train_csr: crop larger than the images");
  require(ph.crop % arch.divisor() == 0,
          "train_csr: crop must be divisible by " + std::to_string(arch.divisor()));
  const bool supervised = cfg.csr_loss == "supervised_flow";
  if (supervised)
    for (const auto& item : train.items)
      require(item.geometry.has_value(), "train_csr: supervised flow needs pair geometry (" + item.id + ")");

  Rng init(cfg.seed);
  Csr<float> csr(arch, init);
  ParamSet<float> best = csr.params().clone();
  nn::Adam adam(csr.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  TrainResult<Csr<float>> result;
  long step = 0;
  if (run.resume)
    step = detail::restore_state(*run.resume, "csr", csr, best, adam, cfg, result.best_metric, result.best_step);
  detail::Recorder recorder(run, run.resume.has_value());

  auto save_state = [&](long done) {
    if (run.out_dir.empty()) return;
    nn::save_checkpoint(run.out_dir / "state.ck",
                        detail::state_checkpoint("csr", csr, best, adam, cfg, done, result.best_metric,
                                                 result.best_step));
  };

  const int n = static_cast<int>(train.items.size());
  const long end = run.stop_after >= 0 ? std::min<long>(run.stop_after, ph.iterations) : ph.iterations;
  std::vector<Image<float>> t0(ph.batch), tt(ph.batch), t1(ph.batch), gt(ph.batch);
  for (; step < end; ++step) {
    evaluation::parallel_for(ph.batch, cfg.workers, [&](std::size_t k) {
      Rng r = sample_rng(cfg.seed, kCsrStream, step, static_cast<int>(k));
      const DatasetItem& item = train.items[r.uniform_int(n)];
      const CsrExample ex = sample_csr_example(item.i0, item.i1, r);
      const int y0 = r.uniform_int(h - ph.crop + 1), x0 = r.uniform_int(w - ph.crop + 1);
      const int op = cfg.augment ? r.uniform_int(8) : 0;
      auto prep = [&](const BandImage& b) { return dihedral(b.crop(y0, x0, ph.crop, ph.crop), op); };
      t0[k] = prep(ex.i0i);
      if (supervised) {
        const MultiBandImage& i1 = ex.ref_image == 0 ? item.i1 : item.i0;
        t1[k] = prep(i1.channel(ex.band_j));
        const auto geo = ex.ref_image == 0 ? *item.geometry : swapped(*item.geometry);
        const FlowField<float> f = simulation::gt_flow(geo, ex.band_i, ex.band_j, h, w);
        gt[k] = dihedral_flow(FlowField<float>(f.crop(y0, x0, ph.crop, ph.crop)), op);
      } else {
        tt[k] = prep(ex.itj);
        t1[k] = prep(ex.i1i);
      }
    });

    csr.params().zero_grad();
    Var<float> loss;
    if (supervised) {
      loss = losses::supervised_flow(csr.forward(detail::batch_of(t0), detail::batch_of(t1)),
                                     constant(detail::batch_of(gt)));
    } else {
      loss = losses::anchor_consistency(csr, detail::batch_of(t0), detail::batch_of(tt), detail::batch_of(t1));
    }
    detail::check_finite(loss.item(), "train_csr", step);
    backward(loss);
    const double lr = ph.learning_rate(step);
    adam.step(lr);
    recorder.record(result.records, {{"step", step}, {"loss", loss.item()}, {"lr", lr}, {"split", "train"}});

    const long done = step + 1;
    if (val && !val->items.empty() && ph.validate_every > 0 && done % ph.validate_every == 0) {
      const double metric = csr_validation(csr, *val, cfg);
      recorder.record(result.records, {{"step", step}, {"loss", metric}, {"lr", lr}, {"split", "val"}});
      if (detail::improves(metric, result.best_metric)) {
        result.best_metric = metric;
        result.best_step = done;
        best.assign(csr.params());
      }
    }
    if (ph.checkpoint_every > 0 && done % ph.checkpoint_every == 0) save_state(done);
  }
  save_state(step);
  result.steps = step;
  // Without any validation the final parameters are the selection.
  result.best_model = Csr<float>(arch, result.best_step >= 0 ? best.clone() : csr.params().clone());
  result.final_model = Csr<float>(arch, csr.params().clone());
  if (!run.out_dir.empty() && step >= ph.iterations) {
    nn::save_checkpoint(run.out_dir / "final.ck", detail::model_checkpoint(result.final_model, cfg, step));
    nn::save_checkpoint(run.out_dir / "best.ck", detail::model_checkpoint(result.best_model, cfg, step));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Phase 2: REC

namespace detail {

struct RecSample {
  Image<float> ref, tgt, hr;  // reference LR, target LR, reference HR (supervised only)
};

/// Four CSR flows F_{I1,i -> I0,g} (one per requested band), stacked as
/// [N, 2 * bands, H, W]. No gradient reaches the CSR parameters.
inline Tensor<float> csr_flows(const Csr<float>& csr, const std::vector<RecSample>& batch,
                               const std::vector<int>& bands) {
  NoGradGuard ng;
  const int g = static_cast<int>(Band::g);
  std::vector<Image<float>> ref;
  for (const auto& s : batch) ref.push_back(s.ref.channel(g));
  const Tensor<float> ref_t = batch_of(ref);
  const int n = static_cast<int>(batch.size()), h = ref_t.h(), w = ref_t.w();
  Tensor<float> out(n, 2 * static_cast<int>(bands.size()), h, w);
  for (std::size_t b = 0; b < bands.size(); ++b) {
    std::vector<Image<float>> tgt;
    for (const auto& s : batch) tgt.push_back(s.tgt.channel(bands[b]));
    const Tensor<float> f = csr.forward(ref_t, batch_of(tgt)).value();
    for (int k = 0; k < n; ++k)
      for (int c = 0; c < 2; ++c)
        std::copy_n(f.plane(k, c), f.shape().plane(), out.plane(k, 2 * static_cast<int>(b) + c));
  }
  return out;
}

inline Tensor<float> stack_bands(const std::vector<RecSample>& batch, Image<float> RecSample::*field,
                                 const std::vector<int>& bands) {
  std::vector<Image<float>> ims;
  for (const auto& s : batch) {
    const Image<float>& src = s.*field;
    Image<float> sel(static_cast<int>(bands.size()), src.height(), src.width());
    for (std::size_t i = 0; i < bands.size(); ++i) sel.set_channel(static_cast<int>(i), src.channel(bands[i]));
    ims.push_back(std::move(sel));
  }
  return batch_of(ims);
}

inline Var<float> rec_loss(const Rec<float>& rec, const Csr<float>* csr, const std::vector<RecSample>& batch,
                           const TrainConfig& cfg, const Image<float>& kernel) {
  const auto bands = rec.config().band_indices();
  const Var<float> pred = rec.forward(constant(stack_bands(batch, &RecSample::ref, bands)));
  if (cfg.rec_loss == "supervised_l1")
    return losses::supervised_l1(pred, constant(stack_bands(batch, &RecSample::hr, bands)));
  const Var<float> flows = constant(csr_flows(*csr, batch, bands));
  const Var<float> target = constant(stack_bands(batch, &RecSample::tgt, bands));
  if (cfg.rec_loss == "self_sr_deconv") return losses::self_sr_deconv(pred, target, flows, kernel);
  return losses::self_sr(pred, target, flows);
}

}  // namespace detail

/// Validation metric of phase 2: the training loss on centred crops of every
/// held-out pair (I0 as reference, no augmentation).
inline double rec_validation(const Rec<float>& rec, const Csr<float>* csr, const Dataset& val,
                             const TrainConfig& cfg, int divisor) {
  NoGradGuard ng;
  const Image<float> kernel = geometry::gaussian_kernel_2d<float>(cfg.kernel_sigma, cfg.kernel_size);
  double acc = 0;
  for (const auto& item : val.items) {
    const int side = detail::fit_crop(cfg.val_crop, item.i0.height(), item.i0.width(), divisor);
    require(side >= 16, "rec validation: held-out images too small");
    const int y0 = (item.i0.height() - side) / 2, x0 = (item.i0.width() - side) / 2;
    detail::RecSample s{item.i0.crop(y0, x0, side, side), item.i1.crop(y0, x0, side, side), {}};
    if (cfg.rec_loss == "supervised_l1") {
      require(item.hr.has_value(), "rec validation: supervised loss needs HR ground truth");
      s.hr = (*item.hr)[0].crop(2 * y0, 2 * x0, 2 * side, 2 * side);
    }
    acc += detail::rec_loss(rec, csr, {s}, cfg, kernel).item();
  }
  return acc / static_cast<double>(val.items.size());
}

/// Per step: sample pairs, randomly swap reference and target, crop
/// co-located windows, apply one dihedral transform to every image of the
/// sample, compute the CSR flows from the reference green band to each target
/// band, evaluate the loss and step Adam. The CSR is never updated.
inline TrainResult<Rec<float>> train_rec(const Dataset& train, const Dataset* val, const Csr<float>* csr,
                                         const RecConfig& arch, const TrainConfig& cfg,
                                         const RunOptions& run = {}) {
  cfg.validate();
  arch.validate();
  require(!train.items.empty(), "train_rec: empty training set");
  const PhaseConfig& ph = cfg.rec;
  const bool supervised = cfg.rec_loss == "supervised_l1";
  if (!supervised) require(csr != nullptr, "train_rec: the Self-SR loss needs a trained CSR");
  const int h = train.items[0].i0.height(), w = train.items[0].i0.width();
  for (const auto& item : train.items) {
    require(item.i0.height() == h && item.i0.width() == w, "train_rec: all pairs must share one size");
    if (supervised) require(item.hr.has_value(), "train_rec: supervised loss needs HR ground truth (" + item.id + ")");
  }
  require(ph.crop <= h && ph.crop <= w, "train_rec: crop larger than the images");
  require(ph.crop >= 16, "train_rec: crop must be at least 16");
  const int divisor = csr ? csr->config().divisor() : 1;
  require(ph.crop % divisor == 0, "train_rec: crop must be divisible by " + std::to_string(divisor));
  const std::uint64_t csr_checksum = csr ? csr->params().checksum() : 0;

  Rng init(cfg.seed);
  Rec<float> rec(arch, init);
  ParamSet<float> best = rec.params().clone();
  nn::Adam adam(rec.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  TrainResult<Rec<float>> result;
  long step = 0;
  if (run.resume)
    step = detail::restore_state(*run.resume, "rec", rec, best, adam, cfg, result.best_metric, result.best_step);
  detail::Recorder recorder(run, run.resume.has_value());
  const Image<float> kernel = geometry::gaussian_kernel_2d<float>(cfg.kernel_sigma, cfg.kernel_size);

  auto save_state = [&](long done) {
    if (run.out_dir.empty()) return;
    nn::save_checkpoint(run.out_dir / "state.ck",
                        detail::state_checkpoint("rec", rec, best, adam, cfg, done, result.best_metric,
                                                 result.best_step));
  };

  const int n = static_cast<int>(train.items.size());
  const long end = run.stop_after >= 0 ? std::min<long>(run.stop_after, ph.iterations) : ph.iterations;
  std::vector<detail::RecSample> batch(ph.batch);
  for (; step < end; ++step) {
    evaluation::parallel_for(ph.batch, cfg.workers, [&](std::size_t k) {
      Rng r = sample_rng(cfg.seed, kRecStream, step, static_cast<int>(k));
      const DatasetItem& item = train.items[r.uniform_int(n)];
      const int ref = r.uniform_int(2);
      const int y0 = r.uniform_int(h - ph.crop + 1), x0 = r.uniform_int(w - ph.crop + 1);
      const int op = cfg.augment ? r.uniform_int(8) : 0;
      const MultiBandImage& a = ref == 0 ? item.i0 : item.i1;
      const MultiBandImage& b = ref == 0 ? item.i1 : item.i0;
      batch[k].ref = dihedral(a.crop(y0, x0, ph.crop, ph.crop), op);
      batch[k].tgt = dihedral(b.crop(y0, x0, ph.crop, ph.crop), op);
      if (supervised)
        batch[k].hr = dihedral((*item.hr)[ref].crop(2 * y0, 2 * x0, 2 * ph.crop, 2 * ph.crop), op, 2);
    });

    rec.params().zero_grad();
    const Var<float> loss = detail::rec_loss(rec, csr, batch, cfg, kernel);
    detail::check_finite(loss.item(), "train_rec", step);
    backward(loss);
    const double lr = ph.learning_rate(step);
    adam.step(lr);
    recorder.record(result.records, {{"step", step}, {"loss", loss.item()}, {"lr", lr}, {"split", "train"}});

    const long done = step + 1;
    if (val && !val->items.empty() && ph.validate_every > 0 && done % ph.validate_every == 0) {
      const double metric = rec_validation(rec, csr, *val, cfg, divisor);
      recorder.record(result.records, {{"step", step}, {"loss", metric}, {"lr", lr}, {"split", "val"}});
      if (detail::improves(metric, result.best_metric)) {
        result.best_metric = metric;
        result.best_step = done;
        best.assign(rec.params());
      }
    }
    if (ph.checkpoint_every > 0 && done % ph.checkpoint_every == 0) save_state(done);
  }
  if (csr && csr->params().checksum() != csr_checksum)
    throw std::logic_error("train_rec: CSR parameters changed during REC training");
  save_state(step);
  result.steps = step;
  result.best_model = Rec<float>(arch, result.best_step >= 0 ? best.clone() : rec.params().clone());
  result.final_model = Rec<float>(arch, rec.params().clone());
  if (!run.out_dir.empty() && step >= ph.iterations) {
    nn::save_checkpoint(run.out_dir / "final.ck", detail::model_checkpoint(result.final_model, cfg, step));
    nn::save_checkpoint(run.out_dir / "best.ck", detail::model_checkpoint(result.best_model, cfg, step));
  }
  return result;
}

}  // namespace l1bsr::training
