#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "l1bsr/training.hpp"
#include "support.hpp"

using namespace l1bsr;
using namespace l1bsr::training;
using l1bsr::testing::random_image;
using l1bsr::testing::smooth_flow;
using l1bsr::testing::temp_dir;

namespace {

CsrConfig tiny_csr() { return {{8, 8}, 10.0}; }
RecConfig tiny_rec(std::string bands = "bgrn") { return {std::move(bands), 8, 1, 2, 16}; }

TrainConfig tiny_config() {
  TrainConfig c;
  c.csr = {2, 20, 16, 1e-3, 1.0, 0, 0, 0};
  c.rec = {2, 20, 16, 1e-3, 1.0, 0, 0, 0};
  c.val_crop = 16;
  c.seed = 3;
  return c;
}

MultiBandImage smooth_scene(std::uint64_t seed, int size) {
  Rng rng(seed);
  return geometry::subsample(geometry::gaussian_blur(simulation::synthesize_scene(rng, 2 * size, 2 * size), 0.7));
}

/// Pairs with I0 == I1 (no misalignment at all).
Dataset identical_pairs(int n, int size) {
  Dataset ds;
  for (int k = 0; k < n; ++k) {
    simulation::DatasetItem item;
    item.id = simulation::pair_id(k);
    item.i0 = smooth_scene(40 + k, size);
    item.i1 = item.i0;
    ds.items.push_back(item);
  }
  return ds;
}

Dataset simulated(int n, int lr_size, std::uint64_t seed, simulation::SimulationParams p = {}) {
  Dataset ds;
  Rng scenes(seed);
  for (int k = 0; k < n; ++k) {
    Rng rng(seed * 31 + k);
    const auto pair = simulation::simulate_pair(simulation::synthesize_scene(scenes, 2 * lr_size, 2 * lr_size), p, rng);
    simulation::DatasetItem item;
    item.id = simulation::pair_id(k);
    item.i0 = pair.i0;
    item.i1 = pair.i1;
    item.flows = pair.flows;
    item.hr = std::array<MultiBandImage, 2>{pair.hr0, pair.hr1};
    item.geometry = pair.geometry;
    ds.items.push_back(item);
  }
  return ds;
}

/// CSR whose output head is zeroed: predicts the zero flow everywhere.
Csr<float> zero_flow_csr() {
  Rng rng(1);
  Csr<float> csr(tiny_csr(), rng);
  for (const auto& name : {"head.weight", "head.bias"}) {
    Var<float> p = csr.params()[name];
    p.mutable_value().fill(0.0f);
  }
  return csr;
}

std::vector<double> train_losses(const std::vector<nlohmann::json>& records) {
  std::vector<double> out;
  for (const auto& r : records)
    if (r["split"] == "train") out.push_back(r["loss"].get<double>());
  return out;
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += v[i];
  return s / static_cast<double>(to - from);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, LearningRateScheduleIsExactStepDecay) {
  const TrainConfig c;
  EXPECT_EQ(c.rec.learning_rate(0), 5e-5);
  EXPECT_EQ(c.rec.learning_rate(11999), 5e-5);
  for (long s : {12000L, 12001L, 23999L, 24000L, 59999L})
    EXPECT_DOUBLE_EQ(c.rec.learning_rate(s), 5e-5 * std::pow(0.6, std::floor(s / 12000.0)));
  EXPECT_EQ(c.csr.learning_rate(150000), 5e-5);
}

TEST(Config, DefaultsMatchTheFullScaleSchedule) {
  const TrainConfig c;
  EXPECT_EQ(c.csr.batch, 64);
  EXPECT_EQ(c.csr.iterations, 200000);
  EXPECT_EQ(c.rec.batch, 16);
  EXPECT_EQ(c.rec.crop, 96);
  EXPECT_EQ(c.rec.iterations, 60000);
  EXPECT_EQ(c.rec.decay_every, 12000);
  EXPECT_EQ(c.rec.lr_decay, 0.6);
  EXPECT_EQ(c.val_crop, 256);
  EXPECT_EQ(c.adam_beta1, 0.9);
  EXPECT_EQ(c.adam_beta2, 0.999);
  EXPECT_NO_THROW(c.validate());
  EXPECT_NO_THROW(TrainConfig::desk().validate());
}

TEST(Config, JsonOverlayRoundTripsAndRejectsUnknownKeys) {
  TrainConfig c = TrainConfig::desk();
  c.rec_loss = "supervised_l1";
  c.seed = 99;
  const nlohmann::json j = c;
  TrainConfig d;
  read_train_config(j, d);
  EXPECT_EQ(nlohmann::json(d), j);

  TrainConfig e;
  read_train_config({{"rec", {{"lr", 1e-4}}}}, e);
  EXPECT_EQ(e.rec.lr, 1e-4);
  EXPECT_EQ(e.rec.batch, 16);
  EXPECT_THROW(read_train_config({{"rec", {{"learning_rate", 1e-4}}}}, e), ConfigError);
  EXPECT_THROW(read_train_config({{"bogus", 1}}, e), ConfigError);
  EXPECT_THROW(read_train_config({{"rec", {{"lr_decay", 1.5}}}}, e), ConfigError);
  EXPECT_THROW(read_train_config({{"rec_loss", "l2"}}, e), ConfigError);
  EXPECT_THROW(read_train_config({{"csr", {{"batch", 0}}}}, e), ConfigError);
}

// ---------------------------------------------------------------------------
// Sampling

TEST(Sampling, CsrExampleIsDeterministicAndConsistent) {
  const auto a = smooth_scene(1, 16), b = smooth_scene(2, 16);
  Rng r1(5), r2(5);
  const auto e1 = sample_csr_example(a, b, r1), e2 = sample_csr_example(a, b, r2);
  EXPECT_EQ(e1.band_i, e2.band_i);
  EXPECT_EQ(e1.itj, e2.itj);
  for (int k = 0; k < 50; ++k) {
    const auto ex = sample_csr_example(a, b, r1);
    const auto& i0 = ex.ref_image == 0 ? a : b;
    const auto& i1 = ex.ref_image == 0 ? b : a;
    EXPECT_EQ(ex.i0i, i0.channel(ex.band_i));
    EXPECT_EQ(ex.i1i, i1.channel(ex.band_i));
    EXPECT_EQ(ex.itj, (ex.anchor == 0 ? i0 : i1).channel(ex.band_j));
  }
}

TEST(Sampling, BandPairsAndAnchorSideAreUniform) {
  const auto a = smooth_scene(1, 8), b = smooth_scene(2, 8);
  Rng rng(11);
  const int n = 10000;
  std::map<std::pair<int, int>, int> pairs;
  int anchor1 = 0, ref1 = 0;
  for (int k = 0; k < n; ++k) {
    const auto ex = sample_csr_example(a, b, rng);
    ++pairs[{ex.band_i, ex.band_j}];
    anchor1 += ex.anchor;
    ref1 += ex.ref_image;
  }
  // Multinomial cell counts: mean n p, sd sqrt(n p (1 - p)).
  const double p = 1.0 / 16, sd = std::sqrt(n * p * (1 - p));
  ASSERT_EQ(pairs.size(), 16u);
  for (const auto& [ij, count] : pairs) EXPECT_LE(std::abs(count - n * p), 3 * sd) << ij.first << ij.second;
  const double sd2 = std::sqrt(n * 0.25);
  EXPECT_LE(std::abs(anchor1 - n / 2.0), 3 * sd2);
  EXPECT_LE(std::abs(ref1 - n / 2.0), 3 * sd2);
}

TEST(Sampling, StreamsAreDistinctPerStepAndIndex) {
  EXPECT_NE(sample_rng(1, kCsrStream, 0, 0).next(), sample_rng(1, kCsrStream, 0, 1).next());
  EXPECT_NE(sample_rng(1, kCsrStream, 0, 0).next(), sample_rng(1, kCsrStream, 1, 0).next());
  EXPECT_NE(sample_rng(1, kCsrStream, 0, 0).next(), sample_rng(1, kRecStream, 0, 0).next());
  EXPECT_NE(sample_rng(1, kCsrStream, 0, 0).next(), sample_rng(2, kCsrStream, 0, 0).next());
  EXPECT_EQ(sample_rng(1, kCsrStream, 7, 3).next(), sample_rng(1, kCsrStream, 7, 3).next());
}

// ---------------------------------------------------------------------------
// Augmentation

TEST(Augment, DihedralOpsFormTheSquareGroup) {
  Rng rng(2);
  const auto im = random_image<float>(rng, 2, 6, 6);
  std::vector<Image<float>> seen;
  for (int op = 0; op < 8; ++op) {
    const auto t = dihedral(im, op);
    for (const auto& s : seen) EXPECT_FALSE(s == t) << op;
    seen.push_back(t);
  }
  EXPECT_EQ(dihedral(im, 0), im);
  EXPECT_EQ(dihedral(dihedral(im, 4), 4), im);
  EXPECT_EQ(dihedral(dihedral(dihedral(dihedral(im, 1), 1), 1), 1), im);
  // A quarter turn moves the top-right corner to the top-left.
  EXPECT_EQ(dihedral(im, 1)(0, 0, 0), im(0, 0, 5));
  EXPECT_THROW(dihedral(im, 8), DataError);
}

TEST(Augment, DecimationCommutesWithTheTransform) {
  Rng rng(3);
  const auto hr = random_image<float>(rng, 2, 16, 16);
  for (int op = 0; op < 8; ++op)
    EXPECT_EQ(geometry::subsample(dihedral(hr, op, 2)), dihedral(geometry::subsample(hr), op)) << op;
}

TEST(Augment, FlowTransformPreservesPullbackRelations) {
  Rng rng(4);
  const auto src = random_image<double>(rng, 1, 24, 24);
  const auto flow = smooth_flow<double>(rng, 24, 24, 3.0);
  const auto warped = geometry::pullback(src, flow);
  for (int op = 0; op < 8; ++op) {
    const auto lhs = geometry::pullback(dihedral(src, op), dihedral_flow(flow, op));
    EXPECT_LE(l1bsr::testing::max_abs_interior(lhs, dihedral(warped, op), 0), 1e-12) << op;
  }
}

// ---------------------------------------------------------------------------
// Phase 1

TEST(TrainCsr, IdenticalPairLossDecreases) {
  const Dataset ds = identical_pairs(1, 16);
  TrainConfig cfg = tiny_config();
  cfg.csr.iterations = 200;
  const auto res = train_csr(ds, nullptr, tiny_csr(), cfg);
  const auto loss = train_losses(res.records);
  ASSERT_EQ(loss.size(), 200u);
  EXPECT_LT(mean_of(loss, 180, 200), loss[0]);
  EXPECT_EQ(res.steps, 200);
}

TEST(TrainCsr, ResumeReproducesTheUninterruptedRun) {
  const Dataset ds = simulated(3, 32, 8);
  TrainConfig cfg = tiny_config();
  cfg.csr.iterations = 12;
  cfg.csr.validate_every = 4;
  cfg.csr.checkpoint_every = 4;
  const auto dir_a = temp_dir("csr_resume_a"), dir_b = temp_dir("csr_resume_b");
  RunOptions a{dir_a, std::nullopt, -1, {}};
  const auto full = train_csr(ds, &ds, tiny_csr(), cfg, a);

  RunOptions first{dir_b, std::nullopt, 6, {}};
  const auto part = train_csr(ds, &ds, tiny_csr(), cfg, first);
  EXPECT_EQ(part.steps, 6);
  EXPECT_FALSE(std::filesystem::exists(dir_b / "final.ck"));
  RunOptions second{dir_b, dir_b / "state.ck", -1, {}};
  const auto resumed = train_csr(ds, &ds, tiny_csr(), cfg, second);

  EXPECT_EQ(resumed.final_model.params().checksum(), full.final_model.params().checksum());
  EXPECT_EQ(resumed.best_model.params().checksum(), full.best_model.params().checksum());
  EXPECT_EQ(resumed.best_step, full.best_step);
  EXPECT_EQ(imagery::read_text(dir_a / "final.ck"), imagery::read_text(dir_b / "final.ck"));
  const auto la = train_losses(full.records);
  auto lb = train_losses(part.records);
  for (double v : train_losses(resumed.records)) lb.push_back(v);
  EXPECT_EQ(la, lb);

  // The metrics log holds one train record per step plus validation records.
  const std::string log = imagery::read_text(dir_b / "log.ndjson");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 12 + 3);
  const auto rec = nlohmann::json::parse(log.substr(0, log.find('\n')));
  for (const char* k : {"step", "loss", "lr", "wall_time", "split"}) EXPECT_TRUE(rec.contains(k)) << k;
}

TEST(TrainCsr, WorkerCountDoesNotChangeTheRun) {
  const Dataset ds = simulated(2, 32, 9);
  TrainConfig cfg = tiny_config();
  cfg.csr.iterations = 5;
  const auto one = train_csr(ds, nullptr, tiny_csr(), cfg);
  cfg.workers = 3;
  const auto three = train_csr(ds, nullptr, tiny_csr(), cfg);
  EXPECT_EQ(one.final_model.params().checksum(), three.final_model.params().checksum());
}

TEST(TrainCsr, SupervisedVariantAndErrors) {
  const Dataset ds = simulated(2, 32, 10);
  TrainConfig cfg = tiny_config();
  cfg.csr_loss = "supervised_flow";
  cfg.csr.iterations = 60;
  const auto res = train_csr(ds, nullptr, tiny_csr(), cfg);
  const auto loss = train_losses(res.records);
  EXPECT_LT(mean_of(loss, 50, 60), mean_of(loss, 0, 10));

  EXPECT_THROW(train_csr(Dataset{}, nullptr, tiny_csr(), cfg), DataError);
  Dataset no_geo = identical_pairs(1, 16);
  EXPECT_THROW(train_csr(no_geo, nullptr, tiny_csr(), cfg), DataError);
  cfg.csr_loss = "anchor";
  cfg.csr.crop = 18;  // not divisible by 2
  EXPECT_THROW(train_csr(no_geo, nullptr, tiny_csr(), cfg), DataError);

  cfg.csr.crop = 16;
  Dataset bad = identical_pairs(1, 16);
  bad.items[0].i1.data()[8 * 16 + 8] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(train_csr(bad, nullptr, tiny_csr(), cfg), NumericalError);
}

// ---------------------------------------------------------------------------
// Phase 2

TEST(TrainRec, DegenerateDatasetLearnsToDecimateBack) {
  const Dataset ds = identical_pairs(1, 16);
  const Csr<float> csr = zero_flow_csr();
  TrainConfig cfg = tiny_config();
  cfg.rec.iterations = 500;
  cfg.augment = false;

  Rng rng(cfg.seed);
  const Rec<float> fresh(tiny_rec(), rng);
  const auto res = train_rec(ds, nullptr, &csr, tiny_rec(), cfg);
  const auto loss = train_losses(res.records);
  EXPECT_LT(mean_of(loss, 450, 500), mean_of(loss, 0, 10));

  auto decimation_error = [&](const Rec<float>& rec) {
    return l1bsr::testing::max_abs_interior(geometry::subsample(networks::rec_forward(rec, ds.items[0].i0)),
                                            ds.items[0].i0, 4);
  };
  EXPECT_LT(decimation_error(res.final_model), decimation_error(fresh));
}

TEST(TrainRec, CsrIsNeverUpdated) {
  const Dataset ds = simulated(2, 32, 11);
  Rng rng(5);
  const Csr<float> csr(tiny_csr(), rng);
  const auto before = csr.params().checksum();
  TrainConfig cfg = tiny_config();
  cfg.rec.iterations = 5;
  for (const char* loss : {"self_sr", "self_sr_deconv"}) {
    cfg.rec_loss = loss;
    train_rec(ds, &ds, &csr, tiny_rec(), cfg);
    EXPECT_EQ(csr.params().checksum(), before);
  }
}

TEST(TrainRec, AugmentationChangesTheTrajectory) {
  const Dataset ds = simulated(2, 32, 12);
  Rng rng(5);
  const Csr<float> csr(tiny_csr(), rng);
  TrainConfig cfg = tiny_config();
  cfg.rec.iterations = 8;
  const auto on = train_losses(train_rec(ds, nullptr, &csr, tiny_rec(), cfg).records);
  cfg.augment = false;
  const auto off = train_losses(train_rec(ds, nullptr, &csr, tiny_rec(), cfg).records);
  EXPECT_NE(on, off);
  EXPECT_EQ(off, train_losses(train_rec(ds, nullptr, &csr, tiny_rec(), cfg).records));
}

TEST(TrainRec, ScheduleIsLogged) {
  const Dataset ds = simulated(1, 32, 13);
  Rng rng(5);
  const Csr<float> csr(tiny_csr(), rng);
  TrainConfig cfg = tiny_config();
  cfg.rec = {1, 9, 16, 1e-3, 0.5, 4, 0, 0};
  const auto res = train_rec(ds, nullptr, &csr, tiny_rec("g"), cfg);
  for (const auto& r : res.records) {
    const long s = r["step"].get<long>();
    EXPECT_EQ(r["lr"].get<double>(), 1e-3 * std::pow(0.5, static_cast<double>(s / 4)));
  }
}

TEST(TrainRec, ResumeAndVariants) {
  const Dataset ds = simulated(2, 32, 14);
  Rng rng(5);
  const Csr<float> csr(tiny_csr(), rng);
  TrainConfig cfg = tiny_config();
  cfg.rec.iterations = 6;
  cfg.rec.validate_every = 3;
  const auto dir = temp_dir("rec_resume");
  const auto full = train_rec(ds, &ds, &csr, tiny_rec(), cfg);
  RunOptions first{dir, std::nullopt, 3, {}};
  train_rec(ds, &ds, &csr, tiny_rec(), cfg, first);
  RunOptions second{dir, dir / "state.ck", -1, {}};
  const auto resumed = train_rec(ds, &ds, &csr, tiny_rec(), cfg, second);
  EXPECT_EQ(resumed.final_model.params().checksum(), full.final_model.params().checksum());
  EXPECT_TRUE(std::isfinite(full.best_metric));

  // Supervised L1 needs no CSR but needs HR ground truth.
  cfg.rec_loss = "supervised_l1";
  EXPECT_NO_THROW(train_rec(ds, &ds, nullptr, tiny_rec("g"), cfg));
  EXPECT_THROW(train_rec(identical_pairs(1, 32), nullptr, nullptr, tiny_rec(), cfg), DataError);
  cfg.rec_loss = "self_sr";
  EXPECT_THROW(train_rec(ds, nullptr, nullptr, tiny_rec(), cfg), DataError);

  // Resuming with another seed is refused.
  cfg.seed = 4;
  RunOptions wrong{dir, dir / "state.ck", -1, {}};
  EXPECT_THROW(train_rec(ds, &ds, &csr, tiny_rec(), cfg, wrong), ConfigError);
}
