#include <gtest/gtest.h>

#include "l1bsr/losses.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace l1bsr;
using namespace l1bsr::losses;
using l1bsr::testing::grad_check;
using l1bsr::testing::random_image;
using l1bsr::testing::random_tensor;
using l1bsr::testing::smooth_flow;

namespace {

std::vector<FlowField<double>> random_flows(Rng& rng, int n, int h, int w, double amp) {
  std::vector<FlowField<double>> out;
  for (int i = 0; i < n; ++i) out.push_back(smooth_flow<double>(rng, h, w, amp));
  return out;
}

std::vector<FlowField<double>> zero_flows(int n, int h, int w) {
  return std::vector<FlowField<double>>(n, FlowField<double>(h, w));
}

// Pixel-centre-aligned x2 bicubic upsampling, written against the oracle sampler.
Image<double> bicubic_up(const Image<double>& lr) {
  Image<double> out(lr.channels(), 2 * lr.height(), 2 * lr.width());
  for (int c = 0; c < lr.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x)
        out(c, y, x) = oracle::bicubic(lr, c, (x + 0.5) / 2 - 0.5, (y + 0.5) / 2 - 0.5);
  return out;
}

// Band stack shifted by the same displacement everywhere: out(x) = src(x - d).
Image<double> translate(const Image<double>& src, double dx, double dy) {
  return oracle::warp(src, FlowField<double>(src.height(), src.width(), -dx, -dy));
}

}  // namespace

TEST(SelfSr, ZeroInsertionUpsamplingGivesZero) {
  Rng rng(1);
  const auto t = random_image<double>(rng, 4, 16, 16);
  Image<double> hr(4, 32, 32);
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) hr(c, 2 * y, 2 * x) = t(c, y, x);
  EXPECT_EQ(self_sr_loss(hr, t, zero_flows(4, 16, 16)).value, 0.0);
}

TEST(SelfSr, BicubicUpsamplingMatchesDirectRecomputation) {
  Rng rng(2);
  const auto t = random_image<double>(rng, 4, 20, 20);
  const auto hr = bicubic_up(t);
  double expect = 0;
  long n = 0;
  for (int c = 0; c < 4; ++c)
    for (int y = kLrBorder; y < 20 - kLrBorder; ++y)
      for (int x = kLrBorder; x < 20 - kLrBorder; ++x, ++n) expect += std::abs(hr(c, 2 * y, 2 * x) - t(c, y, x));
  expect /= n;
  EXPECT_GT(expect, 0.01);
  EXPECT_NEAR(self_sr_loss(hr, t, zero_flows(4, 20, 20)).value, expect, 1e-9);
}

TEST(SelfSr, FusedAndTwoStepPathsAgree) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto hr = random_image<double>(rng, 4, 32, 32);
    const auto t = random_image<double>(rng, 4, 16, 16);
    const auto flows = random_flows(rng, 4, 16, 16, 4.0);
    Image<double> two_step(4, 16, 16);
    for (int c = 0; c < 4; ++c)
      two_step.set_channel(c, geometry::subsample(geometry::pullback(hr.channel(c), geometry::upsample_flow(flows[c]))));
    const double two = oracle::mean_abs(two_step, t, kLrBorder);
    EXPECT_NEAR(self_sr_loss(hr, t, flows).value, two, 1e-4);
  }
}

TEST(SelfSr, MatchesBruteForceOracle) {
  Rng rng(4);
  const auto hr = random_image<double>(rng, 4, 32, 32);
  const auto t = random_image<double>(rng, 4, 16, 16);
  const auto flows = random_flows(rng, 4, 16, 16, 3.0);
  EXPECT_NEAR(self_sr_loss(hr, t, flows).value, oracle::self_sr(hr, t, flows, kLrBorder), 1e-9);
  EXPECT_THROW(self_sr_loss(hr, t, zero_flows(3, 16, 16)), DataError);
  EXPECT_THROW(self_sr_loss(hr, random_image<double>(rng, 4, 15, 16), zero_flows(4, 15, 16)), DataError);
}

TEST(Deconv, DeltaKernelIsBitIdentical) {
  Rng rng(5);
  const auto hr = random_image<double>(rng, 4, 32, 32);
  const auto t = random_image<double>(rng, 4, 16, 16);
  const auto flows = random_flows(rng, 4, 16, 16, 3.0);
  EXPECT_EQ(self_sr_deconv_loss(hr, t, flows, delta_kernel<double>()).value, self_sr_loss(hr, t, flows).value);
}

TEST(Deconv, ConstantImagesAndFactoredOracle) {
  const Image<double> hr(4, 32, 32, 0.7), t(4, 16, 16, 0.2);
  EXPECT_NEAR(self_sr_deconv_loss(hr, t, zero_flows(4, 16, 16), default_blur_kernel<double>()).value, 0.5, 1e-12);

  Rng rng(6);
  const auto hr2 = random_image<double>(rng, 4, 32, 32);
  const auto t2 = random_image<double>(rng, 4, 16, 16);
  const auto flows = random_flows(rng, 4, 16, 16, 3.0);
  const auto k = default_blur_kernel<double>();
  const double expect = oracle::self_sr(oracle::convolve(hr2, k), t2, flows, kLrBorder);
  EXPECT_NEAR(self_sr_deconv_loss(hr2, t2, flows, k).value, expect, 1e-9);
}

TEST(Anchor, IdentityChainWithZeroStub) {
  Rng rng(7);
  const auto b = Tensor<double>::from_image(random_image<double>(rng, 1, 16, 16));
  auto zero = [](const Tensor<double>& ref, const Tensor<double>&) {
    return constant(Tensor<double>(ref.n(), 2, ref.h(), ref.w()));
  };
  EXPECT_EQ(anchor_consistency<double>(zero, b, b, b).item(), 0.0);
}

// Stub estimator that knows each image's true displacement d (image(x) =
// scene(x - d)) and returns the exact constant flow d_ref - d_tgt.
struct ConstantFlowOracle {
  std::vector<std::pair<Tensor<double>, std::array<double, 2>>> known;
  Var<double> operator()(const Tensor<double>& ref, const Tensor<double>& tgt) const {
    auto find = [&](const Tensor<double>& t) {
      for (const auto& [im, d] : known)
        if (im == t) return d;
      throw std::logic_error("unknown image");
    };
    const auto dr = find(ref), dt = find(tgt);
    Tensor<double> f(ref.n(), 2, ref.h(), ref.w());
    for (int y = 0; y < ref.h(); ++y)
      for (int x = 0; x < ref.w(); ++x) {
        f.at(0, 0, y, x) = dr[0] - dt[0];
        f.at(0, 1, y, x) = dr[1] - dt[1];
      }
    return constant(f);
  }
};

TEST(Anchor, ConstantFlowTranslationOracle) {
  Rng rng(8);
  const auto scene = random_image<double>(rng, 1, 24, 24);
  const auto i0 = Tensor<double>::from_image(scene);
  const auto i1 = Tensor<double>::from_image(translate(scene, 2, 0));
  // I1 shifted by an integer: exact on the interior.
  for (int y = 0; y < 24; ++y)
    for (int x = 2; x < 24; ++x) ASSERT_EQ(i1.at(0, 0, y, x), i0.at(0, 0, y, x - 2));
  ConstantFlowOracle stub{{{i0, {0, 0}}, {i1, {2, 0}}}};
  EXPECT_LE(anchor_consistency<double>(stub, i0, i0, i1).item(), 1e-6);
}

TEST(Anchor, AnchorSideDoesNotMatterForTranslations) {
  Rng rng(9);
  const auto scene = random_image<double>(rng, 2, 24, 24);
  const auto i0 = Tensor<double>::from_image(scene.channel(0));
  const auto a0 = Tensor<double>::from_image(scene.channel(1));
  const auto i1 = Tensor<double>::from_image(translate(scene.channel(0), 0.5, -0.25));
  const auto a1 = Tensor<double>::from_image(translate(scene.channel(1), 0.5, -0.25));
  ConstantFlowOracle stub{{{i0, {0, 0}}, {a0, {0, 0}}, {i1, {0.5, -0.25}}, {a1, {0.5, -0.25}}}};
  const double from_i0 = anchor_consistency<double>(stub, i0, a0, i1).item();
  const double from_i1 = anchor_consistency<double>(stub, i0, a1, i1).item();
  EXPECT_GT(from_i0, 0.0);
  EXPECT_EQ(from_i0, from_i1);
}

TEST(Anchor, MatchesBruteForceOracle) {
  Rng rng(10);
  Rng init(3);
  networks::CsrConfig cfg;
  cfg.widths = {8, 8};
  const auto csr = networks::Csr<float>(cfg, init).cast<double>();
  const auto i0 = random_image<double>(rng, 1, 16, 16), it = random_image<double>(rng, 1, 16, 16),
             i1 = random_image<double>(rng, 1, 16, 16);
  auto as_t = [](const Image<double>& im) { return Tensor<double>::from_image(im); };
  NoGradGuard ng;
  const FlowField<double> f_1t(csr.forward(as_t(it), as_t(i1)).value().image(0));
  const FlowField<double> f_t0(csr.forward(as_t(i0), as_t(it)).value().image(0));
  const auto composed = oracle::compose(f_1t, f_t0);
  const double expect = oracle::mean_abs(oracle::warp(i0, composed), i1, kLrBorder);
  EXPECT_NEAR(anchor_consistency(csr, as_t(i0), as_t(it), as_t(i1)).item(), expect, 1e-9);
}

TEST(Supervised, FlowLoss) {
  Rng rng(11);
  const auto a = smooth_flow<double>(rng, 16, 16, 3.0);
  EXPECT_EQ(supervised_flow_loss(a, a).value, 0.0);
  FlowField<double> b(16, 16, 0.5, -0.5);
  EXPECT_DOUBLE_EQ(supervised_flow_loss(b, FlowField<double>(16, 16)).value, 0.5);
  const auto c = smooth_flow<double>(rng, 16, 16, 3.0);
  EXPECT_NEAR(supervised_flow_loss(a, c).value, oracle::mean_abs(a, c, kLrBorder), 1e-12);
  EXPECT_THROW(supervised_flow_loss(a, FlowField<double>(8, 16)), DataError);
}

TEST(Supervised, L1Loss) {
  Rng rng(12);
  const auto a = random_image<double>(rng, 4, 32, 32), b = random_image<double>(rng, 4, 32, 32);
  EXPECT_EQ(supervised_l1_loss(a, a).value, 0.0);
  auto shifted = a;
  for (auto& v : shifted.data()) v -= 0.125;
  EXPECT_NEAR(supervised_l1_loss(a, shifted).value, 0.125, 1e-12);
  EXPECT_NEAR(supervised_l1_loss(a, b).value, oracle::mean_abs(a, b, kHrBorder), 1e-12);
}

TEST(Losses, NonNegative) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto hr = random_image<double>(rng, 4, 32, 32);
    const auto t = random_image<double>(rng, 4, 16, 16);
    EXPECT_GE(self_sr_loss(hr, t, random_flows(rng, 4, 16, 16, 2.0)).value, 0.0);
  }
}

TEST(Gradients, AllLossesAgainstFiniteDifferences) {
  Rng rng(14);
  auto hr = parameter(random_tensor(rng, {1, 4, 16, 16}, 0, 1));
  auto flows = parameter(random_tensor(rng, {1, 8, 8, 8}, -1.5, 1.5));
  const auto target = constant(random_tensor(rng, {1, 4, 8, 8}, 0, 1));
  const auto kern = default_blur_kernel<double>();

  auto f_sr = [&](std::vector<Var<double>>& in) { return self_sr(in[0], target, in[1], 2); };
  EXPECT_LT(grad_check(f_sr, {hr, flows}, rng).max_rel_error, 1e-3);
  auto f_dc = [&](std::vector<Var<double>>& in) { return self_sr_deconv(in[0], target, in[1], kern, 2); };
  EXPECT_LT(grad_check(f_dc, {hr, flows}, rng).max_rel_error, 1e-3);

  auto pf = parameter(random_tensor(rng, {1, 2, 16, 16}, -2, 2));
  const auto gf = constant(random_tensor(rng, {1, 2, 16, 16}, -2, 2));
  auto f_fl = [&](std::vector<Var<double>>& in) { return supervised_flow(in[0], gf); };
  EXPECT_LT(grad_check(f_fl, {pf}, rng).max_rel_error, 1e-3);

  const auto gt_hr = constant(random_tensor(rng, {1, 4, 16, 16}, 0, 1));
  auto f_l1 = [&](std::vector<Var<double>>& in) { return supervised_l1(in[0], gt_hr, 2); };
  EXPECT_LT(grad_check(f_l1, {hr}, rng).max_rel_error, 1e-3);

  Rng init(15);
  networks::CsrConfig cfg;
  cfg.widths = {8, 8};
  const auto csr = networks::Csr<float>(cfg, init).cast<double>();
  const auto i0 = random_tensor(rng, {1, 1, 16, 16}, 0, 1), it = random_tensor(rng, {1, 1, 16, 16}, 0, 1),
             i1 = random_tensor(rng, {1, 1, 16, 16}, 0, 1);
  std::vector<Var<double>> params;
  for (const auto& [k, v] : csr.params().items()) params.push_back(v);
  auto f_ac = [&](std::vector<Var<double>>&) { return anchor_consistency(csr, i0, it, i1); };
  const auto r = grad_check(f_ac, params, rng, 6);
  EXPECT_GT(r.checked, 50);
  EXPECT_LT(r.max_rel_error, 1e-3);
}
