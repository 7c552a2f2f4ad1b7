#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "l1bsr/core/errors.hpp"
#include "l1bsr/core/image.hpp"
#include "l1bsr/geometry.hpp"
#include "l1bsr/networks.hpp"
#include "l1bsr/simulation.hpp"

// Registration error matrices, TV-L1 optical flow and alignment-aware PSNR.
namespace l1bsr::evaluation {

inline constexpr int kLrBorder = 4;
inline constexpr int kHrBorder = 8;

/// Runs fn(0..n-1) on up to `workers` threads. Each index writes only its
/// own result slot, so reductions done afterwards in index order are
/// independent of the thread count.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Flow errors

enum class ErrorMode { euclidean, component };

inline ErrorMode parse_error_mode(const std::string& s) {
  if (s == "euclidean") return ErrorMode::euclidean;
  if (s == "component") return ErrorMode::component;
  throw ConfigError("unknown error mode '" + s + "' (expected euclidean or component)");
}

/// Mean over interior pixels of |pred - gt|: the Euclidean norm per pixel,
/// or in component mode the mean of |dx| and |dy| errors.
template <class T>
double flow_endpoint_error(const FlowField<T>& pred, const FlowField<T>& gt, int border = kLrBorder,
                           ErrorMode mode = ErrorMode::euclidean) {
  require(pred.same_shape(gt), "flow_endpoint_error: shape mismatch");
  require(pred.height() > 2 * border && pred.width() > 2 * border,
          "flow_endpoint_error: field smaller than the excluded border");
  double acc = 0;
  long n = 0;
  for (int y = border; y < pred.height() - border; ++y)
    for (int x = border; x < pred.width() - border; ++x, ++n) {
      const double ex = static_cast<double>(pred.dx(y, x)) - gt.dx(y, x);
      const double ey = static_cast<double>(pred.dy(y, x)) - gt.dy(y, x);
      acc += mode == ErrorMode::euclidean ? std::hypot(ex, ey) : 0.5 * (std::abs(ex) + std::abs(ey));
    }
  return acc / static_cast<double>(n);
}

template <class T>
double mean_flow_magnitude(const FlowField<T>& f, int border) {
  return flow_endpoint_error(f, FlowField<T>(f.height(), f.width()), border);
}

/// Rows: reference band i of I0. Columns: target band j of I1.
struct RegistrationErrorMatrix {
  std::array<std::array<double, kNumBands>, kNumBands> error{};
  std::size_t samples = 0;
  ErrorMode mode = ErrorMode::euclidean;

  double max() const {
    double m = 0;
    for (const auto& row : error)
      for (double v : row) m = std::max(m, v);
    return m;
  }
  double max_diagonal() const {
    double m = 0;
    for (int i = 0; i < kNumBands; ++i) m = std::max(m, error[i][i]);
    return m;
  }
  double mean() const {
    double s = 0;
    for (const auto& row : error)
      for (double v : row) s += v;
    return s / (kNumBands * kNumBands);
  }
};

inline nlohmann::json to_json(const RegistrationErrorMatrix& m) {
  nlohmann::json rows = nlohmann::json::object();
  for (int i = 0; i < kNumBands; ++i) {
    nlohmann::json row = nlohmann::json::object();
    for (int j = 0; j < kNumBands; ++j) row[std::string(1, kBandNames[j])] = m.error[i][j];
    rows[std::string(1, kBandNames[i])] = row;
  }
  return {{"error_px", rows},
          {"samples", m.samples},
          {"mode", m.mode == ErrorMode::euclidean ? "euclidean" : "component"},
          {"rows", "reference band (I0)"},
          {"columns", "target band (I1)"}};
}

inline std::string format_table(const RegistrationErrorMatrix& m) {
  std::ostringstream os;
  os << "Cross-spectral registration error (px), " << m.samples << " pairs\n";
  os << "ref\\tgt";
  for (char b : kBandNames) os << "        " << b;
  os << "\n";
  char buf[32];
  for (int i = 0; i < kNumBands; ++i) {
    os << "   " << kBandNames[i] << "   ";
    for (int j = 0; j < kNumBands; ++j) {
      std::snprintf(buf, sizeof buf, " %8.4f", m.error[i][j]);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

/// flow(ref, tgt) -> F_{tgt->ref}, as csr_forward.
using FlowFn = std::function<FlowField<float>(const BandImage& ref, const BandImage& tgt)>;

/// Averages the endpoint error of flow(I0_i, I1_j) against the flow induced
/// by the stored pair geometry, for all 16 band combinations.
inline RegistrationErrorMatrix registration_error_matrix(const FlowFn& flow,
                                                         const simulation::Dataset& ds,
                                                         ErrorMode mode = ErrorMode::euclidean,
                                                         int workers = 1) {
  require(!ds.items.empty(), "registration_error_matrix: empty test set");
  for (const auto& item : ds.items)
    require(item.geometry.has_value(), "registration_error_matrix: pair " + item.id +
                                           " has no ground-truth geometry");
  std::vector<std::array<std::array<double, kNumBands>, kNumBands>> per_item(ds.items.size());
  parallel_for(ds.items.size(), workers, [&](std::size_t k) {
    const auto& item = ds.items[k];
    const int h = item.i0.height(), w = item.i0.width();
    for (int i = 0; i < kNumBands; ++i)
      for (int j = 0; j < kNumBands; ++j) {
        const FlowField<float> pred = flow(item.i0.channel(i), item.i1.channel(j));
        const FlowField<float> gt = simulation::gt_flow(*item.geometry, i, j, h, w);
        per_item[k][i][j] = flow_endpoint_error(pred, gt, kLrBorder, mode);
      }
  });
  RegistrationErrorMatrix m;
  m.mode = mode;
  m.samples = ds.items.size();
  for (const auto& e : per_item)
    for (int i = 0; i < kNumBands; ++i)
      for (int j = 0; j < kNumBands; ++j) m.error[i][j] += e[i][j];
  for (auto& row : m.error)
    for (double& v : row) v /= static_cast<double>(ds.items.size());
  return m;
}

inline RegistrationErrorMatrix registration_error_matrix(const networks::Csr<float>& csr,
                                                         const simulation::Dataset& ds,
                                                         ErrorMode mode = ErrorMode::euclidean,
                                                         int workers = 1) {
  return registration_error_matrix(
      [&](const BandImage& ref, const BandImage& tgt) { return networks::csr_forward(csr, ref, tgt); },
      ds, mode, workers);
}

// ---------------------------------------------------------------------------
// TV-L1 optical flow

/// Duality-based TV-L1 with coarse-to-fine warping. Images are jointly
/// rescaled to [0, 255] before solving, so lambda is in those units.
struct TvL1Params {
  double lambda = 0.3;  // data attachment weight
  double tau = 0.25;
  double theta = 0.3;
  int scales = 5;
  double zoom = 0.5;
  int warps = 5;
  int iterations = 300;
  double epsilon = 0.01;
  double presmooth = 0.8;
};

namespace tvl1_detail {

using Plane = std::vector<double>;

struct Grid {
  int h = 0, w = 0;
  std::size_t size() const { return static_cast<std::size_t>(h) * w; }
};

inline double sample(const Plane& p, Grid g, double x, double y) {
  return geometry::kernel::cubic(p.data(), g.h, g.w, x, y);
}

inline Plane blur(const Plane& p, Grid g, double sigma) {
  if (sigma <= 0) return p;
  Image<double> im(1, g.h, g.w);
  std::copy(p.begin(), p.end(), im.data().begin());
  return geometry::gaussian_blur(im, sigma).data();
}

/// Smooth then resample at x / zoom.
inline Plane zoom_out(const Plane& p, Grid from, Grid to, double zoom) {
  const Plane s = blur(p, from, 0.6 * std::sqrt(1.0 / (zoom * zoom) - 1.0));
  Plane out(to.size());
  const double fx = static_cast<double>(from.w) / to.w, fy = static_cast<double>(from.h) / to.h;
  for (int y = 0; y < to.h; ++y)
    for (int x = 0; x < to.w; ++x) out[y * to.w + x] = sample(s, from, x * fx, y * fy);
  return out;
}

inline Plane zoom_in(const Plane& p, Grid from, Grid to) {
  Plane out(to.size());
  const double fx = static_cast<double>(from.w) / to.w, fy = static_cast<double>(from.h) / to.h;
  for (int y = 0; y < to.h; ++y)
    for (int x = 0; x < to.w; ++x) out[y * to.w + x] = sample(p, from, x * fx, y * fy);
  return out;
}

inline void centered_gradient(const Plane& f, Grid g, Plane& fx, Plane& fy) {
  fx.assign(g.size(), 0);
  fy.assign(g.size(), 0);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      const int xl = std::max(x - 1, 0), xr = std::min(x + 1, g.w - 1);
      const int yu = std::max(y - 1, 0), yd = std::min(y + 1, g.h - 1);
      fx[y * g.w + x] = 0.5 * (f[y * g.w + xr] - f[y * g.w + xl]);
      fy[y * g.w + x] = 0.5 * (f[yd * g.w + x] - f[yu * g.w + x]);
    }
}

inline void forward_gradient(const Plane& f, Grid g, Plane& fx, Plane& fy) {
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * g.w + x;
      fx[i] = x + 1 < g.w ? f[i + 1] - f[i] : 0.0;
      fy[i] = y + 1 < g.h ? f[i + g.w] - f[i] : 0.0;
    }
}

// Negative adjoint of forward_gradient.
inline void divergence(const Plane& v1, const Plane& v2, Grid g, Plane& div) {
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * g.w + x;
      double d = 0;
      if (x + 1 < g.w) d += v1[i];
      if (x > 0) d -= v1[i - 1];
      if (y + 1 < g.h) d += v2[i];
      if (y > 0) d -= v2[i - g.w];
      div[i] = d;
    }
}

inline void solve_level(const Plane& i0, const Plane& i1, Grid g, Plane& u1, Plane& u2,
                        const TvL1Params& p) {
  const std::size_t n = g.size();
  const double lt = p.lambda * p.theta, taut = p.tau / p.theta;
  Plane i1x, i1y;
  centered_gradient(i1, g, i1x, i1y);
  Plane i1w(n), i1wx(n), i1wy(n), grad(n), rho_c(n), v1(n), v2(n);
  Plane p11(n, 0), p12(n, 0), p21(n, 0), p22(n, 0), div1(n), div2(n);
  Plane u1x(n), u1y(n), u2x(n), u2y(n);
  for (int warp = 0; warp < p.warps; ++warp) {
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * g.w + x;
        const double sx = x + u1[i], sy = y + u2[i];
        i1w[i] = sample(i1, g, sx, sy);
        i1wx[i] = sample(i1x, g, sx, sy);
        i1wy[i] = sample(i1y, g, sx, sy);
        grad[i] = i1wx[i] * i1wx[i] + i1wy[i] * i1wy[i];
        rho_c[i] = i1w[i] - i1wx[i] * u1[i] - i1wy[i] * u2[i] - i0[i];
      }
    double error = std::numeric_limits<double>::infinity();
    for (int it = 0; it < p.iterations && error > p.epsilon * p.epsilon; ++it) {
      for (std::size_t i = 0; i < n; ++i) {
        const double rho = rho_c[i] + i1wx[i] * u1[i] + i1wy[i] * u2[i];
        double d1 = 0, d2 = 0;
        if (rho < -lt * grad[i]) {
          d1 = lt * i1wx[i];
          d2 = lt * i1wy[i];
        } else if (rho > lt * grad[i]) {
          d1 = -lt * i1wx[i];
          d2 = -lt * i1wy[i];
        } else if (grad[i] > 1e-10) {
          const double f = -rho / grad[i];
          d1 = f * i1wx[i];
          d2 = f * i1wy[i];
        }
        v1[i] = u1[i] + d1;
        v2[i] = u2[i] + d2;
      }
      divergence(p11, p12, g, div1);
      divergence(p21, p22, g, div2);
      error = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double a = v1[i] + p.theta * div1[i], b = v2[i] + p.theta * div2[i];
        error += (a - u1[i]) * (a - u1[i]) + (b - u2[i]) * (b - u2[i]);
        u1[i] = a;
        u2[i] = b;
      }
      error /= static_cast<double>(n);
      forward_gradient(u1, g, u1x, u1y);
      forward_gradient(u2, g, u2x, u2y);
      for (std::size_t i = 0; i < n; ++i) {
        const double ng1 = 1.0 + taut * std::hypot(u1x[i], u1y[i]);
        const double ng2 = 1.0 + taut * std::hypot(u2x[i], u2y[i]);
        p11[i] = (p11[i] + taut * u1x[i]) / ng1;
        p12[i] = (p12[i] + taut * u1y[i]) / ng1;
        p21[i] = (p21[i] + taut * u2x[i]) / ng2;
        p22[i] = (p22[i] + taut * u2y[i]) / ng2;
      }
    }
  }
}

}  // namespace tvl1_detail

/// Dense flow F on a's grid with pullback(b, F) ~ a (F_{a->b}). Deterministic.
inline FlowField<float> tvl1_flow(const BandImage& a, const BandImage& b, const TvL1Params& p = {}) {
  using namespace tvl1_detail;
  require(a.channels() == 1 && b.channels() == 1, "tvl1_flow: single bands expected");
  require(a.same_shape(b), "tvl1_flow: shape mismatch");
  require(p.zoom > 0 && p.zoom < 1 && p.scales >= 1 && p.warps >= 1 && p.iterations >= 1,
          "tvl1_flow: invalid parameters");
  const Grid g0{a.height(), a.width()};

  // Joint rescaling to [0, 255].
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* im : {&a, &b})
    for (float v : im->data()) {
      lo = std::min<double>(lo, v);
      hi = std::max<double>(hi, v);
    }
  const double range = hi - lo;
  auto normalized = [&](const BandImage& im) {
    Plane out(im.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = range > 0 ? 255.0 * (im.data()[i] - lo) / range : 0.0;
    return blur(out, g0, p.presmooth);
  };

  // Coarsest level no smaller than about 16 px diagonal.
  int scales = p.scales;
  const double max_scales = 1.0 + std::log(std::hypot(g0.h, g0.w) / 16.0) / std::log(1.0 / p.zoom);
  if (max_scales < scales) scales = std::max(1, static_cast<int>(max_scales));

  std::vector<Grid> grids{g0};
  std::vector<Plane> pa{normalized(a)}, pb{normalized(b)};
  for (int s = 1; s < scales; ++s) {
    const Grid prev = grids.back();
    const Grid next{std::max(1, static_cast<int>(prev.h * p.zoom + 0.5)),
                    std::max(1, static_cast<int>(prev.w * p.zoom + 0.5))};
    pa.push_back(zoom_out(pa.back(), prev, next, p.zoom));
    pb.push_back(zoom_out(pb.back(), prev, next, p.zoom));
    grids.push_back(next);
  }

  Plane u1(grids.back().size(), 0.0), u2(grids.back().size(), 0.0);
  for (int s = scales - 1; s >= 0; --s) {
    solve_level(pa[s], pb[s], grids[s], u1, u2, p);
    if (s > 0) {
      const Grid from = grids[s], to = grids[s - 1];
      u1 = zoom_in(u1, from, to);
      u2 = zoom_in(u2, from, to);
      const double sx = static_cast<double>(to.w) / from.w, sy = static_cast<double>(to.h) / from.h;
      for (auto& v : u1) v *= sx;
      for (auto& v : u2) v *= sy;
    }
  }
  FlowField<float> out(g0.h, g0.w);
  for (std::size_t i = 0; i < g0.size(); ++i) {
    out.plane(0)[i] = static_cast<float>(u1[i]);
    out.plane(1)[i] = static_cast<float>(u2[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PSNR

/// Values above this are reported for (numerically) identical images.
inline constexpr double kMaxPsnr = 100.0;

/// 10 log10(1 / MSE) over the interior, peak 1.
inline double psnr(const BandImage& a, const BandImage& b, int border = kHrBorder) {
  require(a.same_shape(b) && a.channels() == 1, "psnr: single same-shape bands expected");
  require(a.height() > 2 * border && a.width() > 2 * border, "psnr: image smaller than the border");
  double acc = 0;
  long n = 0;
  for (int y = border; y < a.height() - border; ++y)
    for (int x = border; x < a.width() - border; ++x, ++n) {
      const double d = static_cast<double>(a(0, y, x)) - b(0, y, x);
      acc += d * d;
    }
  const double mse = acc / static_cast<double>(n);
  return std::min(kMaxPsnr, -10.0 * std::log10(std::max(mse, 1e-300)));
}

struct PsnrReport {
  std::string bands;               // band letters reported, in b,g,r,n order
  std::vector<double> psnr;        // one entry per reported band, dB
  std::string alignment = "tvl1";  // "tvl1" or "none"
  int border = kHrBorder;
  std::size_t samples = 0;

  double band(char name) const {
    const auto pos = bands.find(name);
    if (pos == std::string::npos) throw DataError(std::string("report has no band '") + name + "'");
    return psnr[pos];
  }
};

inline nlohmann::json to_json(const PsnrReport& r) {
  nlohmann::json per_band = nlohmann::json::object();
  for (std::size_t i = 0; i < r.bands.size(); ++i) per_band[std::string(1, r.bands[i])] = r.psnr[i];
  return {{"psnr_db", per_band}, {"alignment", r.alignment}, {"border", r.border}, {"samples", r.samples}};
}

inline std::string format_table(const PsnrReport& r, const std::string& label = "model") {
  std::ostringstream os;
  os << "PSNR (dB) after aligning GT bands to SR bands (" << r.alignment << "), " << r.samples
     << " crops, border " << r.border << " px\n";
  os << "method      ";
  for (char b : kBandNames) os << "        " << b;
  os << "\n";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%-12s", label.c_str());
  os << buf;
  for (char b : kBandNames) {
    const auto pos = r.bands.find(b);
    if (pos == std::string::npos) {
      os << "        -";
    } else {
      std::snprintf(buf, sizeof buf, " %8.3f", r.psnr[pos]);
      os << buf;
    }
  }
  os << "\n";
  return os.str();
}

/// Per band: warp the GT band onto the SR band with TV-L1, then PSNR.
inline std::vector<double> aligned_psnr_bands(const Image<float>& sr, const Image<float>& gt,
                                              const TvL1Params& p = {}, int border = kHrBorder) {
  require(sr.same_shape(gt), "aligned_psnr: shape mismatch");
  std::vector<double> out;
  for (int c = 0; c < sr.channels(); ++c) {
    const BandImage s = sr.channel(c), g = gt.channel(c);
    const FlowField<float> f = tvl1_flow(s, g, p);
    out.push_back(psnr(s, geometry::pullback(g, f), border));
  }
  return out;
}

inline std::vector<double> unaligned_psnr_bands(const Image<float>& sr, const Image<float>& gt,
                                                int border = kHrBorder) {
  require(sr.same_shape(gt), "psnr: shape mismatch");
  std::vector<double> out;
  for (int c = 0; c < sr.channels(); ++c) out.push_back(psnr(sr.channel(c), gt.channel(c), border));
  return out;
}

inline PsnrReport aligned_psnr(const MultiBandImage& sr, const MultiBandImage& gt,
                               const std::string& bands = "bgrn", const TvL1Params& p = {}) {
  require(static_cast<int>(bands.size()) == sr.channels(), "aligned_psnr: band list does not match channels");
  return {bands, aligned_psnr_bands(sr, gt, p), "tvl1", kHrBorder, 1};
}

/// x2 bicubic upsampling on the decimation grid used throughout: HR site X
/// reads LR coordinate X / 2.
inline Image<float> bicubic_upsample(const Image<float>& lr) {
  Image<float> out(lr.channels(), 2 * lr.height(), 2 * lr.width());
  for (int c = 0; c < lr.channels(); ++c) {
    const float* p = lr.plane(c).data();
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x)
        out(c, y, x) = geometry::kernel::cubic(p, lr.height(), lr.width(), 0.5f * x, 0.5f * y);
  }
  return out;
}

inline Image<float> clamp01(Image<float> im) {
  for (auto& v : im.data()) v = std::clamp(v, 0.0f, 1.0f);
  return im;
}

struct SrEvalOptions {
  bool align = true;
  TvL1Params tvl1;
  int workers = 1;
};

/// sr(lr bands) -> HR bands, for the bands listed in `bands`.
using SrFn = std::function<Image<float>(const Image<float>& lr)>;

inline Image<float> pick_bands(const MultiBandImage& im, const std::string& bands) {
  Image<float> out(static_cast<int>(bands.size()), im.height(), im.width());
  for (std::size_t i = 0; i < bands.size(); ++i)
    out.set_channel(static_cast<int>(i), im.channel(band_index(bands[i])));
  return out;
}

/// Runs `sr` on every I0 (restricted to `bands`), clamps to [0,1] and
/// measures per-band PSNR against the HR ground truth of I0.
inline PsnrReport evaluate_sr(const SrFn& sr, const simulation::Dataset& ds, const std::string& bands,
                              const SrEvalOptions& opt = {}) {
  require(!ds.items.empty(), "evaluate_sr: empty test set");
  for (const auto& item : ds.items)
    require(item.hr.has_value(), "evaluate_sr: pair " + item.id + " has no HR ground truth");
  std::vector<std::vector<double>> per_item(ds.items.size());
  parallel_for(ds.items.size(), opt.workers, [&](std::size_t k) {
    const auto& item = ds.items[k];
    const Image<float> out = clamp01(sr(pick_bands(item.i0, bands)));
    const Image<float> gt = pick_bands((*item.hr)[0], bands);
    require(out.same_shape(gt), "evaluate_sr: model output does not match the HR ground truth");
    per_item[k] = opt.align ? aligned_psnr_bands(out, gt, opt.tvl1) : unaligned_psnr_bands(out, gt);
  });
  PsnrReport r{bands, std::vector<double>(bands.size(), 0.0), opt.align ? "tvl1" : "none", kHrBorder,
               ds.items.size()};
  for (const auto& v : per_item)
    for (std::size_t i = 0; i < v.size(); ++i) r.psnr[i] += v[i];
  for (double& v : r.psnr) v /= static_cast<double>(ds.items.size());
  return r;
}

inline PsnrReport evaluate_sr(const networks::Rec<float>& rec, const simulation::Dataset& ds,
                              const SrEvalOptions& opt = {}) {
  return evaluate_sr([&](const Image<float>& lr) { return networks::rec_forward(rec, lr); }, ds,
                     rec.config().bands, opt);
}

inline PsnrReport evaluate_bicubic(const simulation::Dataset& ds, const std::string& bands,
                                   const SrEvalOptions& opt = {}) {
  return evaluate_sr(bicubic_upsample, ds, bands, opt);
}

// ---------------------------------------------------------------------------
// Band alignment of a multi-band output

/// Misalignment of each band of `sr` relative to its green band, measured
/// through a band-aligned reference `gt` (all of whose bands share the green
/// frame): F_c = tvl1_flow(sr_c, gt_c) locates sr_c in that frame, and the
/// entry for band c is the interior mean of |F_c - F_g|. Same-band flows avoid
/// the cross-spectral contrast differences that defeat a direct band-to-band
/// TV-L1 comparison.
inline std::array<double, kNumBands> band_misalignment(const MultiBandImage& sr, const MultiBandImage& gt,
                                                       const TvL1Params& p = {}, int border = kHrBorder) {
  check_multiband(sr);
  require(sr.same_shape(gt), "band_misalignment: shape mismatch");
  const int g = static_cast<int>(Band::g);
  std::array<FlowField<float>, kNumBands> f;
  for (int c = 0; c < kNumBands; ++c) f[c] = tvl1_flow(sr.channel(c), gt.channel(c), p);
  std::array<double, kNumBands> out{};
  for (int c = 0; c < kNumBands; ++c) out[c] = flow_endpoint_error(f[c], f[g], border);
  return out;
}

/// Mean TV-L1 flow magnitude between each standardized band and the
/// standardized green band of `im`. Diagnostic only: on cross-spectral
/// content it is dominated by contrast differences, even for aligned bands.
inline std::array<double, kNumBands> direct_band_flow_magnitude(const MultiBandImage& im,
                                                                const TvL1Params& p = {},
                                                                int border = kHrBorder) {
  check_multiband(im);
  const int g = static_cast<int>(Band::g);
  const BandImage green = networks::normalize_band(im.channel(g));
  std::array<double, kNumBands> out{};
  for (int c = 0; c < kNumBands; ++c) {
    if (c == g) continue;
    out[c] = mean_flow_magnitude(tvl1_flow(green, networks::normalize_band(im.channel(c)), p), border);
  }
  return out;
}

}  // namespace l1bsr::evaluation
