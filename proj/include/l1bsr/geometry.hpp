#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "l1bsr/core/autograd.hpp"
#include "l1bsr/core/errors.hpp"
#include "l1bsr/core/image.hpp"
#include "l1bsr/core/tensor.hpp"
#include "l1bsr/nn/ops.hpp"

// Warping, decimation, flow algebra and homographies.
//
// Flow convention: a flow F_{X->Y} lives on X's grid and points into Y, so
// pullback(Y, F_{X->Y}) is aligned with X. Image samplers replicate the
// border (tap indices are clamped), images use Catmull-Rom bicubic (a=-0.5)
// and flow fields use bilinear interpolation.
namespace l1bsr::geometry {

// ---------------------------------------------------------------------------
// Interpolation kernels

namespace kernel {

template <class T>
inline void cubic_weights(T t, T w[4]) {
  w[0] = ((T(-0.5) * t + T(1)) * t - T(0.5)) * t;
  w[1] = (T(1.5) * t - T(2.5)) * t * t + T(1);
  w[2] = ((T(-1.5) * t + T(2)) * t + T(0.5)) * t;
  w[3] = (T(0.5) * t - T(0.5)) * t * t;
}

template <class T>
inline void cubic_weights_deriv(T t, T d[4]) {
  d[0] = (T(-1.5) * t + T(2)) * t - T(0.5);
  d[1] = (T(4.5) * t - T(5)) * t;
  d[2] = (T(-4.5) * t + T(4)) * t + T(0.5);
  d[3] = (T(1.5) * t - T(1)) * t;
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Tap layout shared by value, gradient and scatter paths.
template <class T>
struct CubicTaps {
  int xs[4], ys[4];
  T wx[4], wy[4];
  T dwx[4], dwy[4];
};

template <class T>
inline void cubic_taps(T x, T y, int h, int w, CubicTaps<T>& tp, bool with_deriv) {
  // Far outside the domain every tap lands on the border; keep floor() in range.
  x = std::min(std::max(x, T(-3)), static_cast<T>(w + 2));
  y = std::min(std::max(y, T(-3)), static_cast<T>(h + 2));
  const T fx = std::floor(x), fy = std::floor(y);
  const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
  const T tx = x - fx, ty = y - fy;
  cubic_weights(tx, tp.wx);
  cubic_weights(ty, tp.wy);
  if (with_deriv) {
    cubic_weights_deriv(tx, tp.dwx);
    cubic_weights_deriv(ty, tp.dwy);
  }
  for (int k = 0; k < 4; ++k) {
    tp.xs[k] = clampi(ix - 1 + k, 0, w - 1);
    tp.ys[k] = clampi(iy - 1 + k, 0, h - 1);
  }
}

/// Bicubic value at (x, y) of a plane with replicated border.
template <class T>
inline T cubic(const T* p, int h, int w, T x, T y) {
  CubicTaps<T> tp;
  cubic_taps(x, y, h, w, tp, false);
  T acc{};
  for (int j = 0; j < 4; ++j) {
    const T* row = p + static_cast<std::size_t>(tp.ys[j]) * w;
    T r{};
    for (int i = 0; i < 4; ++i) r += tp.wx[i] * row[tp.xs[i]];
    acc += tp.wy[j] * r;
  }
  return acc;
}

template <class T>
struct BilinearTaps {
  int x0, x1, y0, y1;
  T tx, ty;
};

template <class T>
inline BilinearTaps<T> bilinear_taps(T x, T y, int h, int w) {
  x = std::min(std::max(x, T(-2)), static_cast<T>(w + 1));
  y = std::min(std::max(y, T(-2)), static_cast<T>(h + 1));
  const T fx = std::floor(x), fy = std::floor(y);
  const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
  return {clampi(ix, 0, w - 1), clampi(ix + 1, 0, w - 1), clampi(iy, 0, h - 1),
          clampi(iy + 1, 0, h - 1), x - fx, y - fy};
}

template <class T>
inline T bilinear(const T* p, int h, int w, T x, T y) {
  const auto t = bilinear_taps(x, y, h, w);
  const T a = p[t.y0 * w + t.x0], b = p[t.y0 * w + t.x1];
  const T c = p[t.y1 * w + t.x0], d = p[t.y1 * w + t.x1];
  return (T(1) - t.ty) * ((T(1) - t.tx) * a + t.tx * b) + t.ty * ((T(1) - t.tx) * c + t.tx * d);
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Homography

/// 3x3 projective map on pixel coordinates, row-major, normalized so that
/// the bottom-right entry is 1.
class Homography {
 public:
  Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}
  explicit Homography(const std::array<double, 9>& m) : m_(m) { normalize(); }

  static Homography identity() { return {}; }
  static Homography translation(double tx, double ty) {
    return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1});
  }
  static Homography scaling(double sx, double sy) {
    return Homography({sx, 0, 0, 0, sy, 0, 0, 0, 1});
  }

  /// Map sending each src[k] to dst[k] (four-point direct linear transform).
  static Homography from_correspondences(const std::array<std::array<double, 2>, 4>& src,
                                         const std::array<std::array<double, 2>, 4>& dst) {
    double a[8][9] = {};
    for (int k = 0; k < 4; ++k) {
      const double x = src[k][0], y = src[k][1], u = dst[k][0], v = dst[k][1];
      double r0[9] = {x, y, 1, 0, 0, 0, -u * x, -u * y, u};
      double r1[9] = {0, 0, 0, x, y, 1, -v * x, -v * y, v};
      std::copy(r0, r0 + 9, a[2 * k]);
      std::copy(r1, r1 + 9, a[2 * k + 1]);
    }
    for (int col = 0; col < 8; ++col) {
      int piv = col;
      for (int r = col + 1; r < 8; ++r)
        if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
      if (std::abs(a[piv][col]) < 1e-12) throw DataError("degenerate homography correspondences");
      std::swap(a[piv], a[col]);
      for (int r = 0; r < 8; ++r) {
        if (r == col) continue;
        const double f = a[r][col] / a[col][col];
        for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
      }
    }
    std::array<double, 9> m{};
    for (int i = 0; i < 8; ++i) m[i] = a[i][8] / a[i][i];
    m[8] = 1;
    return Homography(m);
  }

  double operator()(int r, int c) const { return m_[r * 3 + c]; }
  const std::array<double, 9>& matrix() const { return m_; }

  std::pair<double, double> apply(double x, double y) const {
    const double w = m_[6] * x + m_[7] * y + m_[8];
    return {(m_[0] * x + m_[1] * y + m_[2]) / w, (m_[3] * x + m_[4] * y + m_[5]) / w};
  }

  double determinant() const {
    const auto& m = m_;
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  void check_invertible() const {
    if (!(std::abs(determinant()) > 1e-8)) throw DataError("near-singular homography");
  }

  Homography inverse() const {
    check_invertible();
    const auto& m = m_;
    const double d = determinant();
    return Homography({(m[4] * m[8] - m[5] * m[7]) / d, (m[2] * m[7] - m[1] * m[8]) / d,
                       (m[1] * m[5] - m[2] * m[4]) / d, (m[5] * m[6] - m[3] * m[8]) / d,
                       (m[0] * m[8] - m[2] * m[6]) / d, (m[2] * m[3] - m[0] * m[5]) / d,
                       (m[3] * m[7] - m[4] * m[6]) / d, (m[1] * m[6] - m[0] * m[7]) / d,
                       (m[0] * m[4] - m[1] * m[3]) / d});
  }

  /// Matrix product: (a * b).apply(p) == a.apply(b.apply(p)).
  friend Homography operator*(const Homography& a, const Homography& b) {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r[i * 3 + j] += a.m_[i * 3 + k] * b.m_[k * 3 + j];
    return Homography(r);
  }

  /// Same map expressed on a grid decimated by `factor` at phase 0
  /// (fine coordinate = factor * coarse coordinate).
  Homography rescaled(double factor) const {
    return scaling(1.0 / factor, 1.0 / factor) * (*this) * scaling(factor, factor);
  }

 private:
  void normalize() {
    if (std::abs(m_[8]) < 1e-15) throw DataError("homography with zero bottom-right entry");
    const double s = m_[8];
    for (auto& v : m_) v /= s;
  }

  std::array<double, 9> m_;
};

// ---------------------------------------------------------------------------
// Differentiable samplers on batched tensors

namespace detail {

// Flow channels: 2 (one field shared by every image channel) or 2*C (one
// field per channel, channel c uses planes 2c and 2c+1).
template <class T>
int flow_channel_for(const Shape& fs, int c) {
  return fs.c == 2 ? 0 : 2 * c;
}

template <class T>
void check_flow(const Shape& src, const Shape& flow, int scale, const char* op) {
  require(flow.n == src.n, std::string(op) + ": batch mismatch");
  require(flow.c == 2 || flow.c == 2 * src.c,
          std::string(op) + ": flow must have 2 or 2*C channels, got " + flow.str());
  require(src.h == scale * flow.h && src.w == scale * flow.w,
          std::string(op) + ": source " + src.str() + " does not match flow grid " + flow.str());
}

}  // namespace detail

/// out(n,c,y,x) = src(n,c, s*(x + u), s*(y + v)) with bicubic interpolation,
/// where (u,v) is the flow at (y,x). Differentiable in src and flow.
template <class T>
Var<T> cubic_warp(const Var<T>& src, const Var<T>& flow, int s) {
  const Shape ss = src.shape(), fs = flow.shape();
  detail::check_flow<T>(ss, fs, s, "cubic_warp");
  const int h = fs.h, w = fs.w;
  Tensor<T> out(ss.n, ss.c, h, w);
  for (int n = 0; n < ss.n; ++n)
    for (int c = 0; c < ss.c; ++c) {
      const int fc = detail::flow_channel_for<T>(fs, c);
      const T* fu = flow.value().plane(n, fc);
      const T* fv = flow.value().plane(n, fc + 1);
      const T* p = src.value().plane(n, c);
      T* d = out.plane(n, c);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int i = y * w + x;
          d[i] = kernel::cubic(p, ss.h, ss.w, T(s) * (x + fu[i]), T(s) * (y + fv[i]));
        }
    }
  return Var<T>::make(std::move(out), {src, flow}, [ss, fs, s](typename Var<T>::Node& self) {
    auto* sn = self.parents[0].get();
    auto* fn = self.parents[1].get();
    const int h = fs.h, w = fs.w;
    kernel::CubicTaps<T> tp;
    for (int n = 0; n < ss.n; ++n)
      for (int c = 0; c < ss.c; ++c) {
        const int fc = detail::flow_channel_for<T>(fs, c);
        const T* fu = fn->value.plane(n, fc);
        const T* fv = fn->value.plane(n, fc + 1);
        const T* p = sn->value.plane(n, c);
        const T* g = self.grad.plane(n, c);
        T* gs = sn->requires_grad ? sn->grad_buffer().plane(n, c) : nullptr;
        T* gu = fn->requires_grad ? fn->grad_buffer().plane(n, fc) : nullptr;
        T* gv = fn->requires_grad ? fn->grad_buffer().plane(n, fc + 1) : nullptr;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            const T gi = g[i];
            if (gi == T{0}) continue;
            const T X = T(s) * (x + fu[i]), Y = T(s) * (y + fv[i]);
            kernel::cubic_taps(X, Y, ss.h, ss.w, tp, gu != nullptr);
            // Clamping X/Y inside cubic_taps only happens where every tap is
            // already on the border, where the derivative vanishes anyway.
            T dX{}, dY{};
            for (int j = 0; j < 4; ++j) {
              const std::size_t row = static_cast<std::size_t>(tp.ys[j]) * ss.w;
              for (int k = 0; k < 4; ++k) {
                const T v = p[row + tp.xs[k]];
                if (gs) gs[row + tp.xs[k]] += gi * tp.wy[j] * tp.wx[k];
                if (gu) {
                  dX += tp.wy[j] * tp.dwx[k] * v;
                  dY += tp.dwy[j] * tp.wx[k] * v;
                }
              }
            }
            if (gu) {
              gu[i] += gi * T(s) * dX;
              gv[i] += gi * T(s) * dY;
            }
          }
      }
  });
}

/// out(n,c,y,x) = src(n,c, x + u, y + v) with bilinear interpolation.
/// Differentiable in src and flow.
template <class T>
Var<T> bilinear_warp(const Var<T>& src, const Var<T>& flow) {
  const Shape ss = src.shape(), fs = flow.shape();
  detail::check_flow<T>(ss, fs, 1, "bilinear_warp");
  const int h = fs.h, w = fs.w;
  Tensor<T> out(ss.n, ss.c, h, w);
  for (int n = 0; n < ss.n; ++n)
    for (int c = 0; c < ss.c; ++c) {
      const int fc = detail::flow_channel_for<T>(fs, c);
      const T* fu = flow.value().plane(n, fc);
      const T* fv = flow.value().plane(n, fc + 1);
      const T* p = src.value().plane(n, c);
      T* d = out.plane(n, c);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int i = y * w + x;
          d[i] = kernel::bilinear(p, h, w, x + fu[i], y + fv[i]);
        }
    }
  return Var<T>::make(std::move(out), {src, flow}, [ss, fs](typename Var<T>::Node& self) {
    auto* sn = self.parents[0].get();
    auto* fn = self.parents[1].get();
    const int h = fs.h, w = fs.w;
    for (int n = 0; n < ss.n; ++n)
      for (int c = 0; c < ss.c; ++c) {
        const int fc = detail::flow_channel_for<T>(fs, c);
        const T* fu = fn->value.plane(n, fc);
        const T* fv = fn->value.plane(n, fc + 1);
        const T* p = sn->value.plane(n, c);
        const T* g = self.grad.plane(n, c);
        T* gs = sn->requires_grad ? sn->grad_buffer().plane(n, c) : nullptr;
        T* gu = fn->requires_grad ? fn->grad_buffer().plane(n, fc) : nullptr;
        T* gv = fn->requires_grad ? fn->grad_buffer().plane(n, fc + 1) : nullptr;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            const T gi = g[i];
            if (gi == T{0}) continue;
            const T X = x + fu[i], Y = y + fv[i];
            const auto t = kernel::bilinear_taps(X, Y, h, w);
            const T a = p[t.y0 * w + t.x0], b = p[t.y0 * w + t.x1];
            const T cc = p[t.y1 * w + t.x0], d = p[t.y1 * w + t.x1];
            if (gs) {
              gs[t.y0 * w + t.x0] += gi * (T(1) - t.ty) * (T(1) - t.tx);
              gs[t.y0 * w + t.x1] += gi * (T(1) - t.ty) * t.tx;
              gs[t.y1 * w + t.x0] += gi * t.ty * (T(1) - t.tx);
              gs[t.y1 * w + t.x1] += gi * t.ty * t.tx;
            }
            // Outside [-2, w+1] the coordinate was clamped; the taps are then
            // identical so both derivatives are zero.
            if (gu) {
              gu[i] += gi * ((T(1) - t.ty) * (b - a) + t.ty * (d - cc));
              gv[i] += gi * ((T(1) - t.tx) * (cc - a) + t.tx * (d - b));
            }
          }
      }
  });
}

/// Backward warp: out(x) = src(x + flow(x)), bicubic.
template <class T>
Var<T> pullback(const Var<T>& src, const Var<T>& flow) {
  return cubic_warp(src, flow, 1);
}

/// Fused HR warp and x2 decimation: out(x) = hr(2x + 2 flow(x)) with the flow
/// given on the LR grid.
template <class T>
Var<T> warp_and_downsample(const Var<T>& hr, const Var<T>& lr_flow) {
  return cubic_warp(hr, lr_flow, 2);
}

/// F(x) = f_ab(x) + f_bc(x + f_ab(x)); chaining X->A (f_ab) with A->B (f_bc)
/// gives X->B.
template <class T>
Var<T> compose_flows(const Var<T>& f_ab, const Var<T>& f_bc) {
  require(f_ab.shape() == f_bc.shape() && f_ab.shape().c == 2, "compose_flows: shape mismatch");
  return nn::add(f_ab, bilinear_warp(f_bc, f_ab));
}

/// Depthwise convolution with an odd square kernel and replicated border.
/// Differentiable in x.
template <class T>
Var<T> convolve_clamped(const Var<T>& x, const Image<T>& k) {
  require(k.channels() == 1 && k.height() == k.width() && k.height() % 2 == 1,
          "convolve_clamped: kernel must be a single odd square plane");
  const Shape s = x.shape();
  const int r = k.height() / 2, ks = k.height();
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      T* d = out.plane(n, c);
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          T acc{};
          for (int j = 0; j < ks; ++j) {
            const int yy = kernel::clampi(y + j - r, 0, s.h - 1);
            for (int i = 0; i < ks; ++i)
              acc += k(0, j, i) * p[yy * s.w + kernel::clampi(xx + i - r, 0, s.w - 1)];
          }
          d[y * s.w + xx] = acc;
        }
    }
  return Var<T>::make(std::move(out), {x}, [s, k, r, ks](typename Var<T>::Node& self) {
    auto* xn = self.parents[0].get();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* g = self.grad.plane(n, c);
        T* gx = xn->grad_buffer().plane(n, c);
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) {
            const T gi = g[y * s.w + xx];
            for (int j = 0; j < ks; ++j) {
              const int yy = kernel::clampi(y + j - r, 0, s.h - 1);
              for (int i = 0; i < ks; ++i)
                gx[yy * s.w + kernel::clampi(xx + i - r, 0, s.w - 1)] += gi * k(0, j, i);
            }
          }
      }
  });
}

// ---------------------------------------------------------------------------
// Image-level operators

template <class T>
Image<T> pullback(const Image<T>& src, const FlowField<T>& flow) {
  require(src.same_grid(flow), "pullback: source and flow grids differ");
  NoGradGuard ng;
  return pullback(constant(Tensor<T>::from_image(src)), constant(Tensor<T>::from_image(flow)))
      .value()
      .image(0);
}

template <class T>
Image<T> warp_and_downsample(const Image<T>& hr, const FlowField<T>& lr_flow) {
  require(hr.height() == 2 * lr_flow.height() && hr.width() == 2 * lr_flow.width(),
          "warp_and_downsample: HR image must be twice the flow grid");
  NoGradGuard ng;
  return warp_and_downsample(constant(Tensor<T>::from_image(hr)),
                             constant(Tensor<T>::from_image(lr_flow)))
      .value()
      .image(0);
}

template <class T>
FlowField<T> compose_flows(const FlowField<T>& f_ab, const FlowField<T>& f_bc) {
  require(f_ab.same_shape(f_bc), "compose_flows: shape mismatch");
  NoGradGuard ng;
  return FlowField<T>(compose_flows(constant(Tensor<T>::from_image(f_ab)),
                                    constant(Tensor<T>::from_image(f_bc)))
                          .value()
                          .image(0));
}

/// Pure decimation out(x) = src(factor*x + phase); no prefilter.
template <class T>
Image<T> subsample(const Image<T>& src, int factor = 2, std::pair<int, int> phase = {0, 0}) {
  require(factor >= 1, "subsample: factor must be positive");
  require(src.height() % factor == 0 && src.width() % factor == 0,
          "subsample: dimensions not divisible by the factor");
  const auto [py, px] = phase;
  require(py >= 0 && py < factor && px >= 0 && px < factor, "subsample: phase out of range");
  const int h = src.height() / factor, w = src.width() / factor;
  Image<T> out(src.channels(), h, w);
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(c, y, x) = src(c, factor * y + py, factor * x + px);
  return out;
}

/// Bilinear x2 upsampling of a flow field; fine site X reads coarse site X/2
/// and displacements are doubled, so upsampled(2x) == 2 * flow(x) exactly.
template <class T>
FlowField<T> upsample_flow(const FlowField<T>& flow, int factor = 2) {
  require(factor == 2, "upsample_flow: only factor 2 is supported");
  const int h = flow.height(), w = flow.width();
  FlowField<T> out(2 * h, 2 * w);
  for (int c = 0; c < 2; ++c) {
    const T* p = flow.plane(c).data();
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x)
        out(c, y, x) = T(2) * kernel::bilinear(p, h, w, T(0.5) * x, T(0.5) * y);
  }
  return out;
}

/// flow(x) = H(x) - x, so pullback(src, flow) resamples src at H(x).
template <class T>
FlowField<T> homography_to_flow(const Homography& hmg, int height, int width) {
  hmg.check_invertible();
  FlowField<T> out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto [u, v] = hmg.apply(x, y);
      out.dx(y, x) = static_cast<T>(u - x);
      out.dy(y, x) = static_cast<T>(v - y);
    }
  return out;
}

/// Backward resampling out(p) = src(H(p)), bicubic, replicated border.
template <class T>
Image<T> apply_homography(const Image<T>& src, const Homography& hmg) {
  hmg.check_invertible();
  Image<T> out(src.channels(), src.height(), src.width());
  const int h = src.height(), w = src.width();
  for (int c = 0; c < src.channels(); ++c) {
    const T* p = src.plane(c).data();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto [u, v] = hmg.apply(x, y);
        out(c, y, x) = kernel::cubic(p, h, w, static_cast<T>(u), static_cast<T>(v));
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filtering

/// Normalized 1-D Gaussian truncated at ceil(4 sigma); {1} for sigma == 0.
template <class T>
std::vector<T> gaussian_kernel_1d(double sigma) {
  require(sigma >= 0.0, "gaussian kernel: negative sigma");
  if (sigma == 0.0) return {T(1)};
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  std::vector<T> out(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) out[i] = static_cast<T>(k[i] / sum);
  return out;
}

/// Square 2-D Gaussian kernel (outer product), truncated to `size` taps and
/// renormalized.
template <class T>
Image<T> gaussian_kernel_2d(double sigma, int size) {
  require(size % 2 == 1 && size > 0, "gaussian_kernel_2d: size must be odd");
  const int r = size / 2;
  Image<T> k(1, size, size);
  if (sigma == 0.0) {
    k(0, r, r) = T(1);
    return k;
  }
  double sum = 0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) sum += std::exp(-0.5 * (x * x + y * y) / (sigma * sigma));
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x)
      k(0, y + r, x + r) = static_cast<T>(std::exp(-0.5 * (x * x + y * y) / (sigma * sigma)) / sum);
  return k;
}

/// Separable Gaussian blur with replicated border; identity for sigma == 0.
template <class T>
Image<T> gaussian_blur(const Image<T>& src, double sigma) {
  const auto k = gaussian_kernel_1d<T>(sigma);
  if (k.size() == 1) return src;
  const int r = static_cast<int>(k.size() / 2);
  const int h = src.height(), w = src.width();
  Image<T> tmp(src.channels(), h, w), out(src.channels(), h, w);
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        T acc{};
        for (int i = -r; i <= r; ++i) acc += k[i + r] * src(c, y, kernel::clampi(x + i, 0, w - 1));
        tmp(c, y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        T acc{};
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp(c, kernel::clampi(y + i, 0, h - 1), x);
        out(c, y, x) = acc;
      }
  }
  return out;
}

}  // namespace l1bsr::geometry
