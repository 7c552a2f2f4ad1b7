#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "l1bsr/core/autograd.hpp"
#include "l1bsr/core/blas.hpp"

// Differentiable tensor operations used by the two networks and the losses.
namespace l1bsr::nn {

namespace detail {

// col[(c*k + ky)*k + kx][y*w + x] = x[c][y + ky - pad][x + kx - pad], zero outside.
template <class T>
void im2col(const T* src, int channels, int h, int w, int k, T* col) {
  const int pad = k / 2;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * h * w;
        for (int y = 0; y < h; ++y) {
          const int iy = y + ky - pad;
          T* dst = row + static_cast<std::size_t>(y) * w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + w, T{});
            continue;
          }
          const T* s = src + (static_cast<std::size_t>(c) * h + iy) * w;
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          std::fill(dst, dst + x0, T{});
          for (int x = x0; x < x1; ++x) dst[x] = s[x + dx];
          std::fill(dst + std::max(x0, x1), dst + w, T{});
        }
      }
}

template <class T>
void col2im_add(const T* col, int channels, int h, int w, int k, T* dst) {
  const int pad = k / 2;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * h * w;
        for (int y = 0; y < h; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h) continue;
          T* d = dst + (static_cast<std::size_t>(c) * h + iy) * w;
          const T* s = row + static_cast<std::size_t>(y) * w;
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          for (int x = x0; x < x1; ++x) d[x + dx] += s[x];
        }
      }
}

template <class T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + a.shape().str() +
                                      " vs " + b.shape().str());
}

}  // namespace detail

/// Stride-1 "same" convolution with zero padding. weight [out,in,k,k], odd k;
/// bias [1,out,1,1] or undefined.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  require(ws.c == xs.c && ws.h == ws.w && ws.h % 2 == 1,
          "conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  const int k = ws.h, cin = xs.c, cout = ws.n, hw = xs.h * xs.w, ckk = cin * k * k;
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.shape().numel() == static_cast<std::size_t>(cout), "conv2d: bias size");

  Tensor<T> out(xs.n, cout, xs.h, xs.w);
  std::vector<T> col(k == 1 ? 0 : static_cast<std::size_t>(ckk) * hw);
  for (int n = 0; n < xs.n; ++n) {
    const T* src = x.value().plane(n, 0);
    const T* cm = src;
    if (k != 1) {
      detail::im2col(src, cin, xs.h, xs.w, k, col.data());
      cm = col.data();
    }
    T* dst = out.plane(n, 0);
    if (has_bias)
      for (int o = 0; o < cout; ++o) std::fill(dst + o * hw, dst + (o + 1) * hw, bias.value()[o]);
    blas::gemm<T>(false, false, cout, hw, ckk, T{1}, weight.value().data(), ckk, cm, hw,
                  has_bias ? T{1} : T{0}, dst, hw);
  }

  auto backward = [k, cin, cout, hw, ckk, xs, has_bias](typename Var<T>::Node& self) {
    auto* xn = self.parents[0].get();
    auto* wn = self.parents[1].get();
    auto* bn = has_bias ? self.parents[2].get() : nullptr;
    const Tensor<T>& g = self.grad;
    std::vector<T> col(k == 1 ? 0 : static_cast<std::size_t>(ckk) * hw);
    std::vector<T> dcol(static_cast<std::size_t>(ckk) * hw);
    for (int n = 0; n < xs.n; ++n) {
      const T* gy = g.plane(n, 0);
      if (wn->requires_grad) {
        const T* src = xn->value.plane(n, 0);
        const T* cm = src;
        if (k != 1) {
          detail::im2col(src, cin, xs.h, xs.w, k, col.data());
          cm = col.data();
        }
        blas::gemm<T>(false, true, cout, ckk, hw, T{1}, gy, hw, cm, hw, T{1},
                      wn->grad_buffer().data(), ckk);
      }
      if (bn && bn->requires_grad) {
        T* gb = bn->grad_buffer().data();
        for (int o = 0; o < cout; ++o) {
          T s{};
          for (int i = 0; i < hw; ++i) s += gy[o * hw + i];
          gb[o] += s;
        }
      }
      if (xn->requires_grad) {
        T* gx = xn->grad_buffer().plane(n, 0);
        if (k == 1) {
          blas::gemm<T>(true, false, ckk, hw, cout, T{1}, wn->value.data(), ckk, gy, hw, T{1}, gx,
                        hw);
        } else {
          blas::gemm<T>(true, false, ckk, hw, cout, T{1}, wn->value.data(), ckk, gy, hw, T{0},
                        dcol.data(), hw);
          detail::col2im_add(dcol.data(), cin, xs.h, xs.w, k, gx);
        }
      }
    }
  };
  if (has_bias) return Var<T>::make(std::move(out), {x, weight, bias}, backward);
  return Var<T>::make(std::move(out), {x, weight}, backward);
}

namespace detail {

// Elementwise map with derivative expressed through input and output.
template <class T, class F, class D>
Var<T> unary(const Var<T>& x, F f, D dfdx) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(xv[i]);
  return Var<T>::make(std::move(out), {x}, [dfdx](typename Var<T>::Node& self) {
    auto* xn = self.parents[0].get();
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.numel(); ++i)
      gx[i] += self.grad[i] * dfdx(xn->value[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return detail::unary(
      x, [slope](T v) { return v > T{0} ? v : slope * v; },
      [slope](T v, T) { return v > T{0} ? T{1} : slope; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return T{1} / (T{1} + std::exp(-v)); },
      [](T, T y) { return y * (T{1} - y); });
}

/// bound * tanh(x): squashes into [-bound, bound].
template <class T>
Var<T> bounded_tanh(const Var<T>& x, T bound) {
  return detail::unary(
      x, [bound](T v) { return bound * std::tanh(v); },
      [bound](T, T y) {
        const T t = y / bound;
        return bound * (T{1} - t * t);
      });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](typename Var<T>::Node& self) {
    for (int p = 0; p < 2; ++p) {
      auto* n = self.parents[p].get();
      if (!n->requires_grad) continue;
      auto& g = n->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](typename Var<T>::Node& self) {
    for (int p = 0; p < 2; ++p) {
      auto* n = self.parents[p].get();
      if (!n->requires_grad) continue;
      const T sign = p == 0 ? T{1} : T{-1};
      auto& g = n->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

/// x [N,C,H,W] * s [N,C,1,1], broadcast over the spatial plane.
template <class T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& s) {
  const Shape xs = x.shape();
  require(s.shape() == Shape{xs.n, xs.c, 1, 1}, "mul_channel: scale shape");
  const std::size_t hw = xs.plane();
  Tensor<T> out(xs);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T sc = s.value().at(n, c, 0, 0);
      const T* src = x.value().plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * sc;
    }
  return Var<T>::make(std::move(out), {x, s}, [xs, hw](typename Var<T>::Node& self) {
    auto* xn = self.parents[0].get();
    auto* sn = self.parents[1].get();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* g = self.grad.plane(n, c);
        if (xn->requires_grad) {
          const T sc = sn->value.at(n, c, 0, 0);
          T* gx = xn->grad_buffer().plane(n, c);
          for (std::size_t i = 0; i < hw; ++i) gx[i] += g[i] * sc;
        }
        if (sn->requires_grad) {
          const T* xv = xn->value.plane(n, c);
          T acc{};
          for (std::size_t i = 0; i < hw; ++i) acc += g[i] * xv[i];
          sn->grad_buffer().at(n, c, 0, 0) += acc;
        }
      }
  });
}

/// Mean over the spatial plane: [N,C,H,W] -> [N,C,1,1].
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape xs = x.shape();
  const std::size_t hw = xs.plane();
  Tensor<T> out(xs.n, xs.c, 1, 1);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* src = x.value().plane(n, c);
      T acc{};
      for (std::size_t i = 0; i < hw; ++i) acc += src[i];
      out.at(n, c, 0, 0) = acc / static_cast<T>(hw);
    }
  return Var<T>::make(std::move(out), {x}, [xs, hw](typename Var<T>::Node& self) {
    auto* xn = self.parents[0].get();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T g = self.grad.at(n, c, 0, 0) / static_cast<T>(hw);
        T* gx = xn->grad_buffer().plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) gx[i] += g;
      }
  });
}

/// 2x2 mean pooling; H and W must be even.
template <class T>
Var<T> avg_pool2(const Var<T>& x) {
  const Shape xs = x.shape();
  require(xs.h % 2 == 0 && xs.w % 2 == 0, "avg_pool2: odd spatial size " + xs.str());
  const int oh = xs.h / 2, ow = xs.w / 2;
  Tensor<T> out(xs.n, xs.c, oh, ow);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* s = x.value().plane(n, c);
      T* d = out.plane(n, c);
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const T* p = s + 2 * y * xs.w + 2 * xx;
          d[y * ow + xx] = T(0.25) * (p[0] + p[1] + p[xs.w] + p[xs.w + 1]);
        }
    }
  return Var<T>::make(std::move(out), {x}, [xs, oh, ow](typename Var<T>::Node& self) {
    auto* xn = self.parents[0].get();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* g = self.grad.plane(n, c);
        T* gx = xn->grad_buffer().plane(n, c);
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) {
            const T v = T(0.25) * g[y * ow + xx];
            T* p = gx + 2 * y * xs.w + 2 * xx;
            p[0] += v;
            p[1] += v;
            p[xs.w] += v;
            p[xs.w + 1] += v;
          }
      }
  });
}

template <class T>
Var<T> upsample_nearest2(const Var<T>& x) {
  const Shape xs = x.shape();
  const int oh = xs.h * 2, ow = xs.w * 2;
  Tensor<T> out(xs.n, xs.c, oh, ow);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* s = x.value().plane(n, c);
      T* d = out.plane(n, c);
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) d[y * ow + xx] = s[(y / 2) * xs.w + xx / 2];
    }
  return Var<T>::make(std::move(out), {x}, [xs, oh, ow](typename Var<T>::Node& self) {
    auto* xn = self.parents[0].get();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* g = self.grad.plane(n, c);
        T* gx = xn->grad_buffer().plane(n, c);
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) gx[(y / 2) * xs.w + xx / 2] += g[y * ow + xx];
      }
  });
}

/// Sub-pixel rearrangement [N,4C,H,W] -> [N,C,2H,2W]; output (c, 2y+i, 2x+j)
/// reads input channel 4c + 2i + j.
template <class T>
Var<T> pixel_shuffle2(const Var<T>& x) {
  const Shape xs = x.shape();
  require(xs.c % 4 == 0, "pixel_shuffle2: channels not divisible by 4");
  const int oc = xs.c / 4, oh = xs.h * 2, ow = xs.w * 2;
  Tensor<T> out(xs.n, oc, oh, ow);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < oc; ++c)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          const T* s = x.value().plane(n, 4 * c + 2 * i + j);
          T* d = out.plane(n, c);
          for (int y = 0; y < xs.h; ++y)
            for (int xx = 0; xx < xs.w; ++xx) d[(2 * y + i) * ow + 2 * xx + j] = s[y * xs.w + xx];
        }
  return Var<T>::make(std::move(out), {x}, [xs, oc, ow](typename Var<T>::Node& self) {
    auto* xn = self.parents[0].get();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < oc; ++c)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) {
            T* gx = xn->grad_buffer().plane(n, 4 * c + 2 * i + j);
            const T* g = self.grad.plane(n, c);
            for (int y = 0; y < xs.h; ++y)
              for (int xx = 0; xx < xs.w; ++xx) gx[y * xs.w + xx] += g[(2 * y + i) * ow + 2 * xx + j];
          }
  });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape as = a.shape(), bs = b.shape();
  require(as.n == bs.n && as.h == bs.h && as.w == bs.w, "concat_channels: shape mismatch");
  const std::size_t hw = as.plane();
  Tensor<T> out(as.n, as.c + bs.c, as.h, as.w);
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(a.value().plane(n, 0), as.c * hw, out.plane(n, 0));
    std::copy_n(b.value().plane(n, 0), bs.c * hw, out.plane(n, as.c));
  }
  return Var<T>::make(std::move(out), {a, b}, [as, bs, hw](typename Var<T>::Node& self) {
    auto* an = self.parents[0].get();
    auto* bn = self.parents[1].get();
    for (int n = 0; n < as.n; ++n) {
      if (an->requires_grad) {
        T* g = an->grad_buffer().plane(n, 0);
        const T* s = self.grad.plane(n, 0);
        for (std::size_t i = 0; i < as.c * hw; ++i) g[i] += s[i];
      }
      if (bn->requires_grad) {
        T* g = bn->grad_buffer().plane(n, 0);
        const T* s = self.grad.plane(n, as.c);
        for (std::size_t i = 0; i < bs.c * hw; ++i) g[i] += s[i];
      }
    }
  });
}

/// Channels [first, first + count).
template <class T>
Var<T> slice_channels(const Var<T>& x, int first, int count) {
  const Shape xs = x.shape();
  require(first >= 0 && count > 0 && first + count <= xs.c, "slice_channels: range");
  const std::size_t hw = xs.plane();
  Tensor<T> out(xs.n, count, xs.h, xs.w);
  for (int n = 0; n < xs.n; ++n) std::copy_n(x.value().plane(n, first), count * hw, out.plane(n, 0));
  return Var<T>::make(std::move(out), {x}, [xs, first, count, hw](typename Var<T>::Node& self) {
    auto* xn = self.parents[0].get();
    for (int n = 0; n < xs.n; ++n) {
      T* g = xn->grad_buffer().plane(n, first);
      const T* s = self.grad.plane(n, 0);
      for (std::size_t i = 0; i < count * hw; ++i) g[i] += s[i];
    }
  });
}

/// Mean |a - b| over all samples and channels, restricted to pixels at least
/// `border` away from every edge. Returns a [1,1,1,1] scalar.
template <class T>
Var<T> mean_abs_interior(const Var<T>& a, const Var<T>& b, int border) {
  detail::require_same(a, b, "mean_abs_interior");
  const Shape s = a.shape();
  require(s.h > 2 * border && s.w > 2 * border, "mean_abs_interior: border swallows the image");
  const int y0 = border, y1 = s.h - border, x0 = border, x1 = s.w - border;
  const T count = static_cast<T>(static_cast<std::size_t>(s.n) * s.c * (y1 - y0) * (x1 - x0));
  T acc{};
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* pa = a.value().plane(n, c);
      const T* pb = b.value().plane(n, c);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) acc += std::abs(pa[y * s.w + x] - pb[y * s.w + x]);
    }
  Tensor<T> out(1, 1, 1, 1, acc / count);
  return Var<T>::make(std::move(out), {a, b}, [=](typename Var<T>::Node& self) {
    auto* an = self.parents[0].get();
    auto* bn = self.parents[1].get();
    const T g = self.grad[0] / count;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* pa = an->value.plane(n, c);
        const T* pb = bn->value.plane(n, c);
        T* ga = an->requires_grad ? an->grad_buffer().plane(n, c) : nullptr;
        T* gb = bn->requires_grad ? bn->grad_buffer().plane(n, c) : nullptr;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) {
            const int i = y * s.w + x;
            const T d = pa[i] - pb[i];
            const T sg = d > T{0} ? g : (d < T{0} ? -g : T{0});
            if (ga) ga[i] += sg;
            if (gb) gb[i] -= sg;
          }
      }
  });
}

}  // namespace l1bsr::nn
