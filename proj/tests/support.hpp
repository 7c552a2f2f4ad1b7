#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "l1bsr/core/autograd.hpp"
#include "l1bsr/core/image.hpp"
#include "l1bsr/core/rng.hpp"
#include "l1bsr/core/tensor.hpp"

namespace l1bsr::testing {

template <class T = double>
Tensor<T> random_tensor(Rng& rng, Shape s, double lo = -1, double hi = 1) {
  Tensor<T> t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <class T = float>
Image<T> random_image(Rng& rng, int c, int h, int w, double lo = 0, double hi = 1) {
  Image<T> im(c, h, w);
  for (auto& v : im.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return im;
}

/// Smooth random field: sum of a few low-frequency sinusoids, scaled so that
/// each component stays within [-amp, amp].
template <class T = float>
FlowField<T> smooth_flow(Rng& rng, int h, int w, double amp, double max_cycles = 2.0) {
  FlowField<T> f(h, w);
  for (int c = 0; c < 2; ++c) {
    const double a0 = rng.uniform(-0.5, 0.5), a1 = rng.uniform(-0.25, 0.25),
                 a2 = rng.uniform(-0.25, 0.25);
    const double fx = rng.uniform(0.25, max_cycles) * 2 * M_PI / w,
                 fy = rng.uniform(0.25, max_cycles) * 2 * M_PI / h;
    const double px = rng.uniform(0, 2 * M_PI), py = rng.uniform(0, 2 * M_PI);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        f(c, y, x) = static_cast<T>(
            amp * (a0 + a1 * std::sin(fx * x + px) + a2 * std::cos(fy * y + py)));
  }
  return f;
}

template <class T>
double max_abs_interior(const Image<T>& a, const Image<T>& b, int border) {
  double m = 0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = border; y < a.height() - border; ++y)
      for (int x = border; x < a.width() - border; ++x)
        m = std::max(m, std::abs(static_cast<double>(a(c, y, x)) - b(c, y, x)));
  return m;
}

struct GradCheckResult {
  double max_rel_error = 0;
  int checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Relative error per entry is |a-n| / max(|a|+|n|, floor).
inline GradCheckResult grad_check(const std::function<Var<double>(std::vector<Var<double>>&)>& f,
                                  std::vector<Var<double>> inputs, Rng& rng,
                                  int samples_per_input = 24, double eps = 1e-6,
                                  double floor = 1e-7) {
  for (auto& v : inputs) v.zero_grad();
  Var<double> out = f(inputs);
  backward(out);
  std::vector<Tensor<double>> analytic;
  for (auto& v : inputs)
    analytic.push_back(v.grad().empty() ? Tensor<double>(v.shape()) : v.grad());

  GradCheckResult r;
  NoGradGuard ng;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    const std::size_t n = inputs[k].value().numel();
    const int count = static_cast<int>(std::min<std::size_t>(n, samples_per_input));
    for (int s = 0; s < count; ++s) {
      const std::size_t idx =
          n <= static_cast<std::size_t>(samples_per_input) ? s : rng.next() % n;
      double& slot = inputs[k].mutable_value()[idx];
      const double orig = slot;
      slot = orig + eps;
      const double fp = f(inputs).item();
      slot = orig - eps;
      const double fm = f(inputs).item();
      slot = orig;
      const double num = (fp - fm) / (2 * eps);
      const double an = analytic[k][idx];
      const double rel = std::abs(an - num) / std::max(std::abs(an) + std::abs(num), floor);
      r.max_rel_error = std::max(r.max_rel_error, rel);
      ++r.checked;
    }
  }
  return r;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("l1bsr_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace l1bsr::testing
