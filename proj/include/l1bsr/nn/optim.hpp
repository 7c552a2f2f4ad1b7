#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "l1bsr/nn/params.hpp"

namespace l1bsr::nn {

/// Adam with bias correction, matching the common reference update:
///   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
class Adam {
 public:
  explicit Adam(ParamSet<float> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [k, v] : params_.items()) {
      m_.emplace_back(v.shape());
      v_.emplace_back(v.shape());
    }
  }

  /// Applies one update from the gradients currently stored on the
  /// parameters; parameters that received no gradient see g = 0.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto& items = params_.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      Var<float> p = items[i].second;
      if (!p.requires_grad()) continue;
      const Tensor<float>& g = p.grad();
      Tensor<float>& val = p.mutable_value();
      float* m = m_[i].data();
      float* v = v_[i].data();
      for (std::size_t j = 0; j < val.numel(); ++j) {
        const double gj = g.empty() ? 0.0 : g[j];
        m[j] = static_cast<float>(beta1_ * m[j] + (1.0 - beta1_) * gj);
        v[j] = static_cast<float>(beta2_ * v[j] + (1.0 - beta2_) * gj * gj);
        const double mhat = m[j] / bc1, vhat = v[j] / bc2;
        val[j] = static_cast<float>(val[j] - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  long long steps() const { return t_; }

  void save(Checkpoint& ck) const {
    ck.header["adam_step"] = t_;
    const auto& items = params_.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      ck.tensors.emplace_back("adam.m." + items[i].first, m_[i]);
      ck.tensors.emplace_back("adam.v." + items[i].first, v_[i]);
    }
  }

  void load(const Checkpoint& ck) {
    t_ = ck.header.at("adam_step").get<long long>();
    const auto& items = params_.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      m_[i] = ck.tensor("adam.m." + items[i].first);
      v_[i] = ck.tensor("adam.v." + items[i].first);
    }
  }

 private:
  ParamSet<float> params_;
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Tensor<float>> m_, v_;
};

}  // namespace l1bsr::nn
