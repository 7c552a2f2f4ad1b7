#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "l1bsr/core/config.hpp"
#include "l1bsr/core/image.hpp"
#include "l1bsr/core/rng.hpp"
#include "l1bsr/nn/ops.hpp"
#include "l1bsr/nn/params.hpp"

namespace l1bsr::networks {

using nn::Checkpoint;
using nn::ParamSet;

// ---------------------------------------------------------------------------
// Band normalization

inline constexpr double kNormEps = 1e-6;

/// Per-(sample, channel) standardization with population std and an epsilon
/// floor. Not differentiated: only ever applied to data.
template <class T>
Tensor<T> normalize_planes(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.shape().plane();
  for (int s = 0; s < x.n(); ++s)
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.plane(s, c);
      double mean = 0;
      for (std::size_t i = 0; i < n; ++i) mean += p[i];
      mean /= static_cast<double>(n);
      double var = 0;
      for (std::size_t i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
      const double sd = std::max(std::sqrt(var / static_cast<double>(n)), kNormEps);
      T* q = out.plane(s, c);
      for (std::size_t i = 0; i < n; ++i) q[i] = static_cast<T>((p[i] - mean) / sd);
    }
  return out;
}

inline BandImage normalize_band(const BandImage& x) {
  require(x.channels() == 1, "normalize_band: single band expected");
  return normalize_planes(Tensor<float>::from_image(x)).image(0);
}

// ---------------------------------------------------------------------------
// Cross-spectral registration network

struct CsrConfig {
  std::vector<int> widths{32, 64, 128, 256};  // one entry per scale
  double max_motion = 10.0;

  /// Narrow 4-scale variant for CPU desk runs.
  static CsrConfig desk() { return {{16, 32, 64, 128}, 10.0}; }

  int scales() const { return static_cast<int>(widths.size()); }
  int divisor() const { return 1 << (scales() - 1); }
  void validate() const {
    if (widths.empty() || widths.size() > 6) throw ConfigError("csr: 1 to 6 scales supported");
    for (int w : widths)
      if (w <= 0) throw ConfigError("csr: widths must be positive");
    if (!(max_motion > 0)) throw ConfigError("csr: max_motion must be positive");
  }
};

inline void to_json(nlohmann::json& j, const CsrConfig& c) {
  j = {{"widths", c.widths}, {"max_motion", c.max_motion}};
}
inline void from_json(const nlohmann::json& j, CsrConfig& c) {
  StrictObject o(j, "csr");
  o.get("widths", c.widths).get("max_motion", c.max_motion).finish();
  c.validate();
}

namespace detail {

template <class T>
void add_conv(ParamSet<T>& p, Rng& rng, const std::string& name, int in, int out, int k) {
  p.add(name + ".weight", nn::xavier_uniform<T>(rng, {out, in, k, k}));
  p.add(name + ".bias", Tensor<T>(1, out, 1, 1));
}

template <class T>
Var<T> conv(const ParamSet<T>& p, const std::string& name, const Var<T>& x) {
  return nn::conv2d(x, p[name + ".weight"], p[name + ".bias"]);
}

template <class T>
Var<T> conv_relu(const ParamSet<T>& p, const std::string& name, const Var<T>& x) {
  return nn::relu(conv(p, name, x));
}

}  // namespace detail

/// U-Net: per scale two 3x3 conv+ReLU, 2x2 average pooling down, nearest
/// upsampling with skip concatenation up, 3x3 output head bounded by
/// max_motion * tanh. Input channels: [normalized ref, normalized tgt].
/// Output: F_{tgt->ref} on tgt's grid, [N, 2, H, W] (dx, dy).
template <class T>
class Csr {
 public:
  Csr() = default;
  Csr(const CsrConfig& cfg, Rng& rng) : config_(cfg) {
    cfg.validate();
    const auto& w = cfg.widths;
    for (int s = 0; s < cfg.scales(); ++s) {
      detail::add_conv(params_, rng, "enc" + std::to_string(s) + ".conv1", s == 0 ? 2 : w[s - 1], w[s], 3);
      detail::add_conv(params_, rng, "enc" + std::to_string(s) + ".conv2", w[s], w[s], 3);
    }
    for (int s = cfg.scales() - 2; s >= 0; --s) {
      detail::add_conv(params_, rng, "dec" + std::to_string(s) + ".conv1", w[s + 1] + w[s], w[s], 3);
      detail::add_conv(params_, rng, "dec" + std::to_string(s) + ".conv2", w[s], w[s], 3);
    }
    detail::add_conv(params_, rng, "head", w[0], 2, 3);
  }

  Csr(const CsrConfig& cfg, ParamSet<T> params) : config_(cfg), params_(std::move(params)) {}

  template <class U>
  Csr<U> cast() const {
    return Csr<U>(config_, params_.template cast<U>());
  }

  const CsrConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// ref, tgt: raw bands [N, 1, H, W]; each plane is normalized here.
  Var<T> forward(const Tensor<T>& ref, const Tensor<T>& tgt) const {
    require(ref.shape() == tgt.shape() && ref.c() == 1, "csr: ref/tgt must be same-shape single bands");
    require(ref.h() % config_.divisor() == 0 && ref.w() % config_.divisor() == 0,
            "csr: spatial size must be divisible by " + std::to_string(config_.divisor()));
    const Tensor<T> a = normalize_planes(ref), b = normalize_planes(tgt);
    Tensor<T> x(ref.n(), 2, ref.h(), ref.w());
    for (int s = 0; s < ref.n(); ++s) {
      std::copy_n(a.plane(s, 0), a.shape().plane(), x.plane(s, 0));
      std::copy_n(b.plane(s, 0), b.shape().plane(), x.plane(s, 1));
    }
    return forward_normalized(constant(std::move(x)));
  }

  Var<T> forward_normalized(const Var<T>& input) const {
    const int S = config_.scales();
    std::vector<Var<T>> skips;
    Var<T> h = input;
    for (int s = 0; s < S; ++s) {
      const std::string e = "enc" + std::to_string(s);
      h = detail::conv_relu(params_, e + ".conv2", detail::conv_relu(params_, e + ".conv1", h));
      skips.push_back(h);
      if (s + 1 < S) h = nn::avg_pool2(h);
    }
    for (int s = S - 2; s >= 0; --s) {
      const std::string d = "dec" + std::to_string(s);
      h = nn::concat_channels(nn::upsample_nearest2(h), skips[s]);
      h = detail::conv_relu(params_, d + ".conv2", detail::conv_relu(params_, d + ".conv1", h));
    }
    return nn::bounded_tanh(detail::conv(params_, "head", h), static_cast<T>(config_.max_motion));
  }

 private:
  CsrConfig config_;
  ParamSet<T> params_;
};

/// F_{tgt->ref}: pullback(ref, F) brings ref's content onto tgt's grid.
inline FlowField<float> csr_forward(const Csr<float>& csr, const BandImage& ref, const BandImage& tgt) {
  require(ref.channels() == 1 && ref.same_shape(tgt), "csr_forward: shape mismatch");
  NoGradGuard ng;
  return FlowField<float>(
      csr.forward(Tensor<float>::from_image(ref), Tensor<float>::from_image(tgt)).value().image(0));
}

// ---------------------------------------------------------------------------
// Reconstruction network

struct RecConfig {
  std::string bands = "bgrn";  // input/output band subset, in this order
  int channels = 64;
  int groups = 10;
  int blocks = 20;
  int reduction = 16;

  /// 2 groups x 4 blocks, 32 channels, for CPU desk runs.
  static RecConfig desk(std::string bands = "bgrn") { return {std::move(bands), 32, 2, 4, 16}; }

  int num_bands() const { return static_cast<int>(bands.size()); }
  std::vector<int> band_indices() const {
    std::vector<int> out;
    for (char c : bands) out.push_back(band_index(c));
    return out;
  }
  int squeeze() const { return std::max(1, channels / reduction); }
  void validate() const {
    if (bands.empty() || bands.size() > 4) throw ConfigError("rec: bands must list 1-4 of b,g,r,n");
    for (std::size_t i = 0; i < bands.size(); ++i) {
      if (std::string("bgrn").find(bands[i]) == std::string::npos)
        throw ConfigError(std::string("rec: unknown band '") + bands[i] + "'");
      if (i > 0 && band_index(bands[i]) <= band_index(bands[i - 1]))
        throw ConfigError("rec: bands must be unique and in b,g,r,n order");
    }
    if (channels <= 0 || groups <= 0 || blocks <= 0 || reduction <= 0)
      throw ConfigError("rec: channels, groups, blocks and reduction must be positive");
  }
};

inline void to_json(nlohmann::json& j, const RecConfig& c) {
  j = {{"bands", c.bands}, {"channels", c.channels}, {"groups", c.groups},
       {"blocks", c.blocks}, {"reduction", c.reduction}};
}
inline void from_json(const nlohmann::json& j, RecConfig& c) {
  StrictObject o(j, "rec");
  o.get("bands", c.bands).get("channels", c.channels).get("groups", c.groups);
  o.get("blocks", c.blocks).get("reduction", c.reduction).finish();
  c.validate();
}

/// RCAN: head conv; groups of residual channel-attention blocks
/// (conv-ReLU-conv, squeeze-excitation gate, identity skip), each group
/// closed by a conv and a group skip; body conv plus long skip; sub-pixel x2
/// upsampler; output conv. Raw [0,1] inputs, no normalization.
template <class T>
class Rec {
 public:
  Rec() = default;
  Rec(const RecConfig& cfg, Rng& rng) : config_(cfg) {
    cfg.validate();
    const int c = cfg.channels, b = cfg.num_bands();
    detail::add_conv(params_, rng, "head", b, c, 3);
    for (int g = 0; g < cfg.groups; ++g) {
      const std::string gp = "group" + std::to_string(g);
      for (int k = 0; k < cfg.blocks; ++k) {
        const std::string bp = gp + ".block" + std::to_string(k);
        detail::add_conv(params_, rng, bp + ".conv1", c, c, 3);
        detail::add_conv(params_, rng, bp + ".conv2", c, c, 3);
        detail::add_conv(params_, rng, bp + ".ca_down", c, cfg.squeeze(), 1);
        detail::add_conv(params_, rng, bp + ".ca_up", cfg.squeeze(), c, 1);
      }
      detail::add_conv(params_, rng, gp + ".tail", c, c, 3);
    }
    detail::add_conv(params_, rng, "body_tail", c, c, 3);
    detail::add_conv(params_, rng, "upsample", c, 4 * c, 3);
    detail::add_conv(params_, rng, "out", c, b, 3);
  }

  Rec(const RecConfig& cfg, ParamSet<T> params) : config_(cfg), params_(std::move(params)) {}

  template <class U>
  Rec<U> cast() const {
    return Rec<U>(config_, params_.template cast<U>());
  }

  const RecConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// x: [N, num_bands, H, W] -> [N, num_bands, 2H, 2W].
  Var<T> forward(const Var<T>& x) const {
    require(x.shape().c == config_.num_bands(), "rec: expected " + std::to_string(config_.num_bands()) +
                                                    " input bands, got " + std::to_string(x.shape().c));
    const Var<T> head = detail::conv(params_, "head", x);
    Var<T> h = head;
    for (int g = 0; g < config_.groups; ++g) {
      const std::string gp = "group" + std::to_string(g);
      Var<T> r = h;
      for (int k = 0; k < config_.blocks; ++k) {
        const std::string bp = gp + ".block" + std::to_string(k);
        Var<T> y = detail::conv(params_, bp + ".conv2", detail::conv_relu(params_, bp + ".conv1", r));
        Var<T> a = nn::global_avg_pool(y);
        a = nn::sigmoid(detail::conv(params_, bp + ".ca_up", detail::conv_relu(params_, bp + ".ca_down", a)));
        r = nn::add(r, nn::mul_channel(y, a));
      }
      h = nn::add(h, detail::conv(params_, gp + ".tail", r));
    }
    h = nn::add(head, detail::conv(params_, "body_tail", h));
    h = nn::pixel_shuffle2(detail::conv(params_, "upsample", h));
    return detail::conv(params_, "out", h);
  }

 private:
  RecConfig config_;
  ParamSet<T> params_;
};

/// Picks the configured bands of a 4-band image (or accepts an image that
/// already has exactly those bands).
inline Image<float> select_bands(const MultiBandImage& im, const RecConfig& cfg) {
  if (im.channels() == cfg.num_bands() && cfg.num_bands() != kNumBands) return im;
  check_multiband(im);
  Image<float> out(cfg.num_bands(), im.height(), im.width());
  const auto idx = cfg.band_indices();
  for (std::size_t i = 0; i < idx.size(); ++i) out.set_channel(static_cast<int>(i), im.channel(idx[i]));
  return out;
}

inline Image<float> rec_forward(const Rec<float>& rec, const MultiBandImage& lr) {
  require(lr.height() >= 16 && lr.width() >= 16, "rec_forward: input must be at least 16x16");
  NoGradGuard ng;
  return rec.forward(constant(Tensor<float>::from_image(select_bands(lr, rec.config())))).value().image(0);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline Checkpoint to_checkpoint(const Csr<float>& csr) {
  Checkpoint ck;
  ck.header["kind"] = "csr";
  ck.header["architecture"] = csr.config();
  nn::put_params(ck, csr.params());
  return ck;
}

inline Checkpoint to_checkpoint(const Rec<float>& rec) {
  Checkpoint ck;
  ck.header["kind"] = "rec";
  ck.header["architecture"] = rec.config();
  nn::put_params(ck, rec.params());
  return ck;
}

inline void check_kind(const Checkpoint& ck, const std::string& kind) {
  if (!ck.header.contains("kind") || ck.header["kind"] != kind)
    throw DataError("checkpoint is not a " + kind + " model");
}

inline Csr<float> csr_from_checkpoint(const Checkpoint& ck) {
  check_kind(ck, "csr");
  Rng dummy(0);
  Csr<float> csr(ck.header.at("architecture").get<CsrConfig>(), dummy);
  nn::get_params(ck, csr.params());
  return csr;
}

inline Rec<float> rec_from_checkpoint(const Checkpoint& ck) {
  check_kind(ck, "rec");
  Rng dummy(0);
  Rec<float> rec(ck.header.at("architecture").get<RecConfig>(), dummy);
  nn::get_params(ck, rec.params());
  return rec;
}

inline Csr<float> load_csr(const std::filesystem::path& path) {
  return csr_from_checkpoint(nn::load_checkpoint(path));
}
inline Rec<float> load_rec(const std::filesystem::path& path) {
  return rec_from_checkpoint(nn::load_checkpoint(path));
}

}  // namespace l1bsr::networks
