#pragma once

#include <concepts>
#include <map>
#include <string>
#include <vector>

#include "l1bsr/core/image.hpp"
#include "l1bsr/geometry.hpp"
#include "l1bsr/networks.hpp"
#include "l1bsr/nn/ops.hpp"

// Training objectives. All are masked mean absolute errors: interior pixels
// only (4 px on LR grids, 8 px on HR grids), averaged over pixels, bands and
// batch.
namespace l1bsr::losses {

inline constexpr int kLrBorder = 4;
inline constexpr int kHrBorder = 8;

struct LossValue {
  double value = 0;
  std::map<std::string, double> terms;
};

/// Default deconvolution kernel: 7x7 Gaussian, sigma 0.7, normalized.
template <class T = float>
Image<T> default_blur_kernel() {
  return geometry::gaussian_kernel_2d<T>(0.7, 7);
}

template <class T = float>
Image<T> delta_kernel(int size = 7) {
  return geometry::gaussian_kernel_2d<T>(0.0, size);
}

// ---------------------------------------------------------------------------
// Tensor form (batched, differentiable)

/// hr_pred [N,C,2H,2W], target [N,C,H,W], flows [N,2C,H,W] with band c using
/// planes (2c, 2c+1) = F_{I1,c -> I0,g}.
template <class T>
Var<T> self_sr(const Var<T>& hr_pred, const Var<T>& target, const Var<T>& flows,
               int border = kLrBorder) {
  return nn::mean_abs_interior(geometry::warp_and_downsample(hr_pred, flows), target, border);
}

template <class T>
Var<T> self_sr_deconv(const Var<T>& hr_pred, const Var<T>& target, const Var<T>& flows,
                      const Image<T>& kernel, int border = kLrBorder) {
  return self_sr(geometry::convolve_clamped(hr_pred, kernel), target, flows, border);
}

/// Anchor-consistency with any flow estimator `flow(ref, tgt) -> F_{tgt->ref}`
/// taking raw band tensors [N,1,H,W]:
///   F_{I1i->Itj} = flow(Itj, I1i),  F_{Itj->I0i} = flow(I0i, Itj),
///   F = compose(F_{I1i->Itj}, F_{Itj->I0i}),  loss = |pullback(I0i, F) - I1i|.
template <class T, class FlowFn>
  requires std::invocable<FlowFn&, const Tensor<T>&, const Tensor<T>&>
Var<T> anchor_consistency(FlowFn&& flow, const Tensor<T>& i0i, const Tensor<T>& itj,
                          const Tensor<T>& i1i, int border = kLrBorder) {
  require(i0i.shape() == itj.shape() && i0i.shape() == i1i.shape() && i0i.c() == 1,
          "anchor_consistency: three same-shape single bands expected");
  const Var<T> f_1t = flow(itj, i1i);
  const Var<T> f_t0 = flow(i0i, itj);
  const Var<T> f = geometry::compose_flows(f_1t, f_t0);
  return nn::mean_abs_interior(geometry::pullback(constant(i0i), f), constant(i1i), border);
}

template <class T>
Var<T> anchor_consistency(const networks::Csr<T>& csr, const Tensor<T>& i0i, const Tensor<T>& itj,
                          const Tensor<T>& i1i, int border = kLrBorder) {
  return anchor_consistency<T>(
      [&](const Tensor<T>& ref, const Tensor<T>& tgt) { return csr.forward(ref, tgt); }, i0i, itj,
      i1i, border);
}

template <class T>
Var<T> supervised_flow(const Var<T>& pred, const Var<T>& gt, int border = kLrBorder) {
  return nn::mean_abs_interior(pred, gt, border);
}

template <class T>
Var<T> supervised_l1(const Var<T>& hr_pred, const Var<T>& gt_hr, int border = kHrBorder) {
  return nn::mean_abs_interior(hr_pred, gt_hr, border);
}

// ---------------------------------------------------------------------------
// Image form

namespace detail {

template <class T>
Var<T> as_var(const Image<T>& im) {
  return constant(Tensor<T>::from_image(im));
}

template <class T>
Var<T> stack_flows(const std::vector<FlowField<T>>& flows) {
  std::vector<Image<T>> planes;
  for (const auto& f : flows) {
    planes.push_back(f.channel(0));
    planes.push_back(f.channel(1));
  }
  return as_var(stack_channels(planes));
}

template <class T>
void check_self_sr(const Image<T>& hr_pred, const Image<T>& target,
                   const std::vector<FlowField<T>>& flows) {
  require(hr_pred.channels() == target.channels() && hr_pred.height() == 2 * target.height() &&
              hr_pred.width() == 2 * target.width(),
          "self_sr_loss: prediction must be 2x the target with equal band count");
  require(static_cast<int>(flows.size()) == target.channels(), "self_sr_loss: one flow per band required");
  for (const auto& f : flows) require(f.same_grid(target), "self_sr_loss: flow grid mismatch");
}

}  // namespace detail

template <class T>
LossValue self_sr_loss(const Image<T>& hr_pred, const Image<T>& target,
                       const std::vector<FlowField<T>>& flows) {
  detail::check_self_sr(hr_pred, target, flows);
  NoGradGuard ng;
  return {static_cast<double>(
      self_sr(detail::as_var(hr_pred), detail::as_var(target), detail::stack_flows(flows)).item())};
}

template <class T>
LossValue self_sr_deconv_loss(const Image<T>& hr_pred, const Image<T>& target,
                              const std::vector<FlowField<T>>& flows, const Image<T>& kernel) {
  detail::check_self_sr(hr_pred, target, flows);
  NoGradGuard ng;
  return {static_cast<double>(self_sr_deconv(detail::as_var(hr_pred), detail::as_var(target),
                                             detail::stack_flows(flows), kernel)
                                  .item())};
}

inline LossValue anchor_consistency_loss(const networks::Csr<float>& csr, const BandImage& i0i,
                                         const BandImage& itj, const BandImage& i1i) {
  NoGradGuard ng;
  return {static_cast<double>(anchor_consistency(csr, Tensor<float>::from_image(i0i),
                                                 Tensor<float>::from_image(itj),
                                                 Tensor<float>::from_image(i1i))
                                  .item())};
}

template <class T>
LossValue supervised_flow_loss(const FlowField<T>& pred, const FlowField<T>& gt) {
  require(pred.same_shape(gt), "supervised_flow_loss: shape mismatch");
  NoGradGuard ng;
  return {static_cast<double>(supervised_flow(detail::as_var<T>(pred), detail::as_var<T>(gt)).item())};
}

template <class T>
LossValue supervised_l1_loss(const Image<T>& hr_pred, const Image<T>& gt_hr) {
  require(hr_pred.same_shape(gt_hr), "supervised_l1_loss: shape mismatch");
  NoGradGuard ng;
  return {static_cast<double>(supervised_l1(detail::as_var(hr_pred), detail::as_var(gt_hr)).item())};
}

}  // namespace l1bsr::losses
