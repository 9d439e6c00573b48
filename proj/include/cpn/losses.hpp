#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cpn/tensor.hpp"

namespace cpn {

// Mean over classes of the per-class binary soft-margin terms, computed via
// softplus so large scores cannot overflow:
//   y * softplus(-s) + (1 - y) * softplus(s).
template <typename T>
Tensor<T> multilabel_soft_margin(const Tensor<T>& scores, const std::vector<uint8_t>& labels) {
  if (scores.ndim() != 1 || static_cast<int>(labels.size()) != scores.dim(0))
    throw std::invalid_argument("multilabel_soft_margin: " + std::to_string(labels.size()) +
                                " labels for scores " + shape_str(scores.shape()));
  std::vector<T> pos(labels.size()), neg(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    pos[i] = labels[i] ? T(1) : T(0);
    neg[i] = labels[i] ? T(0) : T(1);
  }
  Tensor<T> pos_term = mul(Tensor<T>::from_data(scores.shape(), std::move(pos)),
                           softplus(affine(scores, T(-1), T(0))));
  Tensor<T> neg_term = mul(Tensor<T>::from_data(scores.shape(), std::move(neg)),
                           softplus(scores));
  return mean_all(add(pos_term, neg_term));
}

// Average of the three branch classification losses.
template <typename T>
Tensor<T> cls_loss(const Tensor<T>& s_o, const Tensor<T>& s_h, const Tensor<T>& s_hbar,
                   const std::vector<uint8_t>& labels) {
  Tensor<T> sum = add(add(multilabel_soft_margin(s_o, labels),
                          multilabel_soft_margin(s_h, labels)),
                      multilabel_soft_margin(s_hbar, labels));
  return scalar_mul(sum, T(1) / T(3));
}

// L1 consistency between the pair mixture and the original, on both the raw
// and refined stacks. Written as the algebraically identical
//   mean | lambda (Y_h - Y_o) + lambda_bar (Y_hbar - Y_o) |
// so that equal branches cancel exactly in floating point. With detach_pairs
// the pair branches act as fixed targets and only Y_o (and its refined twin)
// receives gradient.
template <typename T>
Tensor<T> tcp_loss(const Tensor<T>& y_o, const Tensor<T>& y_h, const Tensor<T>& y_hbar,
                   const Tensor<T>& r_o, const Tensor<T>& r_h, const Tensor<T>& r_hbar,
                   T lambda, bool detach_pairs = true) {
  if (y_o.shape() != y_h.shape() || y_o.shape() != y_hbar.shape() ||
      y_o.shape() != r_o.shape() || y_o.shape() != r_h.shape() || y_o.shape() != r_hbar.shape())
    throw std::invalid_argument("tcp_loss: stacks disagree, e.g. " + shape_str(y_o.shape()) +
                                " vs " + shape_str(y_h.shape()));
  if (!(lambda >= T(0)) || !(lambda <= T(1)))
    throw std::invalid_argument("tcp_loss: lambda out of [0,1]");
  T lambda_bar = T(1) - lambda;
  auto term = [&](const Tensor<T>& o, const Tensor<T>& h, const Tensor<T>& hbar) {
    Tensor<T> hh = detach_pairs ? h.detach() : h;
    Tensor<T> hb = detach_pairs ? hbar.detach() : hbar;
    Tensor<T> mix = add(scalar_mul(sub(hh, o), lambda), scalar_mul(sub(hb, o), lambda_bar));
    return mean_all(abs(mix));
  };
  return add(term(y_o, y_h, y_hbar), term(r_o, r_h, r_hbar));
}

// Per-element cross-pair residuals: the gap the hidden branch leaves against
// the original must be matched by the refined complement, and vice versa.
//   | (Y_o - lambda Y_h) - lambda_bar R_hbar | + | (Y_o - lambda_bar Y_hbar) - lambda R_h |
// Each gap is regrouped as lambda (Y_o - Y_h) + lambda_bar Y_o (same algebra,
// exact cancellation for equal branches) and detached by default so gradient
// reaches only the refined pair stacks.
template <typename T>
Tensor<T> cpcr_elementwise(const Tensor<T>& y_o, const Tensor<T>& y_h, const Tensor<T>& y_hbar,
                           const Tensor<T>& r_h, const Tensor<T>& r_hbar, T lambda,
                           bool detach_gaps = true) {
  if (y_o.shape() != y_h.shape() || y_o.shape() != y_hbar.shape() ||
      y_o.shape() != r_h.shape() || y_o.shape() != r_hbar.shape())
    throw std::invalid_argument("cpcr_elementwise: stacks disagree, e.g. " +
                                shape_str(y_o.shape()) + " vs " + shape_str(y_h.shape()));
  if (!(lambda >= T(0)) || !(lambda <= T(1)))
    throw std::invalid_argument("cpcr_elementwise: lambda out of [0,1]");
  T lambda_bar = T(1) - lambda;
  Tensor<T> gap_h = add(scalar_mul(sub(y_o, y_h), lambda), scalar_mul(y_o, lambda_bar));
  Tensor<T> gap_hbar = add(scalar_mul(sub(y_o, y_hbar), lambda_bar), scalar_mul(y_o, lambda));
  if (detach_gaps) {
    gap_h = gap_h.detach();
    gap_hbar = gap_hbar.detach();
  }
  Tensor<T> first = abs(sub(gap_h, scalar_mul(r_hbar, lambda_bar)));
  Tensor<T> second = abs(sub(gap_hbar, scalar_mul(r_h, lambda)));
  return add(first, second);
}

// Online hard-example mining: mean of the largest ceil(frac * n) elements.
template <typename T>
Tensor<T> ohem_mean(const Tensor<T>& elementwise, double frac) {
  return topk_mean(elementwise, frac);
}

template <typename T>
struct CpcrResult {
  Tensor<T> value;
  Tensor<T> pixel_losses;
};

template <typename T>
CpcrResult<T> cpcr_loss(const Tensor<T>& y_o, const Tensor<T>& y_h, const Tensor<T>& y_hbar,
                        const Tensor<T>& r_h, const Tensor<T>& r_hbar, T lambda,
                        double ohem_frac = 0.2, bool detach_gaps = true) {
  CpcrResult<T> out;
  out.pixel_losses = cpcr_elementwise(y_o, y_h, y_hbar, r_h, r_hbar, lambda, detach_gaps);
  out.value = ohem_mean(out.pixel_losses, ohem_frac);
  return out;
}

template <typename T>
struct LossBundle {
  Tensor<T> cls, tcp, cpcr, total;
  Tensor<T> cpcr_pixels;
  double w1 = 1, w2 = 1, w3 = 1;
};

template <typename T>
LossBundle<T> total_loss(const Tensor<T>& cls, const Tensor<T>& tcp, const CpcrResult<T>& cpcr,
                         double w1 = 1, double w2 = 1, double w3 = 1) {
  LossBundle<T> b;
  b.cls = cls;
  b.tcp = tcp;
  b.cpcr = cpcr.value;
  b.cpcr_pixels = cpcr.pixel_losses;
  b.w1 = w1;
  b.w2 = w2;
  b.w3 = w3;
  b.total = add(add(scalar_mul(cls, static_cast<T>(w1)), scalar_mul(tcp, static_cast<T>(w2))),
                scalar_mul(cpcr.value, static_cast<T>(w3)));
  return b;
}

}  // namespace cpn
