#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cpn/rng.hpp"
#include "cpn/tensor.hpp"

namespace cpn {

// Affinity normalisation for the patch-correlation refiner. Row mode makes
// the affinity column-stochastic so every refined pixel is a convex mix of
// input pixels; Global mode divides by the total affinity mass instead.
enum class PcmNorm { Row, Global };

inline PcmNorm parse_pcm_norm(const std::string& s) {
  if (s == "row") return PcmNorm::Row;
  if (s == "global") return PcmNorm::Global;
  throw std::invalid_argument("pcm norm must be 'row' or 'global', got '" + s + "'");
}

inline const char* pcm_norm_name(PcmNorm m) { return m == PcmNorm::Row ? "row" : "global"; }

// 1x1 convolution helper over [1,C,h,w].
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return conv2d(x, w, 1, 0, &b);
}

// Pixel-affinity matrix from an embedded feature map: embed with a 1x1 conv,
// L1-normalise each pixel's embedding column, then keep the positive part of
// the Gram matrix. Symmetric and non-negative by construction.
template <typename T>
Tensor<T> pcm_affinity(const Tensor<T>& x, const Tensor<T>& g_w, const Tensor<T>& g_b) {
  if (x.ndim() != 4 || x.dim(0) != 1)
    throw std::invalid_argument("pcm_affinity: expected [1,C,h,w], got " + shape_str(x.shape()));
  int h = x.dim(2), w = x.dim(3);
  Tensor<T> e = conv1x1(x, g_w, g_b);
  int c2 = e.dim(1);
  Tensor<T> flat = reshape(e, {c2, h * w});
  Tensor<T> unit = l1_normalize_columns(flat);
  return relu(matmul(transpose2d(unit), unit));
}

// Spreads CAM mass along affinity: out[:,i] = sum_j y[:,j] * A_hat[j,i].
template <typename T>
Tensor<T> pcm_refine(const Tensor<T>& y, const Tensor<T>& affinity, PcmNorm mode) {
  if (y.ndim() != 2 || affinity.ndim() != 2)
    throw std::invalid_argument("pcm_refine: expected matrices, got " + shape_str(y.shape()) +
                                " and " + shape_str(affinity.shape()));
  if (affinity.dim(0) != affinity.dim(1) || y.dim(1) != affinity.dim(0))
    throw std::invalid_argument("pcm_refine: cam " + shape_str(y.shape()) +
                                " does not match affinity " + shape_str(affinity.shape()));
  if (mode == PcmNorm::Row) {
    return matmul(y, normalize_columns_sum(affinity));
  }
  Tensor<T> total = add(sum_all(affinity), Tensor<T>::scalar(static_cast<T>(1e-12)));
  return mul(matmul(y, affinity), reciprocal(total));
}

// Class-pattern reweighting: pool a per-class descriptor from the map under a
// spatial softmax, embed descriptor and pixels, and gate the CAM by a class
// softmax over their correlation.
template <typename T>
Tensor<T> prcm_refine(const Tensor<T>& y, const Tensor<T>& x_flat, const Tensor<T>& phi_w,
                      const Tensor<T>& phi_b, const Tensor<T>& g_w, const Tensor<T>& g_b) {
  if (y.ndim() != 2 || x_flat.ndim() != 2)
    throw std::invalid_argument("prcm_refine: expected matrices, got " + shape_str(y.shape()) +
                                " and " + shape_str(x_flat.shape()));
  if (y.dim(1) != x_flat.dim(1))
    throw std::invalid_argument("prcm_refine: cam " + shape_str(y.shape()) +
                                " does not match features " + shape_str(x_flat.shape()));
  int classes = y.dim(0);
  int c1 = x_flat.dim(0);
  int hw = y.dim(1);
  Tensor<T> attn = softmax(y, 1);
  Tensor<T> z = matmul(attn, transpose2d(x_flat));  // [classes, c1]
  // Run the descriptor rows through the 1x1 embedding as a batch of 1x1 maps.
  Tensor<T> z_maps = reshape(z, {classes, c1, 1, 1});
  Tensor<T> phi_z = reshape(conv1x1(z_maps, phi_w, phi_b), {classes, phi_w.dim(0)});
  Tensor<T> x_maps = reshape(x_flat, {1, c1, 1, hw});
  Tensor<T> g_x = reshape(conv1x1(x_maps, g_w, g_b), {g_w.dim(0), hw});
  Tensor<T> corr = matmul(phi_z, g_x);  // [classes, hw]
  return mul(y, softmax(corr, 0));
}

// Elementwise sum of refinement branches.
template <typename T>
Tensor<T> combine(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("combine: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  return add(a, b);
}

struct RefineOptions {
  bool use_pcm = true;
  bool use_prcm = true;
  PcmNorm norm = PcmNorm::Row;
};

// Trainable refinement head. Projections and embeddings are 1x1 convs; the
// feature stack they consume is detached, so their gradients never touch the
// backbone.
struct RefineModule {
  int stage3_channels = 0;
  int stage4_channels = 0;
  int image_channels = 3;
  int proj3_out = 64;
  int proj4_out = 128;
  int embed_out = 64;
  RefineOptions options;

  Tensor<float> proj3_w, proj3_b;
  Tensor<float> proj4_w, proj4_b;
  Tensor<float> g_pcm_w, g_pcm_b;
  Tensor<float> g_prcm_w, g_prcm_b;
  Tensor<float> phi_w, phi_b;

  int aggregated_channels() const { return image_channels + proj3_out + proj4_out; }

  static RefineModule init(int stage3_channels, int stage4_channels, Rng& rng,
                           RefineOptions options = {});

  // Aggregated per-pixel descriptor [1, C1, h, w]: the image resized to CAM
  // resolution plus projected stage-3/4 features. Features arrive detached.
  Tensor<float> aggregate(const Tensor<float>& image, const Tensor<float>& stage3,
                          const Tensor<float>& stage4) const;

  // stack: [C,h,w], already detached by the caller. Returns the refined stack.
  Tensor<float> refine_stack(const Tensor<float>& stack, const Tensor<float>& aggregated) const;

  std::vector<std::pair<std::string, Tensor<float>*>> named_parameters();
};

}  // namespace cpn
