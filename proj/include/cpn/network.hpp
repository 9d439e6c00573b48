#pragma once

#include <utility>
#include <vector>

#include "cpn/image.hpp"
#include "cpn/patching.hpp"
#include "cpn/refine.hpp"
#include "cpn/rng.hpp"
#include "cpn/tensor.hpp"

namespace cpn {

template <typename T>
Tensor<T> image_to_tensor(const Image& image) {
  std::vector<T> v(image.values.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(image.values[i]);
  return Tensor<T>::from_data({1, 3, image.height, image.width}, std::move(v));
}

// Mean-centred network input. Hidden patches are filled with the dataset
// mean, so they map to exact zeros here.
template <typename T>
Tensor<T> image_to_tensor(const Image& image, const DatasetMean& mean) {
  std::vector<T> v(image.values.size());
  size_t plane = static_cast<size_t>(image.height) * image.width;
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<T>(image.values[i] - mean.rgb[i / plane]);
  return Tensor<T>::from_data({1, 3, image.height, image.width}, std::move(v));
}

// Per-class activation map from features: cam[c] = sum_k theta[c,k] * f[k].
template <typename T>
Tensor<T> cam_from_features(const Tensor<T>& features, const Tensor<T>& theta) {
  if (features.ndim() != 3)
    throw std::invalid_argument("cam_from_features: expected [C_f,h,w], got " +
                                shape_str(features.shape()));
  if (theta.ndim() != 2 || theta.dim(1) != features.dim(0))
    throw std::invalid_argument("cam_from_features: classifier " + shape_str(theta.shape()) +
                                " does not match features " + shape_str(features.shape()));
  int h = features.dim(1), w = features.dim(2);
  Tensor<T> flat = reshape(features, {features.dim(0), h * w});
  return reshape(matmul(theta, flat), {theta.dim(0), h, w});
}

// Clamp negatives, scale each present class to peak 1, zero absent classes.
// Channels whose spatial max is below 1e-8 stay zero.
template <typename T>
Tensor<T> normalize_and_mask(const Tensor<T>& raw_cam, const std::vector<uint8_t>& labels) {
  if (raw_cam.ndim() != 3)
    throw std::invalid_argument("normalize_and_mask: expected [C-1,h,w], got " +
                                shape_str(raw_cam.shape()));
  if (static_cast<int>(labels.size()) != raw_cam.dim(0))
    throw std::invalid_argument("normalize_and_mask: " + std::to_string(labels.size()) +
                                " labels for cam " + shape_str(raw_cam.shape()));
  Tensor<T> scaled = normalize_per_channel(relu(raw_cam));
  std::vector<T> mask(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) mask[i] = labels[i] ? T(1) : T(0);
  return scale_channels(scaled, mask);
}

// Background channel (1 - max_c fg)^alpha prepended at index 0.
template <typename T>
Tensor<T> background_map(const Tensor<T>& fg, T alpha) {
  if (fg.ndim() != 3)
    throw std::invalid_argument("background_map: expected [C-1,h,w], got " +
                                shape_str(fg.shape()));
  int h = fg.dim(1), w = fg.dim(2);
  Tensor<T> peak = max_reduce(fg, 0);
  Tensor<T> bg = affine(peak, T(-1), T(1));
  if (alpha != T(1)) bg = pow_scalar(bg, alpha);
  return concat<T>({reshape(bg, {1, h, w}), fg}, 0);
}

struct BackboneFeatures {
  Tensor<float> stage3;  // [1,C3,h,w]
  Tensor<float> stage4;  // [1,C4,h,w]
};

// Small CAM classifier: two downsampling stages then two full-resolution
// stages, output stride 4, widths 16/32/64/64, plus a per-class linear head.
struct Backbone {
  int class_count = 0;  // including background
  Tensor<float> conv1_w, conv1_b;
  Tensor<float> conv2_w, conv2_b;
  Tensor<float> conv3_w, conv3_b;
  Tensor<float> conv4_w, conv4_b;
  Tensor<float> theta;  // [class_count-1, 64]

  static constexpr int kStride = 4;

  static Backbone init(int class_count, Rng& rng);

  BackboneFeatures forward_features(const Tensor<float>& image) const;

  std::vector<std::pair<std::string, Tensor<float>*>> named_parameters();
  int64_t parameter_count() const;
};

// One branch of the pipeline: raw scores for the classification loss, the
// normalised background-augmented stack, and (with a refiner) its refined
// counterpart. refined aliases stack when no refiner is attached.
struct BranchOutputs {
  Tensor<float> scores;   // [C-1]
  Tensor<float> stack;    // [C,h,w]
  Tensor<float> refined;  // [C,h,w]
};

BranchOutputs run_branch(const Backbone& net, const RefineModule* refine, const Image& image,
                         const std::vector<uint8_t>& labels, float alpha,
                         const DatasetMean& mean);

struct TripletOutputs {
  BranchOutputs original;
  BranchOutputs hidden;
  BranchOutputs complement;
};

// Shared-weight forward over (I, I_h, I_hbar).
TripletOutputs triplet_forward(const Backbone& net, const RefineModule* refine,
                               const Image& original, const CpPair& pair,
                               const std::vector<uint8_t>& labels, float alpha,
                               const DatasetMean& mean);

}  // namespace cpn
