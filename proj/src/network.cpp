#include "cpn/network.hpp"

namespace cpn {

namespace {

Tensor<float> he_conv(int out_c, int in_c, int k, Rng& rng) {
  std::vector<float> w(static_cast<size_t>(out_c) * in_c * k * k);
  float std = std::sqrt(2.0f / static_cast<float>(in_c * k * k));
  for (auto& v : w) v = static_cast<float>(rng.normal()) * std;
  return Tensor<float>::from_data({out_c, in_c, k, k}, std::move(w), true);
}

}  // namespace

Backbone Backbone::init(int class_count, Rng& rng) {
  if (class_count < 2)
    throw std::invalid_argument("Backbone::init: need at least one foreground class");
  Backbone net;
  net.class_count = class_count;
  net.conv1_w = he_conv(16, 3, 4, rng);
  net.conv1_b = Tensor<float>::zeros({16}, true);
  net.conv2_w = he_conv(32, 16, 4, rng);
  net.conv2_b = Tensor<float>::zeros({32}, true);
  net.conv3_w = he_conv(64, 32, 3, rng);
  net.conv3_b = Tensor<float>::zeros({64}, true);
  net.conv4_w = he_conv(64, 64, 3, rng);
  net.conv4_b = Tensor<float>::zeros({64}, true);
  std::vector<float> th(static_cast<size_t>(class_count - 1) * 64);
  float std = std::sqrt(1.0f / 64.0f);
  for (auto& v : th) v = static_cast<float>(rng.normal()) * std;
  net.theta = Tensor<float>::from_data({class_count - 1, 64}, std::move(th), true);
  return net;
}

BackboneFeatures Backbone::forward_features(const Tensor<float>& image) const {
  if (image.ndim() != 4 || image.dim(0) != 1 || image.dim(1) != 3)
    throw std::invalid_argument("forward_features: expected [1,3,H,W], got " +
                                shape_str(image.shape()));
  int h = image.dim(2), w = image.dim(3);
  if (h % kStride != 0 || w % kStride != 0)
    throw std::invalid_argument("forward_features: extents of " + shape_str(image.shape()) +
                                " not divisible by stride " + std::to_string(kStride));
  Tensor<float> s1 = relu(conv2d(image, conv1_w, 2, 1, &conv1_b));
  Tensor<float> s2 = relu(conv2d(s1, conv2_w, 2, 1, &conv2_b));
  Tensor<float> s3 = relu(conv2d(s2, conv3_w, 1, 1, &conv3_b));
  Tensor<float> s4 = relu(conv2d(s3, conv4_w, 1, 1, &conv4_b));
  return {s3, s4};
}

std::vector<std::pair<std::string, Tensor<float>*>> Backbone::named_parameters() {
  return {
      {"backbone.conv1_w", &conv1_w}, {"backbone.conv1_b", &conv1_b},
      {"backbone.conv2_w", &conv2_w}, {"backbone.conv2_b", &conv2_b},
      {"backbone.conv3_w", &conv3_w}, {"backbone.conv3_b", &conv3_b},
      {"backbone.conv4_w", &conv4_w}, {"backbone.conv4_b", &conv4_b},
      {"backbone.theta", &theta},
  };
}

int64_t Backbone::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : const_cast<Backbone*>(this)->named_parameters()) n += t->numel();
  return n;
}

BranchOutputs run_branch(const Backbone& net, const RefineModule* refine, const Image& image,
                         const std::vector<uint8_t>& labels, float alpha,
                         const DatasetMean& mean) {
  if (static_cast<int>(labels.size()) != net.class_count - 1)
    throw std::invalid_argument("run_branch: " + std::to_string(labels.size()) +
                                " labels for a " + std::to_string(net.class_count) +
                                "-class network");
  Tensor<float> img = image_to_tensor<float>(image, mean);
  BackboneFeatures feats = net.forward_features(img);
  int cf = feats.stage4.dim(1), h = feats.stage4.dim(2), w = feats.stage4.dim(3);
  Tensor<float> f = reshape(feats.stage4, {cf, h, w});
  Tensor<float> raw = cam_from_features(f, net.theta);

  BranchOutputs out;
  // Scores pool the raw map, before normalisation or label masking.
  out.scores = reshape(global_avg_pool(reshape(raw, {1, net.class_count - 1, h, w})),
                       {net.class_count - 1});
  Tensor<float> fg = normalize_and_mask(raw, labels);
  out.stack = background_map(fg, alpha);
  if (refine) {
    Tensor<float> aggregated = refine->aggregate(img, feats.stage3, feats.stage4);
    out.refined = refine->refine_stack(out.stack.detach(), aggregated);
  } else {
    out.refined = out.stack;
  }
  return out;
}

TripletOutputs triplet_forward(const Backbone& net, const RefineModule* refine,
                               const Image& original, const CpPair& pair,
                               const std::vector<uint8_t>& labels, float alpha,
                               const DatasetMean& mean) {
  TripletOutputs out;
  out.original = run_branch(net, refine, original, labels, alpha, mean);
  out.hidden = run_branch(net, refine, pair.image_h, labels, alpha, mean);
  out.complement = run_branch(net, refine, pair.image_hbar, labels, alpha, mean);
  return out;
}

}  // namespace cpn
