#include "cpn/refine.hpp"

namespace cpn {

namespace {

Tensor<float> conv_init(int out_c, int in_c, Rng& rng) {
  std::vector<float> w(static_cast<size_t>(out_c) * in_c);
  float std = std::sqrt(2.0f / static_cast<float>(in_c));
  for (auto& v : w) v = static_cast<float>(rng.normal()) * std;
  return Tensor<float>::from_data({out_c, in_c, 1, 1}, std::move(w), true);
}

}  // namespace

RefineModule RefineModule::init(int stage3_channels, int stage4_channels, Rng& rng,
                                RefineOptions options) {
  RefineModule m;
  m.stage3_channels = stage3_channels;
  m.stage4_channels = stage4_channels;
  m.options = options;
  m.proj3_w = conv_init(m.proj3_out, stage3_channels, rng);
  m.proj3_b = Tensor<float>::zeros({m.proj3_out}, true);
  m.proj4_w = conv_init(m.proj4_out, stage4_channels, rng);
  m.proj4_b = Tensor<float>::zeros({m.proj4_out}, true);
  int c1 = m.aggregated_channels();
  m.g_pcm_w = conv_init(m.embed_out, c1, rng);
  m.g_pcm_b = Tensor<float>::zeros({m.embed_out}, true);
  m.g_prcm_w = conv_init(m.embed_out, c1, rng);
  m.g_prcm_b = Tensor<float>::zeros({m.embed_out}, true);
  m.phi_w = conv_init(m.embed_out, c1, rng);
  m.phi_b = Tensor<float>::zeros({m.embed_out}, true);
  return m;
}

Tensor<float> RefineModule::aggregate(const Tensor<float>& image, const Tensor<float>& stage3,
                                      const Tensor<float>& stage4) const {
  int h = stage4.dim(2), w = stage4.dim(3);
  Tensor<float> img_small = bilinear_resize(image, h, w);
  Tensor<float> p3 = conv1x1(stage3.detach(), proj3_w, proj3_b);
  Tensor<float> p4 = conv1x1(stage4.detach(), proj4_w, proj4_b);
  if (p3.dim(2) != h || p3.dim(3) != w) p3 = bilinear_resize(p3, h, w);
  return concat<float>({img_small, p3, p4}, 1);
}

Tensor<float> RefineModule::refine_stack(const Tensor<float>& stack,
                                         const Tensor<float>& aggregated) const {
  if (stack.ndim() != 3)
    throw std::invalid_argument("refine_stack: expected [C,h,w], got " + shape_str(stack.shape()));
  int classes = stack.dim(0), h = stack.dim(1), w = stack.dim(2);
  if (aggregated.dim(2) != h || aggregated.dim(3) != w)
    throw std::invalid_argument("refine_stack: stack " + shape_str(stack.shape()) +
                                " does not match features " + shape_str(aggregated.shape()));
  Tensor<float> y = reshape(stack, {classes, h * w});
  Tensor<float> x_flat = reshape(aggregated, {aggregated.dim(1), h * w});
  Tensor<float> out;
  if (options.use_pcm) {
    Tensor<float> aff = pcm_affinity(aggregated, g_pcm_w, g_pcm_b);
    out = pcm_refine(y, aff, options.norm);
  }
  if (options.use_prcm) {
    Tensor<float> pr = prcm_refine(y, x_flat, phi_w, phi_b, g_prcm_w, g_prcm_b);
    out = out.defined() ? combine(out, pr) : pr;
  }
  if (!out.defined()) out = y;
  return reshape(out, {classes, h, w});
}

std::vector<std::pair<std::string, Tensor<float>*>> RefineModule::named_parameters() {
  return {
      {"refine.proj3_w", &proj3_w}, {"refine.proj3_b", &proj3_b},
      {"refine.proj4_w", &proj4_w}, {"refine.proj4_b", &proj4_b},
      {"refine.g_pcm_w", &g_pcm_w}, {"refine.g_pcm_b", &g_pcm_b},
      {"refine.g_prcm_w", &g_prcm_w}, {"refine.g_prcm_b", &g_prcm_b},
      {"refine.phi_w", &phi_w}, {"refine.phi_b", &phi_b},
  };
}

}  // namespace cpn
