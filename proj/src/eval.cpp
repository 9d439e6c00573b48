#include "cpn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cpn {

ConfusionAccumulator::ConfusionAccumulator(int num_classes) : classes_(num_classes) {
  if (num_classes < 2)
    throw std::invalid_argument("ConfusionAccumulator: need at least background plus one class");
  inter_.assign(static_cast<size_t>(classes_), 0);
  pred_.assign(static_cast<size_t>(classes_), 0);
  gt_.assign(static_cast<size_t>(classes_), 0);
}

void ConfusionAccumulator::add(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("ConfusionAccumulator: prediction " + std::to_string(pred.width) +
                                "x" + std::to_string(pred.height) + " vs ground truth " +
                                std::to_string(gt.width) + "x" + std::to_string(gt.height));
  for (size_t i = 0; i < pred.ids.size(); ++i) {
    int p = pred.ids[i], g = gt.ids[i];
    if (p >= classes_ || g >= classes_)
      throw std::invalid_argument("ConfusionAccumulator: id " + std::to_string(std::max(p, g)) +
                                  " outside " + std::to_string(classes_) + " classes");
    ++pred_[static_cast<size_t>(p)];
    ++gt_[static_cast<size_t>(g)];
    if (p == g) ++inter_[static_cast<size_t>(p)];
  }
}

IouReport ConfusionAccumulator::report() const {
  IouReport r;
  r.per_class.assign(static_cast<size_t>(classes_), std::numeric_limits<double>::quiet_NaN());
  double sum_all = 0, sum_fg = 0;
  for (int c = 0; c < classes_; ++c) {
    size_t ci = static_cast<size_t>(c);
    int64_t uni = pred_[ci] + gt_[ci] - inter_[ci];
    if (uni == 0) continue;
    double iou = static_cast<double>(inter_[ci]) / static_cast<double>(uni);
    r.per_class[ci] = iou;
    sum_all += iou;
    ++r.defined_classes;
    if (c > 0) {
      sum_fg += iou;
      ++r.defined_fg;
    }
  }
  r.miou = r.defined_classes ? sum_all / r.defined_classes
                             : std::numeric_limits<double>::quiet_NaN();
  r.fg_miou = r.defined_fg ? sum_fg / r.defined_fg : std::numeric_limits<double>::quiet_NaN();
  r.bg_iou = r.per_class[0];
  return r;
}

IouReport miou_single(const Mask& pred, const Mask& gt, int num_classes) {
  ConfusionAccumulator acc(num_classes);
  acc.add(pred, gt);
  return acc.report();
}

Mask cam_to_mask(const Tensor<float>& fg_stack, float beta) {
  if (fg_stack.ndim() != 3)
    throw std::invalid_argument("cam_to_mask: expected [C-1,H,W], got " +
                                shape_str(fg_stack.shape()));
  if (!std::isfinite(beta)) throw std::invalid_argument("cam_to_mask: beta must be finite");
  int cf = fg_stack.dim(0), h = fg_stack.dim(1), w = fg_stack.dim(2);
  if (cf > 254) throw std::invalid_argument("cam_to_mask: too many classes for an 8-bit mask");
  Mask m;
  m.height = h;
  m.width = w;
  m.ids.assign(static_cast<size_t>(h) * w, 0);
  const auto& v = fg_stack.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float best = beta;
      uint8_t id = 0;
      for (int c = 0; c < cf; ++c) {
        float s = v[(static_cast<size_t>(c) * h + y) * w + x];
        if (s > best) {
          best = s;
          id = static_cast<uint8_t>(c + 1);
        }
      }
      m.at(y, x) = id;
    }
  return m;
}

Tensor<float> upsample_stack(const Tensor<float>& stack, int height, int width) {
  if (stack.ndim() != 3)
    throw std::invalid_argument("upsample_stack: expected [C,H,W], got " +
                                shape_str(stack.shape()));
  Tensor<float> flat =
      Tensor<float>::from_data({1, stack.dim(0), stack.dim(1), stack.dim(2)}, stack.data());
  Tensor<float> big = bilinear_resize(flat, height, width);
  return Tensor<float>::from_data({stack.dim(0), height, width}, big.data());
}

BetaSweepResult best_beta_sweep(const std::vector<Tensor<float>>& fg_stacks,
                                const std::vector<Mask>& gts, int num_classes,
                                const std::vector<float>& betas) {
  if (fg_stacks.size() != gts.size())
    throw std::invalid_argument("best_beta_sweep: " + std::to_string(fg_stacks.size()) +
                                " stacks for " + std::to_string(gts.size()) + " masks");
  if (fg_stacks.empty()) throw std::invalid_argument("best_beta_sweep: no images");
  if (betas.empty()) throw std::invalid_argument("best_beta_sweep: no thresholds");

  // Upsample once per image, not once per threshold.
  std::vector<Tensor<float>> full;
  full.reserve(fg_stacks.size());
  for (size_t i = 0; i < fg_stacks.size(); ++i)
    full.push_back(upsample_stack(fg_stacks[i], gts[i].height, gts[i].width));

  std::vector<float> ordered = betas;
  std::sort(ordered.begin(), ordered.end());

  BetaSweepResult best;
  bool have = false;
  double best_score = -std::numeric_limits<double>::infinity();
  for (float beta : ordered) {
    ConfusionAccumulator acc(num_classes);
    for (size_t i = 0; i < full.size(); ++i) acc.add(cam_to_mask(full[i], beta), gts[i]);
    IouReport rep = acc.report();
    best.curve.emplace_back(beta, rep.fg_miou);
    // Strict improvement required, so ties keep the earlier (smaller) beta.
    if (!have || rep.fg_miou > best_score) {
      best.beta = beta;
      best.report = rep;
      if (std::isfinite(rep.fg_miou)) best_score = rep.fg_miou;
      have = true;
    }
  }
  return best;
}

std::vector<float> default_beta_grid() {
  std::vector<float> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(static_cast<float>(i) * 0.05f);
  return grid;
}

namespace {

// Rows 1.. of a [C,h,w] stack as a fresh constant tensor.
Tensor<float> drop_background_row(const Tensor<float>& stack) {
  int c = stack.dim(0), h = stack.dim(1), w = stack.dim(2);
  size_t plane = static_cast<size_t>(h) * w;
  std::vector<float> fg(stack.data().begin() + static_cast<long>(plane),
                        stack.data().begin() + static_cast<long>(plane) * c);
  return Tensor<float>::from_data({c - 1, h, w}, std::move(fg));
}

int snap_extent(double value, int stride) {
  int snapped = stride * static_cast<int>(std::llround(value / stride));
  return std::max(stride, snapped);
}

}  // namespace

MultiscaleResult multiscale_cam(Backbone& net, RefineModule* refine, const Image& image,
                                const std::vector<uint8_t>& labels,
                                const std::vector<double>& scales, bool use_refined, float alpha,
                                const DatasetMean& mean) {
  if (scales.empty()) throw std::invalid_argument("multiscale_cam: no scales");
  if (image.height % Backbone::kStride || image.width % Backbone::kStride)
    throw std::invalid_argument("multiscale_cam: image extents must be multiples of " +
                                std::to_string(Backbone::kStride));
  int cf = net.class_count - 1;
  int base_h = image.height / Backbone::kStride;
  int base_w = image.width / Backbone::kStride;
  size_t n = static_cast<size_t>(cf) * base_h * base_w;

  MultiscaleResult out;
  std::vector<double> sum(n, 0.0);
  int used = 0;
  Tensor<float> base = image_to_tensor<float>(image, mean);
  for (double s : scales) {
    if (!(s > 0) || !std::isfinite(s)) {
      out.warnings.push_back("scale " + std::to_string(s) + " is not positive, skipped");
      continue;
    }
    int sh = snap_extent(image.height * s, Backbone::kStride);
    int sw = snap_extent(image.width * s, Backbone::kStride);
    if (sh < 2 * Backbone::kStride || sw < 2 * Backbone::kStride) {
      out.warnings.push_back("scale " + std::to_string(s) + " collapses to " + std::to_string(sw) +
                             "x" + std::to_string(sh) + ", skipped");
      continue;
    }
    Tensor<float> resized =
        (sh == image.height && sw == image.width) ? base : bilinear_resize(base, sh, sw);
    BackboneFeatures feats = net.forward_features(resized);
    Tensor<float> features = reshape(feats.stage4, {feats.stage4.dim(1), sh / Backbone::kStride,
                                                    sw / Backbone::kStride});
    Tensor<float> fg = normalize_and_mask(cam_from_features(features, net.theta), labels);
    if (use_refined && refine) {
      Tensor<float> stack = background_map(fg, alpha);
      Tensor<float> agg = refine->aggregate(resized, feats.stage3, feats.stage4);
      fg = normalize_per_channel(drop_background_row(refine->refine_stack(stack.detach(), agg)));
    }
    Tensor<float> at_base = upsample_stack(fg, base_h, base_w);
    const auto& v = at_base.data();
    for (size_t i = 0; i < n; ++i) sum[i] += v[i];
    ++used;
  }
  if (!used) throw std::invalid_argument("multiscale_cam: every scale was skipped");

  // Average, rescale each present class to peak 1, keep absent classes zero.
  std::vector<float> fused(n);
  for (size_t i = 0; i < n; ++i) fused[i] = static_cast<float>(sum[i] / used);
  size_t plane = static_cast<size_t>(base_h) * base_w;
  for (int c = 0; c < cf; ++c) {
    float* row = &fused[static_cast<size_t>(c) * plane];
    if (!labels[static_cast<size_t>(c)]) {
      std::fill(row, row + plane, 0.0f);
      continue;
    }
    float peak = 0;
    for (size_t i = 0; i < plane; ++i) peak = std::max(peak, row[i]);
    if (peak > 1e-8f)
      for (size_t i = 0; i < plane; ++i) row[i] /= peak;
  }
  out.fg_stack = Tensor<float>::from_data({cf, base_h, base_w}, std::move(fused));
  return out;
}

}  // namespace cpn
