#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cpn/image.hpp"
#include "cpn/network.hpp"
#include "cpn/refine.hpp"
#include "cpn/tensor.hpp"

namespace cpn {

// Per-class intersection-over-union aggregated over a whole dataset: counts
// are pooled across images first, then divided once. Classes absent from both
// prediction and ground truth stay NaN and drop out of every mean.
struct IouReport {
  std::vector<double> per_class;
  double miou = 0;
  double fg_miou = 0;
  double bg_iou = 0;
  int defined_classes = 0;
  int defined_fg = 0;
};

class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int num_classes);
  void add(const Mask& pred, const Mask& gt);
  IouReport report() const;
  int num_classes() const { return classes_; }

 private:
  int classes_;
  std::vector<int64_t> inter_, pred_, gt_;
};

IouReport miou_single(const Mask& pred, const Mask& gt, int num_classes);

// Decode a normalized foreground stack [C-1, H, W] into a label mask by
// comparing each pixel's class responses against a flat background score
// beta. Ties go to the lower id, so background wins a tie at beta.
Mask cam_to_mask(const Tensor<float>& fg_stack, float beta);

// Bilinear upsampling for evaluation; gradient bookkeeping is dropped.
Tensor<float> upsample_stack(const Tensor<float>& stack, int height, int width);

struct BetaSweepResult {
  float beta = 0;
  IouReport report;
  std::vector<std::pair<float, double>> curve;  // (beta, fg_miou)
};

// Sweep the background threshold over `betas` and keep the best fg mIoU;
// ties resolve to the smaller beta. Stacks are upsampled to each ground
// truth's extents before decoding.
BetaSweepResult best_beta_sweep(const std::vector<Tensor<float>>& fg_stacks,
                                const std::vector<Mask>& gts, int num_classes,
                                const std::vector<float>& betas);

std::vector<float> default_beta_grid();

// Class activation maps fused over image scales: the image is resized per
// scale (extents snapped to the network's stride), responses are mapped back
// to the base resolution, averaged, then renormalized and re-masked by the
// image-level labels. Degenerate scales are skipped and reported.
struct MultiscaleResult {
  Tensor<float> fg_stack;  // [C-1, H/stride, W/stride]
  std::vector<std::string> warnings;
};

MultiscaleResult multiscale_cam(Backbone& net, RefineModule* refine, const Image& image,
                                const std::vector<uint8_t>& labels,
                                const std::vector<double>& scales, bool use_refined,
                                float alpha = 1.0f, const DatasetMean& mean = DatasetMean{});

}  // namespace cpn
