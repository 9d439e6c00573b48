#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cpn/dataset.hpp"
#include "cpn/eval.hpp"
#include "cpn/image.hpp"
#include "cpn/network.hpp"
#include "cpn/refine.hpp"
#include "cpn/tensor.hpp"

namespace cpn {

// Everything one run needs, serialized losslessly as key=value text. Defaults
// are the reference training settings scaled to the synthetic shapes data.
struct TrainConfig {
  std::string mode = "cpn";  // "cpn" or "baseline"
  int epochs = 8;
  int batch = 4;
  double lr0 = 0.01;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::string patch_strategy = "grid";  // "grid" or "slic"
  int grid_k = 4;                       // grid cells per side
  int slic_segments = 16;
  double slic_compactness = 10.0;
  double p_h = 0.5;
  double ohem_frac = 0.2;
  double alpha = 1.0;
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 1.0;
  uint64_t seed = 1;
  int crop = 64;
  bool flip = true;
  bool use_pcm = true;
  bool use_prcm = true;
  std::string pcm_norm = "row";  // "row" or "global"
  bool detach_tcp_pairs = true;
  bool detach_cpcr_gaps = true;

  void validate() const;
  std::string serialize() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path);

  bool operator==(const TrainConfig&) const = default;
};

// lr0 * (1 - iter/max_iter)^power, clamped to 0 at the horizon.
double poly_lr(double lr0, double power, int64_t iter, int64_t max_iter);

// Plain SGD with momentum; weight decay is added to the raw gradient before
// the velocity update.
class Sgd {
 public:
  Sgd(std::vector<std::pair<std::string, Tensor<float>*>> params, double momentum,
      double weight_decay);
  void step(double lr);
  void zero_grad();

 private:
  struct Slot {
    std::string name;
    Tensor<float>* value;
    std::vector<float> velocity;
  };
  std::vector<Slot> slots_;
  double momentum_;
  double weight_decay_;
};

struct Model {
  Backbone net;
  RefineModule refine;
  TrainConfig config;
  DatasetMean mean;

  std::vector<std::pair<std::string, Tensor<float>*>> named_parameters();
};

Model build_model(const TrainConfig& config, int foreground_classes, const DatasetMean& mean);

// Weight bundle on disk: weights/<name>.cptf per parameter, weights.idx
// naming them, config.txt, and the dataset mean. Loads must reconstruct the
// exact bytes that were saved.
void save_model(const std::string& dir, Model& model);
Model load_model(const std::string& dir);

struct StepLog {
  int64_t step = 0;
  double l_cls = 0, l_tcp = 0, l_cpcr = 0, l_total = 0, lr = 0;
};

struct TrainResult {
  Model model;
  std::vector<StepLog> log;
};

TrainResult train(const TrainConfig& config, const std::vector<LabeledSample>& train_set,
                  const DatasetMean& mean);

void write_train_log(const std::string& path, const std::vector<StepLog>& log);

// Validation pass: per-image class maps (refined in cpn mode, raw CAMs in
// baseline mode), then a background-threshold sweep against the masks.
struct EvalOutcome {
  BetaSweepResult sweep;
  std::vector<std::string> warnings;
};

EvalOutcome evaluate_model(Model& model, const std::vector<LabeledSample>& val,
                           const std::vector<double>& scales, const std::vector<float>& betas);

// Inference bundle for one image: pixel-resolution class stack (background
// map at channel 0) plus the thresholded mask. Extents that the network
// stride does not divide are mirror-padded and cropped back.
struct InferOutputs {
  Tensor<float> full_stack;  // [C, H, W]
  Mask mask;
  std::vector<std::string> warnings;
};

InferOutputs infer_cam(Model& model, const Image& image, const std::vector<uint8_t>& labels,
                       const std::vector<double>& scales, float beta);

// Ablation sweeps: retrain per cell over a shared seed set and report
// fg mIoU mean and spread per cell.
struct SweepCell {
  std::string label;
  std::vector<double> fg_miou;
  double mean = 0;
  double sd = 0;
};

struct SweepReport {
  std::string kind;  // "p_h", "patch_size", or "module_toggle"
  std::vector<SweepCell> cells;
  bool flagged = false;
  std::string note;

  std::string to_tsv() const;
};

SweepReport run_sweep(const std::string& kind, const TrainConfig& base,
                      const std::vector<LabeledSample>& train_set,
                      const std::vector<LabeledSample>& val_set, const DatasetMean& mean,
                      const std::vector<uint64_t>& seeds);

}  // namespace cpn
