#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cpn/cptf.hpp"
#include "cpn/dataset.hpp"
#include "cpn/eval.hpp"
#include "cpn/gradcheck.hpp"
#include "cpn/image.hpp"
#include "cpn/network.hpp"
#include "cpn/patching.hpp"
#include "cpn/theory.hpp"
#include "cpn/train.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

std::vector<float> parse_floats(const std::string& csv) {
  std::vector<float> out;
  for (double v : parse_doubles(csv)) out.push_back(static_cast<float>(v));
  return out;
}

std::vector<uint64_t> parse_seeds(const std::string& csv) {
  std::vector<uint64_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoull(item));
  }
  return out;
}

std::vector<uint8_t> parse_bits(const std::string& csv) {
  std::vector<uint8_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    int v = std::stoi(item);
    if (v != 0 && v != 1) throw std::invalid_argument("label bits must be 0 or 1");
    out.push_back(static_cast<uint8_t>(v));
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

// Shared config-override flags for train/ablate. Only flags the user passed
// take effect over the config file.
struct ConfigFlags {
  CLI::App* cmd = nullptr;
  std::string mode, patch_strategy, pcm_norm;
  int epochs = 0, batch = 0, grid_k = 0, slic_segments = 0, crop = 0;
  double lr0 = 0, p_h = 0, ohem_frac = 0, alpha = 0, w1 = 0, w2 = 0, w3 = 0;
  uint64_t seed = 0;
  bool flip = false, no_flip = false;
  bool use_pcm = false, no_pcm = false, use_prcm = false, no_prcm = false;

  void attach(CLI::App* app) {
    cmd = app;
    app->add_option("--mode", mode, "baseline or cpn");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--batch", batch, "mini-batch size");
    app->add_option("--lr0", lr0, "initial learning rate");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--crop", crop, "square crop size");
    app->add_option("--patch-strategy", patch_strategy, "grid or slic");
    app->add_option("--grid-k", grid_k, "grid cells per side");
    app->add_option("--slic-segments", slic_segments, "superpixel count");
    app->add_option("--p-h", p_h, "patch hiding probability");
    app->add_option("--ohem-frac", ohem_frac, "hard-example fraction");
    app->add_option("--alpha", alpha, "background exponent");
    app->add_option("--w1", w1, "classification loss weight");
    app->add_option("--w2", w2, "consistency loss weight");
    app->add_option("--w3", w3, "cross-regularization loss weight");
    app->add_option("--pcm-norm", pcm_norm, "row or global affinity normalization");
    app->add_flag("--flip", flip, "enable horizontal flips");
    app->add_flag("--no-flip", no_flip, "disable horizontal flips");
    app->add_flag("--pcm", use_pcm, "enable the pixel-affinity refiner");
    app->add_flag("--no-pcm", no_pcm, "disable the pixel-affinity refiner");
    app->add_flag("--prcm", use_prcm, "enable the region-correlation refiner");
    app->add_flag("--no-prcm", no_prcm, "disable the region-correlation refiner");
  }

  void apply(cpn::TrainConfig& c) const {
    if (cmd->count("--mode")) c.mode = mode;
    if (cmd->count("--epochs")) c.epochs = epochs;
    if (cmd->count("--batch")) c.batch = batch;
    if (cmd->count("--lr0")) c.lr0 = lr0;
    if (cmd->count("--seed")) c.seed = seed;
    if (cmd->count("--crop")) c.crop = crop;
    if (cmd->count("--patch-strategy")) c.patch_strategy = patch_strategy;
    if (cmd->count("--grid-k")) c.grid_k = grid_k;
    if (cmd->count("--slic-segments")) c.slic_segments = slic_segments;
    if (cmd->count("--p-h")) c.p_h = p_h;
    if (cmd->count("--ohem-frac")) c.ohem_frac = ohem_frac;
    if (cmd->count("--alpha")) c.alpha = alpha;
    if (cmd->count("--w1")) c.w1 = w1;
    if (cmd->count("--w2")) c.w2 = w2;
    if (cmd->count("--w3")) c.w3 = w3;
    if (cmd->count("--pcm-norm")) c.pcm_norm = pcm_norm;
    if (flip) c.flip = true;
    if (no_flip) c.flip = false;
    if (use_pcm) c.use_pcm = true;
    if (no_pcm) c.use_pcm = false;
    if (use_prcm) c.use_prcm = true;
    if (no_prcm) c.use_prcm = false;
  }
};

int cmd_gen_data(const std::string& out, int n, int classes, int size, uint64_t seed) {
  cpn::DatasetManifest man = cpn::generate_and_write(out, n, classes, size, seed);
  std::printf("wrote %d images (%d classes, %dx%d) to %s\n", man.n, man.classes, man.size,
              man.size, out.c_str());
  std::printf("mean rgb: %.6f %.6f %.6f\n", man.mean.rgb[0], man.mean.rgb[1], man.mean.rgb[2]);
  return 0;
}

int cmd_train(const std::string& config_path, const ConfigFlags& flags, const std::string& data,
              const std::string& out) {
  cpn::TrainConfig config;
  if (!config_path.empty()) config = cpn::TrainConfig::load(config_path);
  flags.apply(config);
  config.validate();

  cpn::Dataset ds = cpn::load_dataset(data);
  std::printf("training mode=%s on %zu images, %d epochs, batch %d\n", config.mode.c_str(),
              ds.samples.size(), config.epochs, config.batch);
  cpn::TrainResult res = cpn::train(config, ds.samples, ds.manifest.mean);

  fs::create_directories(out);
  cpn::save_model(out, res.model);
  cpn::write_train_log((fs::path(out) / "train_log.tsv").string(), res.log);
  const cpn::StepLog& last = res.log.back();
  std::printf("final step %lld: l_cls=%.6f l_tcp=%.6f l_cpcr=%.6f l_total=%.6f\n",
              static_cast<long long>(last.step), last.l_cls, last.l_tcp, last.l_cpcr,
              last.l_total);
  std::printf("model written to %s\n", out.c_str());
  return 0;
}

int cmd_infer(const std::string& model_dir, const std::string& image_path,
              const std::string& labels_csv, const std::string& scales_csv, float beta,
              const std::string& out) {
  cpn::Model model = cpn::load_model(model_dir);
  cpn::Image image = cpn::load_image(image_path);
  std::vector<uint8_t> labels;
  if (labels_csv.empty())
    labels.assign(static_cast<size_t>(model.net.class_count - 1), 1);
  else
    labels = parse_bits(labels_csv);
  std::vector<double> scales = parse_doubles(scales_csv);

  cpn::InferOutputs res = cpn::infer_cam(model, image, labels, scales, beta);
  for (const auto& w : res.warnings) std::fprintf(stderr, "note: %s\n", w.c_str());

  fs::create_directories(out);
  int classes = model.net.class_count;
  size_t plane = static_cast<size_t>(image.height) * image.width;
  for (int c = 0; c < classes; ++c) {
    std::vector<float> map(res.full_stack.data().begin() + static_cast<long>(plane) * c,
                           res.full_stack.data().begin() + static_cast<long>(plane) * (c + 1));
    cpn::Image hm = cpn::render_heatmap(map, image.height, image.width);
    cpn::save_image((fs::path(out) / ("cam_class_" + std::to_string(c) + ".png")).string(), hm);
  }
  cpn::save_mask((fs::path(out) / "mask.png").string(), res.mask);
  cpn::save_cptf((fs::path(out) / "stack.cptf").string(), res.full_stack);
  std::printf("wrote %d heatmaps, mask.png and stack.cptf to %s\n", classes, out.c_str());
  return 0;
}

int cmd_eval(const std::string& model_dir, const std::string& data, const std::string& scales_csv,
             const std::string& betas_csv, const std::string& report_path) {
  cpn::Model model = cpn::load_model(model_dir);
  cpn::Dataset ds = cpn::load_dataset(data);
  std::vector<double> scales = parse_doubles(scales_csv);
  std::vector<float> betas =
      betas_csv.empty() ? cpn::default_beta_grid() : parse_floats(betas_csv);

  cpn::EvalOutcome ev = cpn::evaluate_model(model, ds.samples, scales, betas);
  for (const auto& w : ev.warnings) std::fprintf(stderr, "note: %s\n", w.c_str());

  const cpn::IouReport& rep = ev.sweep.report;
  std::printf("best beta: %.2f\n", ev.sweep.beta);
  std::printf("%-12s %s\n", "class", "iou");
  std::ostringstream tsv;
  tsv << "class\tiou\n";
  for (size_t c = 0; c < rep.per_class.size(); ++c) {
    std::string name = c == 0 ? "background" : ("class_" + std::to_string(c));
    if (std::isnan(rep.per_class[c])) {
      std::printf("%-12s undefined\n", name.c_str());
      tsv << name << "\tundefined\n";
    } else {
      std::printf("%-12s %.4f\n", name.c_str(), rep.per_class[c]);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", rep.per_class[c]);
      tsv << name << "\t" << buf << "\n";
    }
  }
  std::printf("%-12s %.4f\n", "foreground", rep.fg_miou);
  std::printf("%-12s %.4f\n", "background", rep.bg_iou);
  std::printf("%-12s %.4f\n", "miou", rep.miou);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "fg_miou\t%.6f\nbg_iou\t%.6f\nmiou\t%.6f\nbeta\t%.2f\n",
                rep.fg_miou, rep.bg_iou, rep.miou, ev.sweep.beta);
  tsv << buf;
  write_text(report_path, tsv.str());
  std::printf("report written to %s\n", report_path.c_str());
  return 0;
}

int cmd_patch_demo(const std::string& image_path, const std::string& strategy, int grid_side,
                   int segments, double compactness, double p_h, uint64_t seed,
                   const std::string& out) {
  cpn::Image image = cpn::load_image(image_path);
  cpn::Rng rng(seed);
  cpn::PatchPartition part;
  if (strategy == "grid")
    part = cpn::grid_partition(image, {grid_side}, rng);
  else if (strategy == "slic")
    part = cpn::slic_partition(image, segments, compactness);
  else
    throw std::invalid_argument("strategy must be grid or slic");

  // Fill value for hidden patches: this image's own mean.
  cpn::DatasetMean mean;
  {
    double acc[3] = {0, 0, 0};
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) acc[c] += image.at(c, y, x);
    for (int c = 0; c < 3; ++c)
      mean.rgb[c] = static_cast<float>(acc[c] / (static_cast<double>(image.height) * image.width));
  }
  cpn::CpPair pair = cpn::make_cp_pair(image, part, p_h, mean, rng);

  cpn::Image vis;
  vis.height = image.height;
  vis.width = image.width;
  vis.values.resize(image.values.size());
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      auto rgb = cpn::distinct_color(part.at(y, x));
      for (int c = 0; c < 3; ++c) vis.at(c, y, x) = rgb[static_cast<size_t>(c)];
    }

  fs::create_directories(out);
  cpn::save_image((fs::path(out) / "partition.png").string(), vis);
  cpn::save_image((fs::path(out) / "image_h.png").string(), pair.image_h);
  cpn::save_image((fs::path(out) / "image_hbar.png").string(), pair.image_hbar);
  std::printf("%d patches, %d hidden, lambda=%.4f; 3 PNGs in %s\n", pair.num_patches,
              pair.num_hidden, pair.lambda, out.c_str());
  return 0;
}

int cmd_check_inequality(int max_n, int draws, uint64_t seed) {
  cpn::EnumerationStats stats = cpn::exhaustive_check(max_n, draws, seed);
  std::printf("models checked: %lld\n", static_cast<long long>(stats.models));
  std::printf("violations: %lld\n", static_cast<long long>(stats.violations));
  std::printf("slack range: [%.6g, %.6g]\n", stats.min_slack, stats.max_slack);
  std::printf("max identity error: %.3g\n", stats.max_identity_error);
  std::printf("equality exactly on empty extra set: %s\n",
              stats.equality_matches_empty_extra ? "yes" : "no");
  bool ok = stats.violations == 0 && stats.max_identity_error < 1e-12 &&
            stats.equality_matches_empty_extra;
  std::printf("%s\n", ok ? "OK" : "CHECK FAILED");
  return ok ? 0 : 1;
}

int cmd_gradcheck(uint64_t seed, double tol, int points) {
  auto cases = cpn::run_gradient_checks(seed, tol, points);
  std::printf("%-28s %-12s %s\n", "case", "max_rel_err", "status");
  for (const auto& c : cases)
    std::printf("%-28s %-12.3g %s\n", c.name.c_str(), c.max_rel_err,
                c.passed ? "ok" : "FAIL");
  bool ok = cpn::all_passed(cases);
  std::printf("%zu cases, %s\n", cases.size(), ok ? "all passed" : "FAILURES PRESENT");
  return ok ? 0 : 1;
}

int cmd_ablate(const std::string& kind, const std::string& config_path, const ConfigFlags& flags,
               const std::string& data, const std::string& val_data, const std::string& seeds_csv,
               const std::string& out_path) {
  cpn::TrainConfig config;
  if (!config_path.empty()) config = cpn::TrainConfig::load(config_path);
  flags.apply(config);
  config.validate();

  cpn::Dataset train_ds = cpn::load_dataset(data);
  cpn::Dataset val_ds = cpn::load_dataset(val_data);
  std::vector<uint64_t> seeds = parse_seeds(seeds_csv);

  cpn::SweepReport report = cpn::run_sweep(kind, config, train_ds.samples, val_ds.samples,
                                           train_ds.manifest.mean, seeds);
  std::string tsv = report.to_tsv();
  std::fputs(tsv.c_str(), stdout);
  write_text(out_path, tsv);
  std::printf("sweep report written to %s\n", out_path.c_str());
  return report.flagged ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"complementary patch training and evaluation toolkit"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_out = "data";
  int gd_n = 250, gd_classes = 3, gd_size = 64;
  uint64_t gd_seed = 7;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic shapes dataset");
  gen->add_option("--out", gd_out, "output directory");
  gen->add_option("--n", gd_n, "image count");
  gen->add_option("--classes", gd_classes, "foreground class count (2-5)");
  gen->add_option("--size", gd_size, "square image size");
  gen->add_option("--seed", gd_seed, "generation seed");

  // train
  std::string tr_config, tr_data = "data", tr_out = "run";
  ConfigFlags tr_flags;
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr_flags.attach(tr);

  // infer-cam
  std::string ic_model, ic_image, ic_labels, ic_scales = "1.0", ic_out = "infer";
  float ic_beta = 0.3f;
  auto* ic = app.add_subcommand("infer-cam", "dump class maps for one image");
  ic->add_option("--model", ic_model, "model directory")->required();
  ic->add_option("--image", ic_image, "input PNG")->required();
  ic->add_option("--labels", ic_labels, "presence bits, e.g. 1,0,1 (default all present)");
  ic->add_option("--scales", ic_scales, "comma-separated scale factors");
  ic->add_option("--beta", ic_beta, "background score for the mask");
  ic->add_option("--out", ic_out, "output directory");

  // eval-miou
  std::string ev_model, ev_data, ev_scales = "1.0", ev_betas, ev_report = "report.tsv";
  auto* ev = app.add_subcommand("eval-miou", "evaluate pseudo-masks against ground truth");
  ev->add_option("--model", ev_model, "model directory")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--scales", ev_scales, "comma-separated scale factors");
  ev->add_option("--betas", ev_betas, "thresholds to sweep (default 0.05..0.95)");
  ev->add_option("--report", ev_report, "report TSV path");

  // patch-demo
  std::string pd_image, pd_strategy = "grid", pd_out = "patches";
  int pd_side = 16, pd_segments = 16;
  double pd_compact = 10.0, pd_ph = 0.5;
  uint64_t pd_seed = 1;
  auto* pd = app.add_subcommand("patch-demo", "visualize a partition and its hidden pair");
  pd->add_option("--image", pd_image, "input PNG")->required();
  pd->add_option("--strategy", pd_strategy, "grid or slic");
  pd->add_option("--grid-side", pd_side, "tile side in pixels");
  pd->add_option("--segments", pd_segments, "superpixel count");
  pd->add_option("--compactness", pd_compact, "superpixel compactness");
  pd->add_option("--p-h", pd_ph, "hiding probability");
  pd->add_option("--seed", pd_seed, "randomness seed");
  pd->add_option("--out", pd_out, "output directory");

  // check-inequality
  int ci_n = 10, ci_draws = 20;
  uint64_t ci_seed = 3;
  auto* ci = app.add_subcommand("check-inequality", "enumerate seed models and verify the bound");
  ci->add_option("--n", ci_n, "maximum patch count");
  ci->add_option("--draws", ci_draws, "random probability draws per size");
  ci->add_option("--seed", ci_seed, "draw seed");

  // gradcheck
  uint64_t gc_seed = 17;
  double gc_tol = 1e-4;
  int gc_points = 10;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of all gradients");
  gc->add_option("--seed", gc_seed, "sampling seed");
  gc->add_option("--tol", gc_tol, "relative error bound");
  gc->add_option("--points", gc_points, "random points per case");

  // ablate
  std::string ab_kind, ab_config, ab_data, ab_val, ab_seeds = "1,2,3", ab_out = "sweep.tsv";
  ConfigFlags ab_flags;
  auto* ab = app.add_subcommand("ablate", "train/evaluate a sweep of configurations");
  ab->add_option("--kind", ab_kind, "p_h, patch_size, or module_toggle")->required();
  ab->add_option("--config", ab_config, "base config file");
  ab->add_option("--data", ab_data, "training dataset directory")->required();
  ab->add_option("--val", ab_val, "validation dataset directory")->required();
  ab->add_option("--seeds", ab_seeds, "comma-separated seeds");
  ab->add_option("--out", ab_out, "report TSV path");
  ab_flags.attach(ab);

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(gd_out, gd_n, gd_classes, gd_size, gd_seed);
    if (tr->parsed()) return cmd_train(tr_config, tr_flags, tr_data, tr_out);
    if (ic->parsed()) return cmd_infer(ic_model, ic_image, ic_labels, ic_scales, ic_beta, ic_out);
    if (ev->parsed()) return cmd_eval(ev_model, ev_data, ev_scales, ev_betas, ev_report);
    if (pd->parsed())
      return cmd_patch_demo(pd_image, pd_strategy, pd_side, pd_segments, pd_compact, pd_ph,
                            pd_seed, pd_out);
    if (ci->parsed()) return cmd_check_inequality(ci_n, ci_draws, ci_seed);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_tol, gc_points);
    if (ab->parsed())
      return cmd_ablate(ab_kind, ab_config, ab_flags, ab_data, ab_val, ab_seeds, ab_out);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
