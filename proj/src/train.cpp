#include "cpn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cpn/cptf.hpp"
#include "cpn/losses.hpp"
#include "cpn/patching.hpp"
#include "cpn/rng.hpp"

namespace cpn {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key + " expects true/false, got '" + v + "'");
}

}  // namespace

void TrainConfig::validate() const {
  if (mode != "baseline" && mode != "cpn")
    throw std::invalid_argument("config: mode must be baseline or cpn, got '" + mode + "'");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
  if (!(lr0 > 0) || !std::isfinite(lr0)) throw std::invalid_argument("config: lr0 must be > 0");
  if (!(poly_power > 0)) throw std::invalid_argument("config: poly_power must be > 0");
  if (!(momentum >= 0) || momentum >= 1)
    throw std::invalid_argument("config: momentum must lie in [0,1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("config: weight_decay must be >= 0");
  if (patch_strategy != "grid" && patch_strategy != "slic")
    throw std::invalid_argument("config: patch_strategy must be grid or slic, got '" +
                                patch_strategy + "'");
  if (grid_k < 1 || grid_k > crop)
    throw std::invalid_argument("config: grid_k must lie in [1, crop]");
  if (slic_segments < 2) throw std::invalid_argument("config: slic_segments must be >= 2");
  if (!(slic_compactness > 0))
    throw std::invalid_argument("config: slic_compactness must be > 0");
  if (!(p_h > 0) || !(p_h < 1)) throw std::invalid_argument("config: p_h must lie in (0,1)");
  if (!(ohem_frac > 0) || ohem_frac > 1)
    throw std::invalid_argument("config: ohem_frac must lie in (0,1]");
  if (!(alpha > 0)) throw std::invalid_argument("config: alpha must be > 0");
  if (!(w1 >= 0) || !(w2 >= 0) || !(w3 >= 0))
    throw std::invalid_argument("config: loss weights must be >= 0");
  if (crop < 8 || crop % Backbone::kStride)
    throw std::invalid_argument("config: crop must be >= 8 and divisible by " +
                                std::to_string(Backbone::kStride));
  parse_pcm_norm(pcm_norm);
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os << "mode=" << mode << "\n";
  os << "epochs=" << epochs << "\n";
  os << "batch=" << batch << "\n";
  os << "lr0=" << fmt_double(lr0) << "\n";
  os << "poly_power=" << fmt_double(poly_power) << "\n";
  os << "momentum=" << fmt_double(momentum) << "\n";
  os << "weight_decay=" << fmt_double(weight_decay) << "\n";
  os << "patch_strategy=" << patch_strategy << "\n";
  os << "grid_k=" << grid_k << "\n";
  os << "slic_segments=" << slic_segments << "\n";
  os << "slic_compactness=" << fmt_double(slic_compactness) << "\n";
  os << "p_h=" << fmt_double(p_h) << "\n";
  os << "ohem_frac=" << fmt_double(ohem_frac) << "\n";
  os << "alpha=" << fmt_double(alpha) << "\n";
  os << "w1=" << fmt_double(w1) << "\n";
  os << "w2=" << fmt_double(w2) << "\n";
  os << "w3=" << fmt_double(w3) << "\n";
  os << "seed=" << seed << "\n";
  os << "crop=" << crop << "\n";
  os << "flip=" << (flip ? "true" : "false") << "\n";
  os << "use_pcm=" << (use_pcm ? "true" : "false") << "\n";
  os << "use_prcm=" << (use_prcm ? "true" : "false") << "\n";
  os << "pcm_norm=" << pcm_norm << "\n";
  os << "detach_tcp_pairs=" << (detach_tcp_pairs ? "true" : "false") << "\n";
  os << "detach_cpcr_gaps=" << (detach_cpcr_gaps ? "true" : "false") << "\n";
  return os.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key=value, got '" + t + "'");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    try {
      if (key == "mode") c.mode = val;
      else if (key == "epochs") c.epochs = std::stoi(val);
      else if (key == "batch") c.batch = std::stoi(val);
      else if (key == "lr0") c.lr0 = std::stod(val);
      else if (key == "poly_power") c.poly_power = std::stod(val);
      else if (key == "momentum") c.momentum = std::stod(val);
      else if (key == "weight_decay") c.weight_decay = std::stod(val);
      else if (key == "patch_strategy") c.patch_strategy = val;
      else if (key == "grid_k") c.grid_k = std::stoi(val);
      else if (key == "slic_segments") c.slic_segments = std::stoi(val);
      else if (key == "slic_compactness") c.slic_compactness = std::stod(val);
      else if (key == "p_h") c.p_h = std::stod(val);
      else if (key == "ohem_frac") c.ohem_frac = std::stod(val);
      else if (key == "alpha") c.alpha = std::stod(val);
      else if (key == "w1") c.w1 = std::stod(val);
      else if (key == "w2") c.w2 = std::stod(val);
      else if (key == "w3") c.w3 = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "crop") c.crop = std::stoi(val);
      else if (key == "flip") c.flip = parse_bool(val, key);
      else if (key == "use_pcm") c.use_pcm = parse_bool(val, key);
      else if (key == "use_prcm") c.use_prcm = parse_bool(val, key);
      else if (key == "pcm_norm") c.pcm_norm = val;
      else if (key == "detach_tcp_pairs") c.detach_tcp_pairs = parse_bool(val, key);
      else if (key == "detach_cpcr_gaps") c.detach_cpcr_gaps = parse_bool(val, key);
      else throw std::invalid_argument("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for " + key + ": '" + val + "'");
    }
  }
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

double poly_lr(double lr0, double power, int64_t iter, int64_t max_iter) {
  if (max_iter < 1) throw std::invalid_argument("poly_lr: max_iter must be >= 1");
  if (iter < 0) throw std::invalid_argument("poly_lr: negative iter");
  if (iter >= max_iter) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

Sgd::Sgd(std::vector<std::pair<std::string, Tensor<float>*>> params, double momentum,
         double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (auto& [name, value] : params) {
    Slot s;
    s.name = name;
    s.value = value;
    s.velocity.assign(static_cast<size_t>(value->numel()), 0.0f);
    slots_.push_back(std::move(s));
  }
}

void Sgd::zero_grad() {
  for (auto& s : slots_) s.value->zero_grad();
}

void Sgd::step(double lr) {
  for (auto& s : slots_) {
    const auto& g = s.value->grad();
    auto& w = s.value->data_mut();
    float m = static_cast<float>(momentum_);
    float wd = static_cast<float>(weight_decay_);
    float lrf = static_cast<float>(lr);
    for (size_t i = 0; i < w.size(); ++i) {
      float step_g = g[i] + wd * w[i];
      s.velocity[i] = m * s.velocity[i] + step_g;
      w[i] -= lrf * s.velocity[i];
    }
  }
}

std::vector<std::pair<std::string, Tensor<float>*>> Model::named_parameters() {
  auto params = net.named_parameters();
  auto extra = refine.named_parameters();
  params.insert(params.end(), extra.begin(), extra.end());
  return params;
}

Model build_model(const TrainConfig& config, int foreground_classes, const DatasetMean& mean) {
  config.validate();
  if (foreground_classes < 1)
    throw std::invalid_argument("build_model: need at least one foreground class");
  Model m;
  m.config = config;
  m.mean = mean;
  Rng rng(config.seed);
  Rng init_rng = rng.fork(1);
  m.net = Backbone::init(foreground_classes + 1, init_rng);
  RefineOptions opts;
  opts.use_pcm = config.use_pcm;
  opts.use_prcm = config.use_prcm;
  opts.norm = parse_pcm_norm(config.pcm_norm);
  m.refine = RefineModule::init(m.net.conv3_w.dim(0), m.net.conv4_w.dim(0), init_rng, opts);
  return m;
}

void save_model(const std::string& dir, Model& model) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "weights");
  {
    std::ofstream cf(fs::path(dir) / "config.txt");
    if (!cf) throw std::runtime_error("save_model: cannot write config under " + dir);
    cf << model.config.serialize();
  }
  {
    std::ofstream mf(fs::path(dir) / "meta.txt");
    if (!mf) throw std::runtime_error("save_model: cannot write meta under " + dir);
    mf << "classes=" << (model.net.class_count - 1) << "\n";
    mf << "mean_r=" << fmt_double(model.mean.rgb[0]) << "\n";
    mf << "mean_g=" << fmt_double(model.mean.rgb[1]) << "\n";
    mf << "mean_b=" << fmt_double(model.mean.rgb[2]) << "\n";
  }
  std::ofstream idx(fs::path(dir) / "weights.idx");
  if (!idx) throw std::runtime_error("save_model: cannot write index under " + dir);
  for (auto& [name, tensor] : model.named_parameters()) {
    std::string rel = "weights/" + name + ".cptf";
    save_cptf((fs::path(dir) / rel).string(), *tensor);
    idx << name << "\t" << rel << "\n";
  }
}

Model load_model(const std::string& dir) {
  namespace fs = std::filesystem;
  TrainConfig config = TrainConfig::load((fs::path(dir) / "config.txt").string());

  int classes = -1;
  DatasetMean mean;
  {
    std::ifstream mf(fs::path(dir) / "meta.txt");
    if (!mf) throw std::runtime_error("load_model: missing meta.txt under " + dir);
    std::string line;
    while (std::getline(mf, line)) {
      std::string t = trim(line);
      if (t.empty()) continue;
      size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("load_model: bad meta line '" + t + "'");
      std::string key = trim(t.substr(0, eq)), val = trim(t.substr(eq + 1));
      if (key == "classes") classes = std::stoi(val);
      else if (key == "mean_r") mean.rgb[0] = std::stof(val);
      else if (key == "mean_g") mean.rgb[1] = std::stof(val);
      else if (key == "mean_b") mean.rgb[2] = std::stof(val);
      else throw std::runtime_error("load_model: unknown meta key '" + key + "'");
    }
  }
  if (classes < 1) throw std::runtime_error("load_model: meta.txt lacks a class count");

  Model m = build_model(config, classes, mean);
  auto params = m.named_parameters();

  std::ifstream idx(fs::path(dir) / "weights.idx");
  if (!idx) throw std::runtime_error("load_model: missing weights.idx under " + dir);
  size_t loaded = 0;
  std::string line;
  while (std::getline(idx, line)) {
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t tab = t.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("load_model: bad index line '" + t + "'");
    std::string name = t.substr(0, tab), rel = trim(t.substr(tab + 1));
    auto it = std::find_if(params.begin(), params.end(),
                           [&name](const auto& p) { return p.first == name; });
    if (it == params.end())
      throw std::runtime_error("load_model: index names unknown parameter '" + name + "'");
    Tensor<float> loaded_t = load_cptf<float>((fs::path(dir) / rel).string());
    if (loaded_t.shape() != it->second->shape())
      throw std::runtime_error("load_model: " + name + " has shape " +
                               shape_str(loaded_t.shape()) + ", expected " +
                               shape_str(it->second->shape()));
    it->second->data_mut() = loaded_t.data();
    ++loaded;
  }
  if (loaded != params.size())
    throw std::runtime_error("load_model: index lists " + std::to_string(loaded) +
                             " parameters, model has " + std::to_string(params.size()));
  return m;
}

namespace {

Image augment(const Image& image, const TrainConfig& config, Rng& rng) {
  Image out = image;
  if (image.height < config.crop || image.width < config.crop)
    throw std::invalid_argument("train: image " + std::to_string(image.width) + "x" +
                                std::to_string(image.height) + " smaller than crop " +
                                std::to_string(config.crop));
  if (image.height > config.crop || image.width > config.crop) {
    int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(image.height - config.crop + 1)));
    int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(image.width - config.crop + 1)));
    out = crop_image(out, y0, x0, config.crop, config.crop);
  }
  if (config.flip && rng.bernoulli(0.5)) out = flip_horizontal(out);
  return out;
}

PatchPartition make_partition(const Image& image, const TrainConfig& config, Rng& rng) {
  if (config.patch_strategy == "grid") {
    int side = (config.crop + config.grid_k - 1) / config.grid_k;
    return grid_partition(image, {side}, rng);
  }
  return slic_partition(image, config.slic_segments, config.slic_compactness);
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<LabeledSample>& train_set,
                  const DatasetMean& mean) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  int fg = static_cast<int>(train_set.front().labels.size());
  for (const auto& s : train_set)
    if (static_cast<int>(s.labels.size()) != fg)
      throw std::invalid_argument("train: inconsistent label lengths in the training set");

  TrainResult result;
  result.model = build_model(config, fg, mean);
  Model& model = result.model;
  bool cpn = config.mode == "cpn";

  auto params = cpn ? model.named_parameters() : model.net.named_parameters();
  Sgd opt(params, config.momentum, config.weight_decay);

  Rng rng = Rng(config.seed).fork(2);
  int64_t n = static_cast<int64_t>(train_set.size());
  int64_t steps_per_epoch = (n + config.batch - 1) / config.batch;
  int64_t max_iter = static_cast<int64_t>(config.epochs) * steps_per_epoch;
  int64_t iter = 0;

  std::vector<int> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const RefineModule* refine = cpn ? &model.refine : nullptr;
  float alpha = static_cast<float>(config.alpha);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (int64_t start = 0; start < n; start += config.batch) {
      int64_t stop = std::min(n, start + config.batch);
      float inv_b = 1.0f / static_cast<float>(stop - start);
      double lr = poly_lr(config.lr0, config.poly_power, iter, max_iter);

      opt.zero_grad();
      Tensor<float> cls_sum, tcp_sum;
      std::vector<Tensor<float>> pixel_chunks;
      bool first = true;
      for (int64_t bi = start; bi < stop; ++bi) {
        const LabeledSample& sample = train_set[static_cast<size_t>(order[static_cast<size_t>(bi)])];
        Image img = augment(sample.image, config, rng);
        if (!cpn) {
          BranchOutputs out = run_branch(model.net, nullptr, img, sample.labels, alpha, mean);
          Tensor<float> cls_i = multilabel_soft_margin(out.scores, sample.labels);
          cls_sum = first ? cls_i : add(cls_sum, cls_i);
          first = false;
          continue;
        }
        PatchPartition part = make_partition(img, config, rng);
        CpPair pair = make_cp_pair(img, part, config.p_h, mean, rng);
        TripletOutputs trip =
            triplet_forward(model.net, refine, img, pair, sample.labels, alpha, mean);
        float lam = static_cast<float>(pair.lambda);

        Tensor<float> cls_i = cls_loss(trip.original.scores, trip.hidden.scores,
                                       trip.complement.scores, sample.labels);
        Tensor<float> tcp_i =
            tcp_loss(trip.original.stack, trip.hidden.stack, trip.complement.stack,
                     trip.original.refined, trip.hidden.refined, trip.complement.refined, lam,
                     config.detach_tcp_pairs);
        Tensor<float> pix_i =
            cpcr_elementwise(trip.original.stack, trip.hidden.stack, trip.complement.stack,
                             trip.hidden.refined, trip.complement.refined, lam,
                             config.detach_cpcr_gaps);
        if (first) {
          cls_sum = cls_i;
          tcp_sum = tcp_i;
          first = false;
        } else {
          cls_sum = add(cls_sum, cls_i);
          tcp_sum = add(tcp_sum, tcp_i);
        }
        pixel_chunks.push_back(reshape(pix_i, {static_cast<int>(pix_i.numel())}));
      }

      StepLog row;
      row.step = iter + 1;
      row.lr = lr;
      Tensor<float> l_cls = scalar_mul(cls_sum, inv_b);
      row.l_cls = static_cast<double>(l_cls.value());
      Tensor<float> total;
      if (cpn) {
        Tensor<float> l_tcp = scalar_mul(tcp_sum, inv_b);
        Tensor<float> l_cpcr = ohem_mean(concat(pixel_chunks, 0), config.ohem_frac);
        row.l_tcp = static_cast<double>(l_tcp.value());
        row.l_cpcr = static_cast<double>(l_cpcr.value());
        total = add(add(scalar_mul(l_cls, static_cast<float>(config.w1)),
                        scalar_mul(l_tcp, static_cast<float>(config.w2))),
                    scalar_mul(l_cpcr, static_cast<float>(config.w3)));
      } else {
        total = scalar_mul(l_cls, static_cast<float>(config.w1));
      }
      row.l_total = static_cast<double>(total.value());
      total.backward();
      opt.step(lr);
      result.log.push_back(row);
      ++iter;
    }
  }
  return result;
}

void write_train_log(const std::string& path, const std::vector<StepLog>& log) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_train_log: cannot open " + path);
  f << "step\tl_cls\tl_tcp\tl_cpcr\tl_total\tlr\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%lld\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n",
                  static_cast<long long>(r.step), r.l_cls, r.l_tcp, r.l_cpcr, r.l_total, r.lr);
    f << buf;
  }
}

EvalOutcome evaluate_model(Model& model, const std::vector<LabeledSample>& val,
                           const std::vector<double>& scales, const std::vector<float>& betas) {
  if (val.empty()) throw std::invalid_argument("evaluate_model: empty validation set");
  bool cpn = model.config.mode == "cpn";
  EvalOutcome out;
  std::vector<Tensor<float>> stacks;
  std::vector<Mask> gts;
  for (const auto& sample : val) {
    MultiscaleResult ms =
        multiscale_cam(model.net, cpn ? &model.refine : nullptr, sample.image, sample.labels,
                       scales, cpn, static_cast<float>(model.config.alpha), model.mean);
    for (auto& w : ms.warnings) out.warnings.push_back(std::move(w));
    stacks.push_back(std::move(ms.fg_stack));
    gts.push_back(sample.mask);
  }
  out.sweep = best_beta_sweep(stacks, gts, model.net.class_count, betas);
  return out;
}

InferOutputs infer_cam(Model& model, const Image& image, const std::vector<uint8_t>& labels,
                       const std::vector<double>& scales, float beta) {
  if (static_cast<int>(labels.size()) != model.net.class_count - 1)
    throw std::invalid_argument("infer_cam: " + std::to_string(labels.size()) +
                                " labels for a " + std::to_string(model.net.class_count - 1) +
                                "-class model");
  InferOutputs out;
  int stride = Backbone::kStride;
  int pad_b = (stride - image.height % stride) % stride;
  int pad_r = (stride - image.width % stride) % stride;
  Image padded = image;
  if (pad_b || pad_r) {
    padded = pad_reflect(image, pad_b, pad_r);
    out.warnings.push_back("extents " + std::to_string(image.width) + "x" +
                           std::to_string(image.height) + " padded to " +
                           std::to_string(padded.width) + "x" + std::to_string(padded.height));
  }
  bool cpn = model.config.mode == "cpn";
  MultiscaleResult ms = multiscale_cam(model.net, cpn ? &model.refine : nullptr, padded, labels,
                                       scales, cpn, static_cast<float>(model.config.alpha),
                                       model.mean);
  for (auto& w : ms.warnings) out.warnings.push_back(std::move(w));

  Tensor<float> full_res = upsample_stack(ms.fg_stack, padded.height, padded.width);
  int cf = model.net.class_count - 1;
  // Crop the padding back off and build the background channel.
  std::vector<float> stack_data(static_cast<size_t>(model.net.class_count) * image.height *
                                image.width);
  size_t plane = static_cast<size_t>(image.height) * image.width;
  const auto& v = full_res.data();
  for (int c = 0; c < cf; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        stack_data[(static_cast<size_t>(c) + 1) * plane + static_cast<size_t>(y) * image.width + x] =
            v[(static_cast<size_t>(c) * padded.height + y) * padded.width + x];
  for (size_t i = 0; i < plane; ++i) {
    float peak = 0;
    for (int c = 0; c < cf; ++c)
      peak = std::max(peak, stack_data[(static_cast<size_t>(c) + 1) * plane + i]);
    stack_data[i] = std::pow(1.0f - peak, static_cast<float>(model.config.alpha));
  }
  std::vector<float> fg_only(stack_data.begin() + static_cast<long>(plane), stack_data.end());
  Tensor<float> fg_cropped =
      Tensor<float>::from_data({cf, image.height, image.width}, std::move(fg_only));
  out.full_stack = Tensor<float>::from_data({model.net.class_count, image.height, image.width},
                                            std::move(stack_data));
  out.mask = cam_to_mask(fg_cropped, beta);
  return out;
}

namespace {

void fill_stats(SweepCell& cell) {
  double sum = 0;
  for (double v : cell.fg_miou) sum += v;
  size_t k = cell.fg_miou.size();
  cell.mean = k ? sum / static_cast<double>(k) : 0;
  if (k >= 2) {
    double ss = 0;
    for (double v : cell.fg_miou) ss += (v - cell.mean) * (v - cell.mean);
    cell.sd = std::sqrt(ss / static_cast<double>(k - 1));
  }
}

}  // namespace

std::string SweepReport::to_tsv() const {
  std::ostringstream os;
  os << "label\tseeds\tfg_miou_mean\tfg_miou_sd\tper_seed\n";
  for (const auto& c : cells) {
    os << c.label << "\t" << c.fg_miou.size() << "\t" << fmt_fixed(c.mean) << "\t"
       << fmt_fixed(c.sd) << "\t";
    for (size_t i = 0; i < c.fg_miou.size(); ++i) {
      if (i) os << ",";
      os << fmt_fixed(c.fg_miou[i]);
    }
    os << "\n";
  }
  if (!note.empty()) os << "# " << note << "\n";
  return os.str();
}

SweepReport run_sweep(const std::string& kind, const TrainConfig& base,
                      const std::vector<LabeledSample>& train_set,
                      const std::vector<LabeledSample>& val_set, const DatasetMean& mean,
                      const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("run_sweep: need at least one seed");
  base.validate();

  struct CellSpec {
    std::string label;
    TrainConfig config;
  };
  std::vector<CellSpec> specs;
  std::vector<size_t> extreme_cells;

  if (kind == "p_h") {
    for (double v : {0.1, 0.2, 0.3, 0.4, 0.5}) {
      CellSpec s{"p_h=" + fmt_fixed(v).substr(0, 3), base};
      s.config.p_h = v;
      s.config.mode = "cpn";
      specs.push_back(std::move(s));
    }
  } else if (kind == "patch_size") {
    // K=1 is the whole-image patch; the last K gives side-2 patches.
    std::vector<int> ks{1, 2, 4, 8, base.crop / 2};
    for (size_t i = 0; i < ks.size(); ++i) {
      CellSpec s{"grid_k=" + std::to_string(ks[i]), base};
      s.config.mode = "cpn";
      s.config.patch_strategy = "grid";
      s.config.grid_k = ks[i];
      specs.push_back(std::move(s));
    }
    extreme_cells = {0, specs.size() - 1};
  } else if (kind == "module_toggle") {
    auto push = [&](const std::string& label, auto mutate) {
      CellSpec s{label, base};
      mutate(s.config);
      specs.push_back(std::move(s));
    };
    push("baseline", [](TrainConfig& c) { c.mode = "baseline"; });
    push("+tcp+pcm", [](TrainConfig& c) {
      c.mode = "cpn";
      c.use_pcm = true;
      c.use_prcm = false;
      c.w3 = 0;
    });
    push("+cpcr", [](TrainConfig& c) {
      c.mode = "cpn";
      c.use_pcm = true;
      c.use_prcm = false;
      c.w3 = 1;
      c.ohem_frac = 1.0;
    });
    push("+ohem", [&base](TrainConfig& c) {
      c.mode = "cpn";
      c.use_pcm = true;
      c.use_prcm = false;
      c.w3 = 1;
      c.ohem_frac = base.ohem_frac;
    });
    push("+prcm", [&base](TrainConfig& c) {
      c.mode = "cpn";
      c.use_pcm = true;
      c.use_prcm = true;
      c.w3 = 1;
      c.ohem_frac = base.ohem_frac;
    });
  } else {
    throw std::invalid_argument("run_sweep: kind must be p_h, patch_size, or module_toggle");
  }

  SweepReport report;
  report.kind = kind;
  for (auto& spec : specs) {
    SweepCell cell;
    cell.label = spec.label;
    for (uint64_t seed : seeds) {
      TrainConfig cfg = spec.config;
      cfg.seed = seed;
      TrainResult res = train(cfg, train_set, mean);
      EvalOutcome ev = evaluate_model(res.model, val_set, {1.0}, default_beta_grid());
      cell.fg_miou.push_back(ev.sweep.report.fg_miou);
    }
    fill_stats(cell);
    report.cells.push_back(std::move(cell));
  }

  if (!extreme_cells.empty()) {
    double best_interior = -1;
    for (size_t i = 0; i < report.cells.size(); ++i)
      if (std::find(extreme_cells.begin(), extreme_cells.end(), i) == extreme_cells.end())
        best_interior = std::max(best_interior, report.cells[i].mean);
    std::string over;
    for (size_t i : extreme_cells)
      if (report.cells[i].mean > best_interior) over += (over.empty() ? "" : ", ") + report.cells[i].label;
    if (!over.empty()) {
      report.flagged = true;
      report.note = "FLAG: extreme cell(s) " + over + " exceed the best interior mean " +
                    fmt_fixed(best_interior) + "; inspect this run";
    } else {
      report.note = "extreme cells stay within the best interior mean " + fmt_fixed(best_interior);
    }
  }
  return report;
}

}  // namespace cpn
