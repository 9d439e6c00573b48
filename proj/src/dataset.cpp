#include "cpn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cpn {

namespace {

constexpr float kPi = 3.14159265358979323846f;

// Saturated marker colors, one per class: the strongest class evidence by a
// wide margin, so activation maps concentrate there first.
const float kMarker[5][3] = {{0.98f, 0.86f, 0.05f},
                             {0.96f, 0.10f, 0.85f},
                             {0.08f, 0.92f, 0.95f},
                             {0.98f, 0.45f, 0.04f},
                             {0.55f, 0.10f, 0.98f}};

// Gentle class-correlated tint mixed into the muted body palette. Weak per
// pixel, but spread over the whole shape it keeps the class learnable even
// when the marker is hidden.
const float kTint[5][3] = {{1.0f, -0.5f, -0.5f},
                           {-0.5f, 1.0f, -0.5f},
                           {-0.5f, -0.5f, 1.0f},
                           {0.8f, 0.8f, -0.8f},
                           {0.8f, -0.8f, 0.8f}};

struct ShapeSpec {
  int cls = 0;     // 1-based class id
  int geom = 0;    // 0 circle, 1 rectangle, 2 triangle
  float cx = 0, cy = 0, r = 0;
  float rx = 0, ry = 0;  // rectangle half-extents
};

bool inside_shape(const ShapeSpec& s, float x, float y) {
  float dx = x - s.cx, dy = y - s.cy;
  switch (s.geom) {
    case 0:
      return dx * dx + dy * dy <= s.r * s.r;
    case 1:
      return std::abs(dx) <= s.rx && std::abs(dy) <= s.ry;
    default: {
      // Upright triangle with apex (cx, cy-r) and base at cy + r/2.
      float x1 = s.cx, y1 = s.cy - s.r;
      float x2 = s.cx - 0.866f * s.r, y2 = s.cy + 0.5f * s.r;
      float x3 = s.cx + 0.866f * s.r, y3 = s.cy + 0.5f * s.r;
      auto edge = [](float ax, float ay, float bx, float by, float px, float py) {
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
      };
      float d1 = edge(x1, y1, x2, y2, x, y);
      float d2 = edge(x2, y2, x3, y3, x, y);
      float d3 = edge(x3, y3, x1, y1, x, y);
      bool neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
      bool pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
      return !(neg && pos);
    }
  }
}

float shape_area(const ShapeSpec& s) {
  switch (s.geom) {
    case 0: return kPi * s.r * s.r;
    case 1: return 4.0f * s.rx * s.ry;
    default: return 3.0f * 0.866f * s.r * s.r / 2.0f * 2.0f;  // 3*sqrt(3)/4 * r^2
  }
}

}  // namespace

std::vector<LabeledSample> generate_shapes_dataset(int n, int classes, int size, uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("generate_shapes_dataset: n must be positive");
  if (classes < 2 || classes > 5)
    throw std::invalid_argument("generate_shapes_dataset: classes must lie in [2,5]");
  if (size < 32) throw std::invalid_argument("generate_shapes_dataset: size must be >= 32");

  Rng rng(seed);
  std::vector<LabeledSample> out;
  out.reserve(static_cast<size_t>(n));

  for (int idx = 0; idx < n; ++idx) {
    Image im = Image::filled(size, size, 0, 0, 0);
    Mask mask;
    mask.height = size;
    mask.width = size;
    mask.ids.assign(static_cast<size_t>(size) * size, 0);

    // Textured background: muted base color, a soft diagonal wave, pixel noise.
    float base[3];
    for (auto& b : base) b = static_cast<float>(rng.uniform(0.32, 0.52));
    float fx = static_cast<float>(rng.uniform(0.5, 2.0));
    float fy = static_cast<float>(rng.uniform(0.5, 2.0));
    float phase = static_cast<float>(rng.uniform(0.0, 2.0 * kPi));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        float wave = 0.05f * std::sin(2.0f * kPi * (fx * x + fy * y) / size + phase);
        for (int c = 0; c < 3; ++c) {
          float v = base[c] + wave + static_cast<float>(rng.uniform(-0.03, 0.03));
          im.at(c, y, x) = std::clamp(v, 0.0f, 1.0f);
        }
      }

    // Pick distinct classes for this image.
    int want = 1 + rng.uniform_int(3);
    if (want > classes) want = classes;
    std::vector<int> order(static_cast<size_t>(classes));
    for (int c = 0; c < classes; ++c) order[static_cast<size_t>(c)] = c + 1;
    rng.shuffle(order.begin(), order.end());
    order.resize(static_cast<size_t>(want));

    std::vector<ShapeSpec> placed;
    for (int cls : order) {
      ShapeSpec s;
      s.cls = cls;
      s.geom = (cls - 1) % 3;
      bool ok = false;
      for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        s.r = static_cast<float>(rng.uniform(size / 8.0, size / 5.0));
        s.rx = s.r * static_cast<float>(rng.uniform(0.7, 1.3));
        s.ry = s.r * static_cast<float>(rng.uniform(0.7, 1.3));
        float margin = s.r * 1.05f + 2.0f;
        s.cx = static_cast<float>(rng.uniform(margin, size - margin));
        s.cy = static_cast<float>(rng.uniform(margin, size - margin));
        ok = true;
        for (const auto& other : placed) {
          float dx = s.cx - other.cx, dy = s.cy - other.cy;
          float lim = s.r * 1.15f + other.r * 1.15f + 2.0f;
          if (dx * dx + dy * dy < lim * lim) {
            ok = false;
            break;
          }
        }
      }
      if (!ok) continue;  // crowded image; drop this shape
      placed.push_back(s);

      // Muted body palette, lightly tinted towards the class direction.
      float body[3];
      float tone = static_cast<float>(rng.uniform(0.45, 0.75));
      const float* tint = kTint[(s.cls - 1) % 5];
      for (int c = 0; c < 3; ++c)
        body[c] = std::clamp(tone + 0.07f * tint[c] +
                                 static_cast<float>(rng.uniform(-0.04, 0.04)),
                             0.0f, 1.0f);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          if (!inside_shape(s, static_cast<float>(x), static_cast<float>(y))) continue;
          mask.at(y, x) = static_cast<uint8_t>(s.cls);
          float dx = (x - s.cx) / s.r, dy = (y - s.cy) / s.r;
          float shade = 1.0f - 0.12f * (dx * dx + dy * dy);
          for (int c = 0; c < 3; ++c) {
            float v = body[c] * shade + static_cast<float>(rng.uniform(-0.02, 0.02));
            im.at(c, y, x) = std::clamp(v, 0.0f, 1.0f);
          }
        }

      // Marker: a small saturated square near the centroid, at most a tenth
      // of the shape area, fully inside the shape.
      float area = shape_area(s);
      int m = static_cast<int>(std::floor(std::sqrt(0.09f * area)));
      m = std::clamp(m, 2, size / 8);
      const float* mc = kMarker[(s.cls - 1) % 5];
      for (int attempt = 0; attempt < 50; ++attempt) {
        int mx = static_cast<int>(s.cx + rng.uniform(-s.r / 3.0, s.r / 3.0)) - m / 2;
        int my = static_cast<int>(s.cy + rng.uniform(-s.r / 3.0, s.r / 3.0)) - m / 2;
        bool fits = mx >= 0 && my >= 0 && mx + m <= size && my + m <= size;
        for (int yy = my; fits && yy < my + m; ++yy)
          for (int xx = mx; fits && xx < mx + m; ++xx)
            if (!inside_shape(s, static_cast<float>(xx), static_cast<float>(yy))) fits = false;
        if (!fits) continue;
        for (int yy = my; yy < my + m; ++yy)
          for (int xx = mx; xx < mx + m; ++xx)
            for (int c = 0; c < 3; ++c) im.at(c, yy, xx) = mc[c];
        break;
      }
    }

    // Snap to the 8-bit grid so in-memory pixels match the PNG round trip.
    for (auto& v : im.values) v = quantize8(v) / 255.0f;

    LabeledSample sample;
    sample.image = std::move(im);
    sample.mask = std::move(mask);
    sample.labels.assign(static_cast<size_t>(classes), 0);
    for (uint8_t id : sample.mask.ids)
      if (id > 0) sample.labels[static_cast<size_t>(id - 1)] = 1;
    out.push_back(std::move(sample));
  }
  return out;
}

namespace {

std::string sample_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", idx);
  return buf;
}

}  // namespace

void write_dataset(const std::string& dir, const std::vector<LabeledSample>& samples,
                   const DatasetManifest& manifest) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");

  std::ofstream labels((fs::path(dir) / "labels.tsv").string());
  if (!labels) throw std::runtime_error("write_dataset: cannot write labels.tsv in " + dir);
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::string name = sample_name(static_cast<int>(i));
    save_image((fs::path(dir) / "images" / (name + ".png")).string(), s.image);
    save_mask((fs::path(dir) / "masks" / (name + ".png")).string(), s.mask);
    labels << name;
    for (uint8_t b : s.labels) labels << '\t' << static_cast<int>(b);
    labels << '\n';
  }
  labels.close();

  std::ofstream man((fs::path(dir) / "manifest.txt").string());
  if (!man) throw std::runtime_error("write_dataset: cannot write manifest.txt in " + dir);
  char buf[64];
  man << "n=" << manifest.n << '\n';
  man << "classes=" << manifest.classes << '\n';
  man << "size=" << manifest.size << '\n';
  man << "seed=" << manifest.seed << '\n';
  const char* keys[3] = {"mean_r", "mean_g", "mean_b"};
  for (int c = 0; c < 3; ++c) {
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(manifest.mean.rgb[static_cast<size_t>(c)]));
    man << keys[c] << '=' << buf << '\n';
  }
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream man((fs::path(dir) / "manifest.txt").string());
  if (!man) throw std::runtime_error("load_dataset: cannot open manifest.txt in " + dir);
  DatasetManifest manifest;
  std::string line;
  while (std::getline(man, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "n") manifest.n = std::stoi(val);
    else if (key == "classes") manifest.classes = std::stoi(val);
    else if (key == "size") manifest.size = std::stoi(val);
    else if (key == "seed") manifest.seed = std::stoull(val);
    else if (key == "mean_r") manifest.mean.rgb[0] = std::stof(val);
    else if (key == "mean_g") manifest.mean.rgb[1] = std::stof(val);
    else if (key == "mean_b") manifest.mean.rgb[2] = std::stof(val);
    else throw std::runtime_error("load_dataset: unknown manifest key '" + key + "'");
  }
  if (manifest.n <= 0 || manifest.classes <= 0 || manifest.size <= 0)
    throw std::runtime_error("load_dataset: incomplete manifest in " + dir);

  std::ifstream labels((fs::path(dir) / "labels.tsv").string());
  if (!labels) throw std::runtime_error("load_dataset: cannot open labels.tsv in " + dir);

  Dataset ds;
  ds.manifest = manifest;
  ds.samples.reserve(static_cast<size_t>(manifest.n));
  for (int i = 0; i < manifest.n; ++i) {
    if (!std::getline(labels, line))
      throw std::runtime_error("load_dataset: labels.tsv shorter than manifest n");
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    LabeledSample s;
    s.labels.resize(static_cast<size_t>(manifest.classes));
    for (int c = 0; c < manifest.classes; ++c) {
      int bit = 0;
      if (!(ls >> bit)) throw std::runtime_error("load_dataset: short label row '" + line + "'");
      s.labels[static_cast<size_t>(c)] = static_cast<uint8_t>(bit);
    }
    s.image = load_image((fs::path(dir) / "images" / (name + ".png")).string());
    s.mask = load_mask((fs::path(dir) / "masks" / (name + ".png")).string());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

DatasetManifest generate_and_write(const std::string& dir, int n, int classes, int size,
                                   uint64_t seed) {
  auto samples = generate_shapes_dataset(n, classes, size, seed);
  DatasetManifest manifest;
  manifest.n = n;
  manifest.classes = classes;
  manifest.size = size;
  manifest.seed = seed;
  manifest.mean = compute_dataset_mean(samples);
  write_dataset(dir, samples, manifest);
  return manifest;
}

}  // namespace cpn
