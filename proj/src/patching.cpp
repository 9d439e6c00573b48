#include "cpn/patching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <stdexcept>

namespace cpn {

PatchPartition grid_partition(const Image& image, const std::vector<int>& side_set, Rng& rng) {
  if (image.empty()) throw std::invalid_argument("grid_partition: empty image");
  if (side_set.empty()) throw std::invalid_argument("grid_partition: empty side set");
  int lim = std::min(image.height, image.width);
  for (int s : side_set)
    if (s <= 0 || s > lim)
      throw std::invalid_argument("grid_partition: side " + std::to_string(s) +
                                  " out of range for " + std::to_string(image.height) + "x" +
                                  std::to_string(image.width));
  int side = side_set[static_cast<size_t>(rng.uniform_int(static_cast<int>(side_set.size())))];

  PatchPartition part;
  part.strategy = PatchPartition::Strategy::Grid;
  part.height = image.height;
  part.width = image.width;
  part.grid_side = side;
  int tiles_x = (image.width + side - 1) / side;
  int tiles_y = (image.height + side - 1) / side;
  part.num_patches = tiles_x * tiles_y;
  part.patch_id.resize(static_cast<size_t>(image.height) * image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      part.patch_id[static_cast<size_t>(y) * image.width + x] =
          (y / side) * tiles_x + (x / side);
  return part;
}

namespace {

// sRGB -> CIELab (D65).
void rgb_to_lab(float r, float g, float b, float& L, float& A, float& B) {
  auto lin = [](float u) {
    return u <= 0.04045f ? u / 12.92f : std::pow((u + 0.055f) / 1.055f, 2.4f);
  };
  float rl = lin(r), gl = lin(g), bl = lin(b);
  float X = 0.4124564f * rl + 0.3575761f * gl + 0.1804375f * bl;
  float Y = 0.2126729f * rl + 0.7151522f * gl + 0.0721750f * bl;
  float Z = 0.0193339f * rl + 0.1191920f * gl + 0.9503041f * bl;
  X /= 0.95047f;
  Z /= 1.08883f;
  auto f = [](float t) {
    return t > 0.008856f ? std::cbrt(t) : (7.787f * t + 16.0f / 116.0f);
  };
  float fx = f(X), fy = f(Y), fz = f(Z);
  L = 116.0f * fy - 16.0f;
  A = 500.0f * (fx - fy);
  B = 200.0f * (fy - fz);
}

struct Cluster {
  float L = 0, A = 0, B = 0, x = 0, y = 0;
};

// Splits label map into 4-connected components, returning per-pixel component
// index plus each component's size in scan order of first appearance.
int connected_components(const std::vector<int32_t>& labels, int h, int w,
                         std::vector<int32_t>& comp, std::vector<int>& comp_size,
                         std::vector<int32_t>& comp_label) {
  comp.assign(static_cast<size_t>(h) * w, -1);
  comp_size.clear();
  comp_label.clear();
  int count = 0;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (comp[static_cast<size_t>(start)] != -1) continue;
    int32_t lab = labels[static_cast<size_t>(start)];
    stack.assign(1, start);
    comp[static_cast<size_t>(start)] = count;
    int size = 0;
    while (!stack.empty()) {
      int p = stack.back();
      stack.pop_back();
      ++size;
      int y = p / w, x = p % w;
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
        int q = ny[k] * w + nx[k];
        if (comp[static_cast<size_t>(q)] == -1 && labels[static_cast<size_t>(q)] == lab) {
          comp[static_cast<size_t>(q)] = count;
          stack.push_back(q);
        }
      }
    }
    comp_size.push_back(size);
    comp_label.push_back(lab);
    ++count;
  }
  return count;
}

}  // namespace

PatchPartition slic_partition(const Image& image, int segment_count, double compactness,
                              int iters) {
  if (image.empty()) throw std::invalid_argument("slic_partition: empty image");
  int h = image.height, w = image.width;
  if (segment_count < 2 || segment_count > h * w / 4)
    throw std::invalid_argument("slic_partition: segment count " +
                                std::to_string(segment_count) + " out of range for " +
                                std::to_string(h) + "x" + std::to_string(w));
  if (iters < 1) throw std::invalid_argument("slic_partition: iters must be >= 1");

  std::vector<float> Lp(static_cast<size_t>(h) * w), Ap(Lp.size()), Bp(Lp.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t i = static_cast<size_t>(y) * w + x;
      rgb_to_lab(image.at(0, y, x), image.at(1, y, x), image.at(2, y, x), Lp[i], Ap[i], Bp[i]);
    }

  float S = std::sqrt(static_cast<float>(h) * w / static_cast<float>(segment_count));
  std::vector<Cluster> centers;
  for (float cy = S / 2; cy < h; cy += S)
    for (float cx = S / 2; cx < w; cx += S) {
      Cluster c;
      c.x = cx;
      c.y = cy;
      size_t i = static_cast<size_t>(static_cast<int>(cy)) * w + static_cast<int>(cx);
      c.L = Lp[i];
      c.A = Ap[i];
      c.B = Bp[i];
      centers.push_back(c);
    }

  std::vector<int32_t> label(static_cast<size_t>(h) * w, 0);
  std::vector<float> dist(label.size());
  float mw = static_cast<float>(compactness * compactness) / (S * S);
  for (int it = 0; it < iters; ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<float>::max());
    for (size_t k = 0; k < centers.size(); ++k) {
      const Cluster& c = centers[k];
      int y0 = std::max(0, static_cast<int>(c.y - 2 * S));
      int y1 = std::min(h, static_cast<int>(c.y + 2 * S) + 1);
      int x0 = std::max(0, static_cast<int>(c.x - 2 * S));
      int x1 = std::min(w, static_cast<int>(c.x + 2 * S) + 1);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          size_t i = static_cast<size_t>(y) * w + x;
          float dl = Lp[i] - c.L, da = Ap[i] - c.A, db = Bp[i] - c.B;
          float dx = x - c.x, dy = y - c.y;
          float d = dl * dl + da * da + db * db + mw * (dx * dx + dy * dy);
          if (d < dist[i]) {
            dist[i] = d;
            label[i] = static_cast<int32_t>(k);
          }
        }
    }
    std::vector<Cluster> next(centers.size());
    std::vector<int> count(centers.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        size_t i = static_cast<size_t>(y) * w + x;
        Cluster& c = next[static_cast<size_t>(label[i])];
        c.L += Lp[i];
        c.A += Ap[i];
        c.B += Bp[i];
        c.x += x;
        c.y += y;
        ++count[static_cast<size_t>(label[i])];
      }
    for (size_t k = 0; k < centers.size(); ++k) {
      if (count[k] == 0) continue;  // empty cluster keeps its old center
      float inv = 1.0f / count[k];
      next[k].L *= inv;
      next[k].A *= inv;
      next[k].B *= inv;
      next[k].x *= inv;
      next[k].y *= inv;
      centers[k] = next[k];
    }
  }

  // Connectivity: every final patch must be 4-connected, and fragments below
  // a quarter of the mean segment area merge into the neighbour they share
  // the longest boundary with.
  std::vector<int32_t> comp;
  std::vector<int> comp_size;
  std::vector<int32_t> comp_label;
  int ncomp = connected_components(label, h, w, comp, comp_size, comp_label);

  int threshold = (h * w / segment_count) / 4;
  auto dominant_neighbour = [&](int target) {
    std::map<int32_t, int> border;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (comp[static_cast<size_t>(y) * w + x] != target) continue;
        const int ny[4] = {y - 1, y + 1, y, y};
        const int nx[4] = {x, x, x - 1, x + 1};
        for (int k = 0; k < 4; ++k) {
          if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
          int32_t other = comp[static_cast<size_t>(ny[k]) * w + nx[k]];
          if (other != target) ++border[other];
        }
      }
    int32_t best = -1;
    int best_count = -1;
    for (auto [id, cnt] : border)
      if (cnt > best_count) {
        best = id;
        best_count = cnt;
      }
    return best;
  };

  auto absorb = [&](int victim, int32_t into) {
    for (auto& c : comp)
      if (c == victim) c = into;
    comp_size[static_cast<size_t>(into)] += comp_size[static_cast<size_t>(victim)];
    comp_size[static_cast<size_t>(victim)] = 0;
  };

  auto live_count = [&]() {
    int n = 0;
    for (int c = 0; c < ncomp; ++c)
      if (comp_size[static_cast<size_t>(c)] > 0) ++n;
    return n;
  };

  // Absorb fragments smallest-first so the survivors are the largest pieces,
  // and never let absorption push the patch count below half the request —
  // on high-frequency input (where k-means fragments everywhere) the count
  // contract takes precedence over the fragment-size rule.
  int floor_count = (segment_count + 1) / 2;
  while (live_count() > floor_count) {
    int victim = -1;
    for (int c = 0; c < ncomp; ++c) {
      int size = comp_size[static_cast<size_t>(c)];
      if (size == 0 || size >= threshold) continue;
      if (victim < 0 || size < comp_size[static_cast<size_t>(victim)]) victim = c;
    }
    if (victim < 0) break;
    int32_t into = dominant_neighbour(victim);
    if (into < 0) break;
    absorb(victim, into);
  }

  // Upper-bound safeguard: merge the smallest surviving patches until the
  // count is at most twice the request.
  while (live_count() > 2 * segment_count) {
    int smallest = -1;
    for (int c = 0; c < ncomp; ++c)
      if (comp_size[static_cast<size_t>(c)] > 0 &&
          (smallest < 0 || comp_size[static_cast<size_t>(c)] < comp_size[static_cast<size_t>(smallest)]))
        smallest = c;
    int32_t into = dominant_neighbour(smallest);
    if (into < 0) break;
    absorb(smallest, into);
  }

  // Relabel consecutively in scan order of first appearance.
  PatchPartition part;
  part.strategy = PatchPartition::Strategy::Slic;
  part.height = h;
  part.width = w;
  part.patch_id.assign(static_cast<size_t>(h) * w, -1);
  std::vector<int32_t> remap(static_cast<size_t>(ncomp), -1);
  int next_id = 0;
  for (size_t i = 0; i < part.patch_id.size(); ++i) {
    int32_t c = comp[i];
    if (remap[static_cast<size_t>(c)] == -1) remap[static_cast<size_t>(c)] = next_id++;
    part.patch_id[i] = remap[static_cast<size_t>(c)];
  }
  part.num_patches = next_id;
  return part;
}

CpPair make_cp_pair_from_mask(const Image& image, const PatchPartition& part,
                              const std::vector<uint8_t>& hidden, const DatasetMean& fill) {
  if (image.height != part.height || image.width != part.width)
    throw std::invalid_argument("make_cp_pair: image " + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + " does not match partition " +
                                std::to_string(part.height) + "x" + std::to_string(part.width));
  if (static_cast<int>(hidden.size()) != part.num_patches)
    throw std::invalid_argument("make_cp_pair: hidden set size " +
                                std::to_string(hidden.size()) + " does not match patch count " +
                                std::to_string(part.num_patches));
  CpPair pair;
  pair.hidden = hidden;
  pair.num_patches = part.num_patches;
  for (uint8_t b : hidden) pair.num_hidden += b ? 1 : 0;
  pair.lambda = 1.0 - static_cast<double>(pair.num_hidden) / static_cast<double>(part.num_patches);
  pair.lambda_bar = 1.0 - pair.lambda;

  pair.image_h = image;
  pair.image_hbar = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      bool hide = hidden[static_cast<size_t>(part.at(y, x))] != 0;
      Image& target = hide ? pair.image_h : pair.image_hbar;
      for (int c = 0; c < 3; ++c) target.at(c, y, x) = fill.rgb[static_cast<size_t>(c)];
    }
  return pair;
}

CpPair make_cp_pair(const Image& image, const PatchPartition& part, double p_h,
                    const DatasetMean& fill, Rng& rng) {
  if (!(p_h > 0.0) || !(p_h < 1.0))
    throw std::invalid_argument("make_cp_pair: p_h must lie in (0,1), got " + std::to_string(p_h));
  std::vector<uint8_t> hidden(static_cast<size_t>(part.num_patches));
  for (auto& b : hidden) b = rng.bernoulli(p_h) ? 1 : 0;
  return make_cp_pair_from_mask(image, part, hidden, fill);
}

}  // namespace cpn
