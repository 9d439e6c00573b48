#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "cpn/patching.hpp"
#include "cpn/rng.hpp"
#include "doctest.h"

using cpn::CpPair;
using cpn::DatasetMean;
using cpn::Image;
using cpn::PatchPartition;
using cpn::Rng;

namespace {

Image random_image(Rng& rng, int h, int w) {
  Image im;
  im.height = h;
  im.width = w;
  im.values.resize(static_cast<size_t>(3) * h * w);
  for (auto& v : im.values) v = static_cast<float>(rng.uniform());
  return im;
}

// Every pixel carries a valid id and every id owns at least one pixel.
void check_total_partition(const PatchPartition& part) {
  REQUIRE(part.num_patches > 0);
  std::vector<int> counts(static_cast<size_t>(part.num_patches), 0);
  for (int32_t id : part.patch_id) {
    REQUIRE(id >= 0);
    REQUIRE(id < part.num_patches);
    ++counts[static_cast<size_t>(id)];
  }
  for (int c : counts) CHECK(c > 0);
}

}  // namespace

TEST_CASE("grid tiling of an exactly divisible image is uniform") {
  Rng rng(1);
  Image im = random_image(rng, 448, 448);
  PatchPartition part = cpn::grid_partition(im, {56}, rng);
  CHECK(part.grid_side == 56);
  CHECK(part.num_patches == 64);
  check_total_partition(part);
  // Every tile is exactly 56x56.
  std::vector<int> counts(64, 0);
  for (int32_t id : part.patch_id) ++counts[static_cast<size_t>(id)];
  for (int c : counts) CHECK(c == 56 * 56);
  // Row-major tile ids.
  CHECK(part.at(0, 0) == 0);
  CHECK(part.at(0, 56) == 1);
  CHECK(part.at(56, 0) == 8);
  CHECK(part.at(447, 447) == 63);
}

TEST_CASE("grid tiling keeps ragged edge tiles") {
  Rng rng(2);
  Image im = random_image(rng, 64, 64);
  PatchPartition part = cpn::grid_partition(im, {48}, rng);
  CHECK(part.grid_side == 48);
  CHECK(part.num_patches == 4);
  check_total_partition(part);
  std::map<int32_t, int> counts;
  for (int32_t id : part.patch_id) ++counts[id];
  CHECK(counts[part.at(0, 0)] == 48 * 48);
  CHECK(counts[part.at(0, 63)] == 48 * 16);
  CHECK(counts[part.at(63, 0)] == 16 * 48);
  CHECK(counts[part.at(63, 63)] == 16 * 16);
}

TEST_CASE("grid side is drawn uniformly from the offered set") {
  Rng rng(3);
  Image im = random_image(rng, 224, 224);
  int hits56 = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    PatchPartition part = cpn::grid_partition(im, {56, 112}, rng);
    bool is56 = part.grid_side == 56;
    bool is112 = part.grid_side == 112;
    REQUIRE((is56 || is112));
    hits56 += is56 ? 1 : 0;
  }
  double frac = static_cast<double>(hits56) / draws;
  CHECK(frac > 0.47);
  CHECK(frac < 0.53);
}

TEST_CASE("grid rejects sides that do not fit") {
  Rng rng(4);
  Image im = random_image(rng, 32, 32);
  CHECK_THROWS_AS(cpn::grid_partition(im, {64}, rng), std::invalid_argument);
  CHECK_THROWS_AS(cpn::grid_partition(im, {}, rng), std::invalid_argument);
  CHECK_THROWS_AS(cpn::grid_partition(im, {0}, rng), std::invalid_argument);
}

TEST_CASE("superpixels on a constant image form a near-regular connected grid") {
  Image im = Image::filled(64, 64, 0.5f, 0.5f, 0.5f);
  PatchPartition part = cpn::slic_partition(im, 16);
  CHECK(part.strategy == PatchPartition::Strategy::Slic);
  check_total_partition(part);
  CHECK(part.num_patches >= 8);   // at least half the request
  CHECK(part.num_patches <= 32);  // at most double

  // Segment sizes stay near the regular-tile area.
  std::vector<int> counts(static_cast<size_t>(part.num_patches), 0);
  for (int32_t id : part.patch_id) ++counts[static_cast<size_t>(id)];
  double mean_area = 64.0 * 64.0 / part.num_patches;
  for (int c : counts) {
    CHECK(c > mean_area / 4.0);
    CHECK(c < mean_area * 4.0);
  }

  // Each segment is a single 4-connected component: flood fill from one seed
  // pixel per id must reach the whole segment.
  std::vector<int> seen(64 * 64, 0);
  for (int id = 0; id < part.num_patches; ++id) {
    int sy = -1, sx = -1;
    for (int y = 0; y < 64 && sy < 0; ++y)
      for (int x = 0; x < 64 && sy < 0; ++x)
        if (part.at(y, x) == id) {
          sy = y;
          sx = x;
        }
    REQUIRE(sy >= 0);
    std::vector<std::pair<int, int>> stack{{sy, sx}};
    seen[static_cast<size_t>(sy) * 64 + sx] = 1;
    int reached = 0;
    while (!stack.empty()) {
      auto [y, x] = stack.back();
      stack.pop_back();
      ++reached;
      const int dy[4] = {1, -1, 0, 0};
      const int dx[4] = {0, 0, 1, -1};
      for (int d = 0; d < 4; ++d) {
        int ny = y + dy[d], nx = x + dx[d];
        if (ny < 0 || ny >= 64 || nx < 0 || nx >= 64) continue;
        size_t f = static_cast<size_t>(ny) * 64 + nx;
        if (seen[f] || part.at(ny, nx) != id) continue;
        seen[f] = 1;
        stack.emplace_back(ny, nx);
      }
    }
    CHECK(reached == counts[static_cast<size_t>(id)]);
  }

  // Deterministic: a second run reproduces the labeling.
  PatchPartition again = cpn::slic_partition(im, 16);
  CHECK(again.patch_id == part.patch_id);
}

TEST_CASE("superpixels on textured input still partition the image") {
  Rng rng(5);
  Image im = random_image(rng, 48, 48);
  PatchPartition part = cpn::slic_partition(im, 9);
  check_total_partition(part);
  CHECK(part.num_patches >= 4);
  CHECK(part.num_patches <= 18);
}

TEST_CASE("hiding every patch makes one branch all fill and the other the original") {
  Rng rng(6);
  Image im = random_image(rng, 32, 32);
  PatchPartition part = cpn::grid_partition(im, {8}, rng);
  std::vector<uint8_t> hidden(static_cast<size_t>(part.num_patches), 1);
  DatasetMean fill{{0.1f, 0.2f, 0.3f}};
  CpPair pair = cpn::make_cp_pair_from_mask(im, part, hidden, fill);
  CHECK(pair.num_hidden == part.num_patches);
  CHECK(pair.lambda == 0.0);
  CHECK(pair.lambda_bar == 1.0);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) CHECK(pair.image_h.at(c, y, x) == fill.rgb[static_cast<size_t>(c)]);
  CHECK(pair.image_hbar.values == im.values);
}

TEST_CASE("hiding nothing leaves one branch untouched") {
  Rng rng(7);
  Image im = random_image(rng, 32, 32);
  PatchPartition part = cpn::grid_partition(im, {16}, rng);
  std::vector<uint8_t> hidden(static_cast<size_t>(part.num_patches), 0);
  DatasetMean fill{{0.5f, 0.5f, 0.5f}};
  CpPair pair = cpn::make_cp_pair_from_mask(im, part, hidden, fill);
  CHECK(pair.num_hidden == 0);
  CHECK(pair.lambda == 1.0);
  CHECK(pair.lambda_bar == 0.0);
  CHECK(pair.image_h.values == im.values);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) CHECK(pair.image_hbar.at(c, y, x) == 0.5f);
}

TEST_CASE("mixing ratio follows the hidden count exactly") {
  Rng rng(8);
  Image im = random_image(rng, 64, 64);
  PatchPartition part = cpn::grid_partition(im, {8}, rng);
  REQUIRE(part.num_patches == 64);
  std::vector<uint8_t> hidden(64, 0);
  for (int i = 0; i < 31; ++i) hidden[static_cast<size_t>(i)] = 1;
  CpPair pair = cpn::make_cp_pair_from_mask(im, part, hidden, DatasetMean{});
  CHECK(pair.num_hidden == 31);
  CHECK(pair.lambda == 33.0 / 64.0);
  CHECK(pair.lambda + pair.lambda_bar == 1.0);
}

TEST_CASE("the two branch images are complementary and disjoint") {
  Rng rng(9);
  Image im = random_image(rng, 48, 48);
  PatchPartition part = cpn::grid_partition(im, {12}, rng);
  DatasetMean fill{{0.4f, 0.5f, 0.6f}};
  CpPair pair = cpn::make_cp_pair(im, part, 0.5, fill, rng);

  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x) {
        float a = pair.image_h.at(c, y, x);
        float b = pair.image_hbar.at(c, y, x);
        // Exactly one branch holds the pixel, the other the fill value.
        bool a_orig = a == im.at(c, y, x);
        bool b_orig = b == im.at(c, y, x);
        int32_t id = part.at(y, x);
        bool is_hidden = pair.hidden[static_cast<size_t>(id)] != 0;
        CHECK(a_orig == !is_hidden);
        CHECK(b_orig == is_hidden);
        // Sum identity against the fill.
        CHECK(std::abs(a + b - (im.at(c, y, x) + fill.rgb[static_cast<size_t>(c)])) < 1e-6f);
      }
}

TEST_CASE("hidden-count statistics match the hiding probability") {
  Rng rng(10);
  Image im = random_image(rng, 64, 64);
  PatchPartition part = cpn::grid_partition(im, {8}, rng);
  const int draws = 1000;
  const double p = 0.3;
  double total_hidden = 0;
  for (int i = 0; i < draws; ++i) {
    CpPair pair = cpn::make_cp_pair(im, part, p, DatasetMean{}, rng);
    total_hidden += pair.num_hidden;
    CHECK(pair.lambda + pair.lambda_bar == 1.0);
  }
  double mean_hidden = total_hidden / draws;
  double expect = p * part.num_patches;
  double se = std::sqrt(part.num_patches * p * (1 - p) / draws);
  CHECK(std::abs(mean_hidden - expect) < 4 * se);
}

TEST_CASE("random pair construction validates the probability") {
  Rng rng(11);
  Image im = random_image(rng, 16, 16);
  PatchPartition part = cpn::grid_partition(im, {8}, rng);
  CHECK_THROWS_AS(cpn::make_cp_pair(im, part, 0.0, DatasetMean{}, rng), std::invalid_argument);
  CHECK_THROWS_AS(cpn::make_cp_pair(im, part, 1.0, DatasetMean{}, rng), std::invalid_argument);
  std::vector<uint8_t> wrong(static_cast<size_t>(part.num_patches) + 1, 0);
  CHECK_THROWS_AS(cpn::make_cp_pair_from_mask(im, part, wrong, DatasetMean{}),
                  std::invalid_argument);
}
