#pragma once

#include <cstdint>
#include <vector>

#include "cpn/image.hpp"
#include "cpn/rng.hpp"

namespace cpn {

// A total partition of the pixel grid into patches, ids 0..num_patches-1.
struct PatchPartition {
  enum class Strategy { Grid, Slic };
  Strategy strategy = Strategy::Grid;
  int height = 0;
  int width = 0;
  int num_patches = 0;
  int grid_side = 0;  // chosen tile side for Grid, else 0
  std::vector<int32_t> patch_id;  // H*W, row-major

  int32_t at(int y, int x) const { return patch_id[static_cast<size_t>(y) * width + x]; }
};

// Square tiles of side S drawn uniformly from side_set; edge tiles may be
// ragged. Every listed side must fit the smaller image extent.
PatchPartition grid_partition(const Image& image, const std::vector<int>& side_set, Rng& rng);

// SLIC superpixels: k-means over (L,a,b,x,y) seeded on a regular grid, then
// connectivity enforcement that absorbs fragments smaller than a quarter of
// the mean segment area into their dominant neighbour. Deterministic.
PatchPartition slic_partition(const Image& image, int segment_count, double compactness = 10.0,
                              int iters = 10);

// One complementary pair: hidden patches are filled with the dataset mean in
// image_h, the complement set in image_hbar. lambda = 1 - hidden/total.
struct CpPair {
  Image image_h;
  Image image_hbar;
  std::vector<uint8_t> hidden;  // per patch id: 1 -> hidden in image_h
  int num_patches = 0;
  int num_hidden = 0;
  double lambda = 1.0;
  double lambda_bar = 0.0;
};

// Deterministic core: caller supplies the hidden set directly.
CpPair make_cp_pair_from_mask(const Image& image, const PatchPartition& part,
                              const std::vector<uint8_t>& hidden, const DatasetMean& fill);

// Random pair: each patch hides with probability p_h in (0,1).
CpPair make_cp_pair(const Image& image, const PatchPartition& part, double p_h,
                    const DatasetMean& fill, Rng& rng);

}  // namespace cpn
