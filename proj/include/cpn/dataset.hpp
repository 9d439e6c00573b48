#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpn/image.hpp"
#include "cpn/rng.hpp"

namespace cpn {

struct DatasetManifest {
  int n = 0;
  int classes = 0;  // foreground classes; mask ids run 0..classes
  int size = 0;
  uint64_t seed = 0;
  DatasetMean mean;
};

// Synthetic multi-label shapes. Each image holds 1-3 non-overlapping shapes
// on a textured background. Shape bodies share one muted palette across all
// classes; what identifies a class is its outline family plus a small
// saturated marker patch (at most a tenth of the shape area), so a classifier
// can win by looking only at markers while full-extent evidence stays spread
// over the body. Deterministic: the same (n, classes, size, seed) rebuilds
// the same pixels.
std::vector<LabeledSample> generate_shapes_dataset(int n, int classes, int size, uint64_t seed);

void write_dataset(const std::string& dir, const std::vector<LabeledSample>& samples,
                   const DatasetManifest& manifest);

struct Dataset {
  std::vector<LabeledSample> samples;
  DatasetManifest manifest;
};

Dataset load_dataset(const std::string& dir);

// gen-data in one call: generate, fill in the mean, write the layout.
DatasetManifest generate_and_write(const std::string& dir, int n, int classes, int size,
                                   uint64_t seed);

}  // namespace cpn
