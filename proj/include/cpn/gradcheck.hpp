#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cpn {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0;
  bool passed = false;
};

// Central-difference checks of every differentiable building block, run in
// double precision at randomized points sampled away from kinks (relu zeros,
// tied maxima, top-k boundaries). Each case probes all of its inputs at
// `points` distinct points and records the worst relative error.
std::vector<GradCheckCase> run_gradient_checks(uint64_t seed = 17, double tol = 1e-4,
                                               int points = 10);

bool all_passed(const std::vector<GradCheckCase>& cases);

}  // namespace cpn
