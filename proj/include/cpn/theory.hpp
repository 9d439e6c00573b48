#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "cpn/rng.hpp"

namespace cpn {

// Abstract seed-coverage model over N patches, sets as bitmasks. The seed set
// carries a probability distribution; patches outside it have probability
// zero and can never be detected. detect_h and detect_hbar are disjoint and
// their union splits into detect_y plus the extra set it gained.
struct SeedModel {
  int patch_count = 0;
  uint32_t seed_set = 0;            // patches with positive probability
  std::vector<double> probability;  // length patch_count, sums to 1 on seed_set
  uint32_t detect_y = 0;
  uint32_t detect_h = 0;
  uint32_t detect_hbar = 0;
  uint32_t extra = 0;  // the detections gained over detect_y

  void validate() const;
};

// Sum of -log p over the detected patches. Detecting a zero-probability
// patch is rejected; the empty set scores 0.
double self_information(uint32_t detect, const SeedModel& model);

struct InequalityCheck {
  double lhs = 0;    // H(detect_h) + H(detect_hbar)
  double rhs = 0;    // H(detect_y)
  double slack = 0;  // -sum of log p over the extra set; 0 exactly when empty
  bool holds = false;
};

// Checks H(Y_h) + H(Y_hbar) >= H(Y) and that the slack equals the extra-set
// self-information (within 1e-12).
InequalityCheck verify_inequality(const SeedModel& model);

enum class ProbabilityMode { Uniform, Random };

struct EnumerationStats {
  uint64_t models = 0;
  uint64_t violations = 0;
  double min_slack = 0;
  double max_slack = 0;
  double max_identity_error = 0;  // worst |(lhs-rhs) - slack|
  bool equality_matches_empty_extra = true;  // slack == 0 exactly iff extra empty, given p < 1
};

// Visits every decomposition for one probability assignment over the full
// patch set: each patch is independently unused, or lands in one cell of
// (detect_h | detect_hbar) x (detect_y | extra), giving 5^N models. The
// visitor receives a reused model plus its check; pass nullptr to only
// collect stats. Probabilities below 1 are required for the equality
// direction of the iff test, which is why patch_count 1 (where p must be 1)
// reports through min/max slack only.
EnumerationStats enumerate_models(
    int patch_count, ProbabilityMode mode, Rng& rng,
    const std::function<void(const SeedModel&, const InequalityCheck&)>& visit = nullptr);

// Uniform plus `random_draws` random assignments for every N in [1, max_n].
EnumerationStats exhaustive_check(int max_n, int random_draws, uint64_t seed);

}  // namespace cpn
