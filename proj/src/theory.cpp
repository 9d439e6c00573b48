#include "cpn/theory.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace cpn {

namespace {

int popcount(uint32_t v) { return __builtin_popcount(v); }

}  // namespace

void SeedModel::validate() const {
  if (patch_count < 1 || patch_count > 12)
    throw std::invalid_argument("SeedModel: patch count must lie in [1,12]");
  uint32_t all = (1u << patch_count) - 1;
  if (seed_set == 0 || (seed_set & ~all))
    throw std::invalid_argument("SeedModel: seed set out of range");
  if (static_cast<int>(probability.size()) != patch_count)
    throw std::invalid_argument("SeedModel: probability size does not match patch count");
  double sum = 0;
  for (int i = 0; i < patch_count; ++i) {
    bool in = (seed_set >> i) & 1u;
    double p = probability[static_cast<size_t>(i)];
    if (in && !(p > 0))
      throw std::invalid_argument("SeedModel: seed patch with non-positive probability");
    if (!in && p != 0)
      throw std::invalid_argument("SeedModel: probability mass outside the seed set");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("SeedModel: probabilities sum to " + std::to_string(sum));
  uint32_t uni = detect_h | detect_hbar;
  if (detect_h & detect_hbar)
    throw std::invalid_argument("SeedModel: detect_h and detect_hbar overlap");
  if ((uni & ~seed_set) || (detect_y & ~seed_set))
    throw std::invalid_argument("SeedModel: detection outside the seed set");
  if (detect_y & extra)
    throw std::invalid_argument("SeedModel: extra set overlaps detect_y");
  if (uni != (detect_y | extra))
    throw std::invalid_argument("SeedModel: pair detections do not decompose into detect_y plus extra");
}

double self_information(uint32_t detect, const SeedModel& model) {
  double h = 0;
  for (int i = 0; i < model.patch_count; ++i) {
    if (!((detect >> i) & 1u)) continue;
    double p = model.probability[static_cast<size_t>(i)];
    if (!(p > 0))
      throw std::invalid_argument("self_information: detected patch " + std::to_string(i) +
                                  " has zero probability");
    h -= std::log(p);
  }
  return h;
}

InequalityCheck verify_inequality(const SeedModel& model) {
  model.validate();
  InequalityCheck c;
  c.lhs = self_information(model.detect_h, model) + self_information(model.detect_hbar, model);
  c.rhs = self_information(model.detect_y, model);
  // The slack is evaluated straight from the extra set so that an empty set
  // gives exactly zero; lhs - rhs equals it up to summation rounding.
  c.slack = self_information(model.extra, model);
  c.holds = c.lhs >= c.rhs - 1e-12;
  return c;
}

EnumerationStats enumerate_models(
    int patch_count, ProbabilityMode mode, Rng& rng,
    const std::function<void(const SeedModel&, const InequalityCheck&)>& visit) {
  if (patch_count < 1 || patch_count > 12)
    throw std::invalid_argument("enumerate_models: patch count must lie in [1,12]");

  SeedModel model;
  model.patch_count = patch_count;
  model.seed_set = (1u << patch_count) - 1;
  model.probability.resize(static_cast<size_t>(patch_count));
  if (mode == ProbabilityMode::Uniform) {
    for (auto& p : model.probability) p = 1.0 / patch_count;
  } else {
    double sum = 0;
    for (auto& p : model.probability) {
      p = rng.uniform(0.05, 1.0);
      sum += p;
    }
    for (auto& p : model.probability) p /= sum;
  }

  // Subset self-information table: info[mask] = sum of -log p over the mask.
  uint32_t full = model.seed_set;
  std::vector<double> info(static_cast<size_t>(full) + 1, 0.0);
  std::vector<double> w(static_cast<size_t>(patch_count));
  for (int i = 0; i < patch_count; ++i) w[static_cast<size_t>(i)] = -std::log(model.probability[static_cast<size_t>(i)]);
  for (uint32_t mask = 1; mask <= full; ++mask) {
    uint32_t low = mask & (mask - 1);
    int bit = __builtin_ctz(mask);
    info[mask] = info[low] + w[static_cast<size_t>(bit)];
  }
  bool has_certain_patch = false;
  for (int i = 0; i < patch_count; ++i)
    if (model.probability[static_cast<size_t>(i)] >= 1.0) has_certain_patch = true;

  EnumerationStats stats;
  stats.min_slack = std::numeric_limits<double>::max();
  stats.max_slack = -std::numeric_limits<double>::max();

  for (uint32_t uni = 0;; ++uni) {
    if ((uni & ~full) == 0) {
      // Enumerate detect_h as every submask of the union, detect_y likewise.
      uint32_t hsub = uni;
      while (true) {
        uint32_t ysub = uni;
        while (true) {
          model.detect_h = hsub;
          model.detect_hbar = uni & ~hsub;
          model.detect_y = ysub;
          model.extra = uni & ~ysub;

          double lhs = info[model.detect_h] + info[model.detect_hbar];
          double rhs = info[model.detect_y];
          double slack = info[model.extra];
          ++stats.models;
          if (lhs < rhs - 1e-12) ++stats.violations;
          double identity_err = std::abs((lhs - rhs) - slack);
          stats.max_identity_error = std::max(stats.max_identity_error, identity_err);
          stats.min_slack = std::min(stats.min_slack, slack);
          stats.max_slack = std::max(stats.max_slack, slack);
          if (!has_certain_patch) {
            bool exact_zero = slack == 0.0;
            bool empty_extra = model.extra == 0;
            if (exact_zero != empty_extra) stats.equality_matches_empty_extra = false;
          }
          if (visit) {
            InequalityCheck c;
            c.lhs = lhs;
            c.rhs = rhs;
            c.slack = slack;
            c.holds = lhs >= rhs - 1e-12;
            visit(model, c);
          }
          if (ysub == 0) break;
          ysub = (ysub - 1) & uni;
        }
        if (hsub == 0) break;
        hsub = (hsub - 1) & uni;
      }
    }
    if (uni == full) break;
  }
  if (stats.models == 0) {
    stats.min_slack = 0;
    stats.max_slack = 0;
  }
  return stats;
}

EnumerationStats exhaustive_check(int max_n, int random_draws, uint64_t seed) {
  if (max_n < 1) throw std::invalid_argument("exhaustive_check: max_n must be >= 1");
  EnumerationStats total;
  total.min_slack = std::numeric_limits<double>::max();
  total.max_slack = -std::numeric_limits<double>::max();
  Rng rng(seed);
  for (int n = 1; n <= max_n; ++n) {
    for (int draw = 0; draw <= random_draws; ++draw) {
      auto mode = draw == 0 ? ProbabilityMode::Uniform : ProbabilityMode::Random;
      auto stats = enumerate_models(n, mode, rng);
      total.models += stats.models;
      total.violations += stats.violations;
      total.min_slack = std::min(total.min_slack, stats.min_slack);
      total.max_slack = std::max(total.max_slack, stats.max_slack);
      total.max_identity_error = std::max(total.max_identity_error, stats.max_identity_error);
      total.equality_matches_empty_extra =
          total.equality_matches_empty_extra && stats.equality_matches_empty_extra;
    }
  }
  return total;
}

}  // namespace cpn
