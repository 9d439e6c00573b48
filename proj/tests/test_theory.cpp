#include <cmath>
#include <cstdint>
#include <vector>

#include "cpn/rng.hpp"
#include "cpn/theory.hpp"
#include "doctest.h"

using cpn::EnumerationStats;
using cpn::InequalityCheck;
using cpn::ProbabilityMode;
using cpn::Rng;
using cpn::SeedModel;

namespace {

SeedModel uniform_model(int n, uint32_t seed_set) {
  SeedModel m;
  m.patch_count = n;
  m.seed_set = seed_set;
  int k = 0;
  for (int i = 0; i < n; ++i) k += (seed_set >> i) & 1u;
  m.probability.assign(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    if ((seed_set >> i) & 1u) m.probability[static_cast<size_t>(i)] = 1.0 / k;
  return m;
}

}  // namespace

TEST_CASE("surprisal of a uniform two-patch detection is two bits in nats") {
  SeedModel m = uniform_model(2, 0b11);
  m.detect_y = 0b11;
  CHECK(cpn::self_information(0b11, m) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(cpn::self_information(0b01, m) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("detecting nothing carries no information") {
  SeedModel m = uniform_model(3, 0b111);
  CHECK(cpn::self_information(0, m) == 0.0);
}

TEST_CASE("a zero-probability detection is rejected") {
  SeedModel m = uniform_model(3, 0b011);  // patch 2 outside the seed set
  CHECK_THROWS_AS(cpn::self_information(0b100, m), std::invalid_argument);
}

TEST_CASE("splitting one detection across the pair earns exactly one extra patch of slack") {
  // Three equally likely patches; the original pass detects only patch a,
  // the pair additionally detects patch b.
  SeedModel m = uniform_model(3, 0b111);
  m.detect_y = 0b001;
  m.detect_h = 0b001;
  m.detect_hbar = 0b010;
  m.extra = 0b010;
  m.validate();
  InequalityCheck chk = cpn::verify_inequality(m);
  CHECK(chk.holds);
  CHECK(chk.lhs == doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-12));
  CHECK(chk.rhs == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(chk.slack == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(std::abs((chk.lhs - chk.rhs) - chk.slack) < 1e-12);
}

TEST_CASE("with no extra detections the two sides tie exactly") {
  SeedModel m = uniform_model(4, 0b1111);
  m.detect_y = 0b0110;
  m.detect_h = 0b0010;
  m.detect_hbar = 0b0100;
  m.extra = 0;
  m.validate();
  InequalityCheck chk = cpn::verify_inequality(m);
  CHECK(chk.holds);
  CHECK(chk.slack == 0.0);
  CHECK(chk.lhs == doctest::Approx(chk.rhs).epsilon(1e-12));
}

TEST_CASE("model validation rejects inconsistent decompositions") {
  SeedModel m = uniform_model(2, 0b11);
  m.detect_y = 0b01;
  m.detect_h = 0b01;
  m.detect_hbar = 0b01;  // overlaps detect_h
  m.extra = 0;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);

  SeedModel m2 = uniform_model(2, 0b11);
  m2.detect_y = 0b01;
  m2.detect_h = 0b01;
  m2.detect_hbar = 0b10;
  m2.extra = 0;  // union gained patch 1 but extra says otherwise
  CHECK_THROWS_AS(m2.validate(), std::invalid_argument);

  SeedModel m3 = uniform_model(2, 0b11);
  m3.probability[0] = 0.9;  // no longer sums to 1
  m3.detect_y = 0;
  CHECK_THROWS_AS(m3.validate(), std::invalid_argument);
}

TEST_CASE("single-patch enumeration never finds slack") {
  Rng rng(1);
  EnumerationStats stats = cpn::enumerate_models(1, ProbabilityMode::Uniform, rng);
  CHECK(stats.models == 5);
  CHECK(stats.violations == 0);
  // With one patch its probability is 1, so every surprisal term is 0.
  CHECK(stats.min_slack == 0.0);
  CHECK(stats.max_slack == 0.0);
}

TEST_CASE("two-patch enumeration covers all twenty-five decompositions") {
  Rng rng(2);
  uint64_t visited = 0;
  EnumerationStats stats = cpn::enumerate_models(
      2, ProbabilityMode::Uniform, rng,
      [&](const SeedModel& m, const InequalityCheck& chk) {
        ++visited;
        m.validate();
        CHECK(chk.holds);
        CHECK(std::abs((chk.lhs - chk.rhs) - chk.slack) < 1e-12);
        // Equality exactly when nothing extra was detected.
        CHECK((chk.slack == 0.0) == (m.extra == 0));
      });
  CHECK(stats.models == 25);
  CHECK(visited == 25);
  CHECK(stats.violations == 0);
  CHECK(stats.equality_matches_empty_extra);
  CHECK(stats.max_slack == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("random probability assignments keep the inequality and the identity") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    EnumerationStats stats = cpn::enumerate_models(3, ProbabilityMode::Random, rng);
    CHECK(stats.models == 125);
    CHECK(stats.violations == 0);
    CHECK(stats.max_identity_error < 1e-12);
    CHECK(stats.equality_matches_empty_extra);
    CHECK(stats.min_slack >= 0.0);
  }
}

TEST_CASE("growing the extra set never lowers the slack") {
  SeedModel m = uniform_model(4, 0b1111);
  m.detect_y = 0b0001;
  m.detect_h = 0b0001;
  m.detect_hbar = 0;
  m.extra = 0;
  m.validate();
  double prev = cpn::verify_inequality(m).slack;
  CHECK(prev == 0.0);
  // Add extra detections one patch at a time.
  uint32_t extras[3] = {0b0010, 0b0110, 0b1110};
  for (uint32_t e : extras) {
    m.detect_hbar = e;
    m.extra = e;
    m.validate();
    double s = cpn::verify_inequality(m).slack;
    CHECK(s > prev);
    prev = s;
  }
}

TEST_CASE("the sweep across small patch counts is clean") {
  EnumerationStats stats = cpn::exhaustive_check(4, 2, 7);
  // 3 assignments per N (uniform + 2 random), sum of 5^N for N=1..4.
  CHECK(stats.models == 3 * (5 + 25 + 125 + 625));
  CHECK(stats.violations == 0);
  CHECK(stats.max_identity_error < 1e-12);
  CHECK(stats.equality_matches_empty_extra);
}

TEST_CASE("the sweep is deterministic in its seed") {
  EnumerationStats a = cpn::exhaustive_check(3, 3, 11);
  EnumerationStats b = cpn::exhaustive_check(3, 3, 11);
  CHECK(a.models == b.models);
  CHECK(a.max_slack == b.max_slack);
  CHECK(a.min_slack == b.min_slack);
  CHECK(a.max_identity_error == b.max_identity_error);
}
