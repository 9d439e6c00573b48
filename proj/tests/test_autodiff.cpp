#include <cmath>
#include <vector>

#include "cpn/rng.hpp"
#include "cpn/tensor.hpp"
#include "doctest.h"

using cpn::Rng;
using cpn::Shape;
using Td = cpn::Tensor<double>;

TEST_CASE("backward of a plain sum is a field of ones") {
  Td x = Td::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  cpn::sum_all(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("detached tensors receive no gradient") {
  Td x = Td::from_data({3}, {1, 2, 3}, true);
  Td d = x.detach();
  Td y = cpn::sum_all(cpn::mul(x, d));
  y.backward();
  // d/dx (x * const) = const, and the detached copy contributes nothing extra.
  CHECK(x.grad() == std::vector<double>{1, 2, 3});
  CHECK_FALSE(d.requires_grad());
}

TEST_CASE("gradients accumulate when a tensor feeds several ops") {
  Td x = Td::from_data({2}, {3, 4}, true);
  Td y = cpn::add(cpn::sum_all(x), cpn::sum_all(cpn::mul(x, x)));
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(1 + 2 * 3));
  CHECK(x.grad()[1] == doctest::Approx(1 + 2 * 4));
}

TEST_CASE("backward rejects non-scalar outputs") {
  Td x = Td::from_data({2}, {1, 2}, true);
  Td y = cpn::relu(x);
  CHECK_THROWS_AS(y.backward(), std::invalid_argument);
}

TEST_CASE("finite differences confirm a composite graph") {
  Rng rng(12);
  std::vector<double> v(2 * 3 * 6 * 6);
  for (auto& e : v) e = rng.uniform(-1.0, 1.0);
  Td x = Td::from_data({2, 3, 6, 6}, std::move(v), true);
  std::vector<double> kv(4 * 3 * 3 * 3);
  for (auto& e : kv) e = rng.uniform(-0.5, 0.5);
  Td k = Td::from_data({4, 3, 3, 3}, std::move(kv), true);

  auto f = [&](const Td& inp) {
    Td c = cpn::conv2d(inp, k, 1, 1);
    Td r = cpn::relu(c);
    Td p = cpn::global_avg_pool(r);
    return cpn::sum_all(cpn::mul(p, p));
  };
  double err = cpn::finite_diff_check<double>(f, x);
  CHECK(err < 1e-4);

  auto fk = [&](const Td& ker) {
    Td c = cpn::conv2d(x, ker, 1, 1);
    return cpn::mean_all(cpn::softplus(c));
  };
  CHECK(cpn::finite_diff_check<double>(fk, k) < 1e-4);
}

TEST_CASE("finite_diff_check on a quadratic is near machine precision") {
  Td x = Td::from_data({2}, {1, 2}, true);
  auto f = [](const Td& t) { return cpn::sum_all(cpn::mul(t, t)); };
  CHECK(cpn::finite_diff_check<double>(f, x) < 1e-6);
}

TEST_CASE("finite_diff_check on L1 away from kinks") {
  Td x = Td::from_data({3}, {0.5, -1.25, 2.0}, true);
  auto f = [](const Td& t) { return cpn::sum_all(cpn::abs(t)); };
  CHECK(cpn::finite_diff_check<double>(f, x) < 1e-4);
}

TEST_CASE("finite_diff_check probes with its own differentiable copy") {
  // The point being checked need not itself require gradients.
  Td x = Td::from_data({2}, {1, 2}, false);
  auto f = [](const Td& t) { return cpn::sum_all(cpn::mul(t, t)); };
  CHECK(cpn::finite_diff_check<double>(f, x) < 1e-6);
}

TEST_CASE("matmul backward matches hand derivatives") {
  Td a = Td::from_data({2, 2}, {1, 2, 3, 4}, true);
  Td b = Td::from_data({2, 2}, {5, 6, 7, 8}, true);
  cpn::sum_all(cpn::matmul(a, b)).backward();
  // d/dA sum(AB) = 1 * B^T summed over output entries: row sums of B.
  CHECK(a.grad() == std::vector<double>{11, 15, 11, 15});
  CHECK(b.grad() == std::vector<double>{4, 4, 6, 6});
}

TEST_CASE("softmax backward matches finite differences") {
  Td x = Td::from_data({2, 3}, {0.3, -1.2, 0.8, 1.5, 0.0, -0.4}, true);
  auto f = [](const Td& t) {
    Td s = cpn::softmax(t, 1);
    Td w = Td::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    return cpn::sum_all(cpn::mul(s, w));
  };
  CHECK(cpn::finite_diff_check<double>(f, x) < 1e-4);
}

TEST_CASE("bilinear_resize backward matches finite differences") {
  Rng rng(44);
  std::vector<double> v(1 * 2 * 3 * 3);
  for (auto& e : v) e = rng.uniform(0.0, 1.0);
  Td x = Td::from_data({1, 2, 3, 3}, std::move(v), true);
  auto f = [](const Td& t) {
    Td up = cpn::bilinear_resize(t, 5, 5);
    Td w = Td::full({1, 2, 5, 5}, 0.37);
    return cpn::sum_all(cpn::mul(up, w));
  };
  CHECK(cpn::finite_diff_check<double>(f, x) < 1e-4);
}

TEST_CASE("normalize_per_channel backward matches finite differences") {
  // Values spread apart so the probe cannot flip the per-channel argmax.
  Td x = Td::from_data({2, 2, 2}, {0.1, 0.4, 0.7, 1.0, 0.9, 0.6, 0.3, 0.15}, true);
  auto f = [](const Td& t) {
    Td n = cpn::normalize_per_channel(t);
    Td w = Td::from_data({2, 2, 2}, {1, -2, 3, -4, 5, -6, 7, -8});
    return cpn::sum_all(cpn::mul(n, w));
  };
  CHECK(cpn::finite_diff_check<double>(f, x) < 1e-4);
}

TEST_CASE("zero_grad clears accumulated gradients") {
  Td x = Td::from_data({2}, {1, 2}, true);
  cpn::sum_all(cpn::mul(x, x)).backward();
  CHECK(x.grad()[0] != 0.0);
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == 0.0);
}
