#include <cmath>
#include <cstdint>
#include <vector>

#include "cpn/losses.hpp"
#include "cpn/rng.hpp"
#include "cpn/tensor.hpp"
#include "doctest.h"

using cpn::Rng;
using Td = cpn::Tensor<double>;

namespace {

Td rand_tensor(Rng& rng, const cpn::Shape& shape, double lo, double hi, bool grad = false) {
  std::vector<double> v(static_cast<size_t>(cpn::shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Td::from_data(shape, std::move(v), grad);
}

// 64-bit reference for the per-class soft-margin mean.
double msm_reference(const std::vector<double>& s, const std::vector<uint8_t>& y) {
  double acc = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    double sp_pos = std::log1p(std::exp(-std::abs(s[i]))) + std::max(-s[i], 0.0);
    double sp_neg = std::log1p(std::exp(-std::abs(s[i]))) + std::max(s[i], 0.0);
    acc += y[i] ? sp_pos : sp_neg;
  }
  return acc / static_cast<double>(s.size());
}

}  // namespace

TEST_CASE("soft-margin scoring: neutral, confident, and random cases") {
  Td zero = Td::from_data({1}, {0.0});
  CHECK(cpn::multilabel_soft_margin(zero, {1}).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(cpn::multilabel_soft_margin(zero, {0}).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Confidently correct scores cost nearly nothing and never overflow.
  Td high = Td::from_data({1}, {30.0});
  CHECK(cpn::multilabel_soft_margin(high, {1}).value() < 1e-9);
  Td vhigh = Td::from_data({2}, {1000.0, -1000.0});
  double v = cpn::multilabel_soft_margin(vhigh, {1, 0}).value();
  CHECK(std::isfinite(v));
  CHECK(v < 1e-9);

  Rng rng(1);
  std::vector<double> sv(7);
  for (auto& x : sv) x = rng.uniform(-8.0, 8.0);
  std::vector<uint8_t> yv{1, 0, 1, 1, 0, 0, 1};
  Td s = Td::from_data({7}, sv);
  CHECK(std::abs(cpn::multilabel_soft_margin(s, yv).value() - msm_reference(sv, yv)) < 1e-8);

  CHECK_THROWS_AS(cpn::multilabel_soft_margin(s, std::vector<uint8_t>{1, 0}),
                  std::invalid_argument);
}

TEST_CASE("branch classification loss averages three equal contributions") {
  Rng rng(2);
  std::vector<uint8_t> y{1, 0, 1};
  Td a = rand_tensor(rng, {3}, -4.0, 4.0);
  Td b = rand_tensor(rng, {3}, -4.0, 4.0);
  Td c = rand_tensor(rng, {3}, -4.0, 4.0);

  // Identical branches: the average equals one branch's loss.
  double single = cpn::multilabel_soft_margin(a, y).value();
  CHECK(cpn::cls_loss(a, a, a, y).value() == doctest::Approx(single).epsilon(1e-12));

  // The average is symmetric under branch swaps.
  double abc = cpn::cls_loss(a, b, c, y).value();
  CHECK(cpn::cls_loss(c, a, b, y).value() == doctest::Approx(abc).epsilon(1e-12));

  // And equals the arithmetic mean of the three.
  double mean3 = (cpn::multilabel_soft_margin(a, y).value() +
                  cpn::multilabel_soft_margin(b, y).value() +
                  cpn::multilabel_soft_margin(c, y).value()) /
                 3.0;
  CHECK(abc == doctest::Approx(mean3).epsilon(1e-12));
}

TEST_CASE("pair-consistency loss vanishes exactly for equal branches") {
  Rng rng(3);
  Td y = rand_tensor(rng, {3, 4, 4}, 0.0, 1.0);
  Td r = rand_tensor(rng, {3, 4, 4}, 0.0, 1.0);
  Td loss = cpn::tcp_loss(y, y, y, r, r, r, 0.37);
  CHECK(loss.value() == 0.0);  // exact zero, not merely small
}

TEST_CASE("pair-consistency loss: one-sided mixtures and the loop oracle") {
  Rng rng(4);
  Td y_o = rand_tensor(rng, {2, 3, 3}, 0.0, 1.0);
  Td y_h = rand_tensor(rng, {2, 3, 3}, 0.0, 1.0);
  Td y_hb = rand_tensor(rng, {2, 3, 3}, 0.0, 1.0);
  Td r_o = rand_tensor(rng, {2, 3, 3}, 0.0, 1.0);
  Td r_h = rand_tensor(rng, {2, 3, 3}, 0.0, 1.0);
  Td r_hb = rand_tensor(rng, {2, 3, 3}, 0.0, 1.0);

  // lambda = 1 with matching hidden branch: the weighted gap is zero on both
  // the raw and refined terms when the complementary branch gets weight 0.
  Td same_raw = cpn::tcp_loss(y_o, y_o, y_hb, r_o, r_o, r_hb, 1.0);
  CHECK(same_raw.value() == 0.0);

  // Loop oracle for a general lambda.
  double lambda = 0.3;
  auto term_ref = [&](const Td& o, const Td& h, const Td& hb) {
    double acc = 0;
    for (size_t i = 0; i < o.data().size(); ++i)
      acc += std::abs(lambda * (h.data()[i] - o.data()[i]) +
                      (1 - lambda) * (hb.data()[i] - o.data()[i]));
    return acc / static_cast<double>(o.data().size());
  };
  double expect = term_ref(y_o, y_h, y_hb) + term_ref(r_o, r_h, r_hb);
  Td loss = cpn::tcp_loss(y_o, y_h, y_hb, r_o, r_h, r_hb, lambda);
  CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-12));

  // Swapping the pair roles along with the mixing weight changes nothing.
  Td swapped = cpn::tcp_loss(y_o, y_hb, y_h, r_o, r_hb, r_h, 1.0 - lambda);
  CHECK(swapped.value() == doctest::Approx(loss.value()).epsilon(1e-12));

  CHECK_THROWS_AS(cpn::tcp_loss(y_o, y_h, y_hb, r_o, r_h, r_hb, 1.5), std::invalid_argument);
}

TEST_CASE("pair-consistency gradients respect the fixed-target flag") {
  Rng rng(5);
  Td y_o = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);
  Td y_h = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);
  Td y_hb = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);
  Td r_o = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);
  Td r_h = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);
  Td r_hb = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);

  cpn::tcp_loss(y_o, y_h, y_hb, r_o, r_h, r_hb, 0.4, true).backward();
  bool o_has = false;
  for (double g : y_o.grad()) o_has = o_has || g != 0.0;
  CHECK(o_has);
  for (double g : y_h.grad()) CHECK(g == 0.0);
  for (double g : y_hb.grad()) CHECK(g == 0.0);
  for (double g : r_h.grad()) CHECK(g == 0.0);
  for (double g : r_hb.grad()) CHECK(g == 0.0);

  // With the flag off the pair branches join the graph.
  for (Td* t : {&y_o, &y_h, &y_hb, &r_o, &r_h, &r_hb}) t->zero_grad();
  cpn::tcp_loss(y_o, y_h, y_hb, r_o, r_h, r_hb, 0.4, false).backward();
  bool h_has = false;
  for (double g : y_h.grad()) h_has = h_has || g != 0.0;
  CHECK(h_has);
}

TEST_CASE("cross-pair residuals vanish exactly on an all-zero stack set") {
  Td z = Td::zeros({2, 3, 3});
  auto res = cpn::cpcr_loss(z, z, z, z, z, 0.5, 0.3);
  CHECK(res.value.value() == 0.0);
  for (double v : res.pixel_losses.data()) CHECK(v == 0.0);
}

TEST_CASE("cross-pair residuals match the per-element formula") {
  Rng rng(6);
  double lambda = 0.25;
  Td y_o = rand_tensor(rng, {2, 2, 3}, 0.0, 1.0);
  Td y_h = rand_tensor(rng, {2, 2, 3}, 0.0, 1.0);
  Td y_hb = rand_tensor(rng, {2, 2, 3}, 0.0, 1.0);
  Td r_h = rand_tensor(rng, {2, 2, 3}, 0.0, 1.0);
  Td r_hb = rand_tensor(rng, {2, 2, 3}, 0.0, 1.0);
  Td pix = cpn::cpcr_elementwise(y_o, y_h, y_hb, r_h, r_hb, lambda);
  for (size_t i = 0; i < pix.data().size(); ++i) {
    double gap_h = (y_o.data()[i] - lambda * y_h.data()[i]);
    double gap_hb = (y_o.data()[i] - (1 - lambda) * y_hb.data()[i]);
    double expect = std::abs(gap_h - (1 - lambda) * r_hb.data()[i]) +
                    std::abs(gap_hb - lambda * r_h.data()[i]);
    CHECK(pix.data()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("hard-example mining keeps the largest slice with stable ties") {
  Td x = Td::from_data({10}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  CHECK(cpn::ohem_mean(x, 0.2).value() == doctest::Approx(9.5).epsilon(1e-12));
  // The full fraction degenerates to the plain mean.
  CHECK(cpn::ohem_mean(x, 1.0).value() == doctest::Approx(5.5).epsilon(1e-12));
  // ceil rounds the kept count up.
  CHECK(cpn::ohem_mean(x, 0.25).value() == doctest::Approx((10 + 9 + 8) / 3.0).epsilon(1e-12));

  // Ties keep the earlier element, observable through the gradient.
  Td tied = Td::from_data({4}, {7, 7, 7, 1}, true);
  cpn::ohem_mean(tied, 0.5).backward();
  CHECK(tied.grad()[0] == 0.5);
  CHECK(tied.grad()[1] == 0.5);
  CHECK(tied.grad()[2] == 0.0);
  CHECK(tied.grad()[3] == 0.0);
}

TEST_CASE("cross-pair gradients respect the fixed-gap flag") {
  Rng rng(7);
  Td y_o = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);
  Td y_h = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);
  Td y_hb = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);
  Td r_h = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);
  Td r_hb = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0, true);

  cpn::cpcr_loss(y_o, y_h, y_hb, r_h, r_hb, 0.5, 1.0, true).value.backward();
  for (double g : y_o.grad()) CHECK(g == 0.0);
  for (double g : y_h.grad()) CHECK(g == 0.0);
  for (double g : y_hb.grad()) CHECK(g == 0.0);
  bool rh_has = false, rhb_has = false;
  for (double g : r_h.grad()) rh_has = rh_has || g != 0.0;
  for (double g : r_hb.grad()) rhb_has = rhb_has || g != 0.0;
  CHECK(rh_has);
  CHECK(rhb_has);

  for (Td* t : {&y_o, &y_h, &y_hb, &r_h, &r_hb}) t->zero_grad();
  cpn::cpcr_loss(y_o, y_h, y_hb, r_h, r_hb, 0.5, 1.0, false).value.backward();
  bool o_has = false;
  for (double g : y_o.grad()) o_has = o_has || g != 0.0;
  CHECK(o_has);
}

TEST_CASE("the weighted total reduces to its parts") {
  Rng rng(8);
  Td cls = rand_tensor(rng, {1}, 0.1, 1.0);
  Td tcp = rand_tensor(rng, {1}, 0.1, 1.0);
  Td y_o = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0);
  Td y_h = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0);
  Td y_hb = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0);
  Td r_h = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0);
  Td r_hb = rand_tensor(rng, {2, 2, 2}, 0.0, 1.0);
  auto cpcr = cpn::cpcr_loss(y_o, y_h, y_hb, r_h, r_hb, 0.5, 0.2);

  auto only_cls = cpn::total_loss(cls, tcp, cpcr, 1.0, 0.0, 0.0);
  CHECK(only_cls.total.value() == doctest::Approx(cls.value()).epsilon(1e-12));

  auto bundle = cpn::total_loss(cls, tcp, cpcr, 0.7, 1.3, 2.1);
  double expect = 0.7 * cls.value() + 1.3 * tcp.value() + 2.1 * cpcr.value.value();
  CHECK(std::abs(bundle.total.value() - expect) < 1e-6);
  CHECK(bundle.cpcr_pixels.data() == cpcr.pixel_losses.data());
}
