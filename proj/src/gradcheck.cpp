#include "cpn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cpn/losses.hpp"
#include "cpn/refine.hpp"
#include "cpn/rng.hpp"
#include "cpn/tensor.hpp"

namespace cpn {
namespace {

using Td = Tensor<double>;
using Fn = std::function<Td(const Td&)>;

Td rand_tensor(Rng& rng, const Shape& shape, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Td::from_data(shape, std::move(v));
}

// Magnitudes in [mag_lo, mag_hi] with random signs, so values never sit on
// the kink of relu or abs.
Td rand_signed(Rng& rng, const Shape& shape, double mag_lo, double mag_hi) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(mag_lo, mag_hi) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  return Td::from_data(shape, std::move(v));
}

Td fixed_weights(Rng& rng, const Shape& shape) { return rand_signed(rng, shape, 0.25, 1.0); }

Td scalarize(const Td& y, const Td& w) { return sum_all(mul(y, w)); }

double min_abs(const std::vector<double>& v) {
  double m = std::numeric_limits<double>::infinity();
  for (double x : v) m = std::min(m, std::abs(x));
  return m;
}

// Gap between the k-th and (k+1)-th largest values; guards argmax (k=1) and
// top-k selections against flipping under the finite-difference probe.
double kth_gap(std::vector<double> v, size_t k) {
  std::sort(v.begin(), v.end(), std::greater<double>());
  if (k == 0 || k >= v.size()) throw std::invalid_argument("kth_gap: k out of range");
  return v[k - 1] - v[k];
}

template <typename MakeFn>
auto sample_until(Rng& rng, const char* what, MakeFn make)
    -> decltype(make(rng).first) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    auto [value, ok] = make(rng);
    if (ok) return value;
  }
  throw std::runtime_error(std::string("gradcheck: no admissible sample for ") + what);
}

struct Harness {
  std::vector<GradCheckCase> rows;
  double tol;
  int points;
  Rng master;

  Harness(uint64_t seed, double tol_in, int points_in) : tol(tol_in), points(points_in), master(seed) {}

  void run(const std::string& name, const std::function<double(Rng&)>& one_point) {
    GradCheckCase c;
    c.name = name;
    Rng rng = master.fork(static_cast<uint64_t>(rows.size()) + 1);
    for (int i = 0; i < points; ++i) c.max_rel_err = std::max(c.max_rel_err, one_point(rng));
    c.passed = c.max_rel_err < tol;
    rows.push_back(std::move(c));
  }
};

}  // namespace

std::vector<GradCheckCase> run_gradient_checks(uint64_t seed, double tol, int points) {
  if (points < 1) throw std::invalid_argument("run_gradient_checks: points must be positive");
  Harness h(seed, tol, points);

  h.run("relu", [](Rng& rng) {
    Td x = rand_signed(rng, {3, 4}, 0.2, 1.0);
    Td w = fixed_weights(rng, x.shape());
    return finite_diff_check<double>([w](const Td& p) { return scalarize(relu(p), w); }, x);
  });

  h.run("sigmoid", [](Rng& rng) {
    Td x = rand_tensor(rng, {3, 4}, -2.0, 2.0);
    Td w = fixed_weights(rng, x.shape());
    return finite_diff_check<double>([w](const Td& p) { return scalarize(sigmoid(p), w); }, x);
  });

  h.run("softplus", [](Rng& rng) {
    Td x = rand_tensor(rng, {3, 4}, -3.0, 3.0);
    Td w = fixed_weights(rng, x.shape());
    return finite_diff_check<double>([w](const Td& p) { return scalarize(softplus(p), w); }, x);
  });

  h.run("abs", [](Rng& rng) {
    Td x = rand_signed(rng, {4, 3}, 0.2, 1.0);
    Td w = fixed_weights(rng, x.shape());
    return finite_diff_check<double>([w](const Td& p) { return scalarize(abs(p), w); }, x);
  });

  h.run("reciprocal", [](Rng& rng) {
    Td x = rand_tensor(rng, {2, 5}, 0.5, 2.0);
    Td w = fixed_weights(rng, x.shape());
    return finite_diff_check<double>([w](const Td& p) { return scalarize(reciprocal(p), w); }, x);
  });

  h.run("pow_scalar", [](Rng& rng) {
    Td x = rand_tensor(rng, {3, 3}, 0.3, 1.5);
    Td w = fixed_weights(rng, x.shape());
    double err = 0;
    for (double p : {0.7, 2.0})
      err = std::max(err, finite_diff_check<double>(
                              [w, p](const Td& t) { return scalarize(pow_scalar(t, p), w); }, x));
    return err;
  });

  h.run("affine", [](Rng& rng) {
    Td x = rand_tensor(rng, {2, 5}, -1.0, 1.0);
    Td w = fixed_weights(rng, x.shape());
    return finite_diff_check<double>(
        [w](const Td& p) { return scalarize(affine(p, 1.3, -0.4), w); }, x);
  });

  h.run("add_sub_mul", [](Rng& rng) {
    Td x = rand_tensor(rng, {3, 3}, -1.0, 1.0);
    Td y = rand_tensor(rng, {3, 3}, -1.0, 1.0);
    Td w = fixed_weights(rng, x.shape());
    auto build = [w](const Td& a, const Td& b) { return scalarize(add(mul(a, b), sub(a, b)), w); };
    double err = finite_diff_check<double>([&, y](const Td& p) { return build(p, y); }, x);
    return std::max(err, finite_diff_check<double>([&, x](const Td& p) { return build(x, p); }, y));
  });

  h.run("scalar_broadcast", [](Rng& rng) {
    Td x = rand_tensor(rng, {2, 3}, -1.0, 1.0);
    Td s = rand_tensor(rng, {1}, 0.3, 1.0);
    Td w = fixed_weights(rng, x.shape());
    auto build = [w](const Td& a, const Td& b) { return scalarize(add(mul(a, b), sub(a, b)), w); };
    double err = finite_diff_check<double>([&, s](const Td& p) { return build(p, s); }, x);
    return std::max(err, finite_diff_check<double>([&, x](const Td& p) { return build(x, p); }, s));
  });

  h.run("matmul", [](Rng& rng) {
    Td a = rand_tensor(rng, {3, 4}, -1.0, 1.0);
    Td b = rand_tensor(rng, {4, 2}, -1.0, 1.0);
    Td w = fixed_weights(rng, {3, 2});
    double err = finite_diff_check<double>(
        [w, b](const Td& p) { return scalarize(matmul(p, b), w); }, a);
    return std::max(err, finite_diff_check<double>(
                             [w, a](const Td& p) { return scalarize(matmul(a, p), w); }, b));
  });

  h.run("conv2d_stacked", [](Rng& rng) {
    Td x = rand_tensor(rng, {1, 2, 6, 6}, -1.0, 1.0);
    Td k4 = rand_tensor(rng, {3, 2, 4, 4}, -0.5, 0.5);
    Td b4 = rand_tensor(rng, {3}, -0.2, 0.2);
    Td k3 = rand_tensor(rng, {2, 3, 3, 3}, -0.5, 0.5);
    Td b3 = rand_tensor(rng, {2}, -0.2, 0.2);
    Td w = fixed_weights(rng, {1, 2, 3, 3});
    auto build = [w](const Td& xi, const Td& ka, const Td& ba, const Td& kb, const Td& bb) {
      return scalarize(conv2d(conv2d(xi, ka, 2, 1, &ba), kb, 1, 1, &bb), w);
    };
    double err = 0;
    err = std::max(err, finite_diff_check<double>(
                            [&](const Td& p) { return build(p, k4, b4, k3, b3); }, x));
    err = std::max(err, finite_diff_check<double>(
                            [&](const Td& p) { return build(x, p, b4, k3, b3); }, k4));
    err = std::max(err, finite_diff_check<double>(
                            [&](const Td& p) { return build(x, k4, p, k3, b3); }, b4));
    err = std::max(err, finite_diff_check<double>(
                            [&](const Td& p) { return build(x, k4, b4, p, b3); }, k3));
    err = std::max(err, finite_diff_check<double>(
                            [&](const Td& p) { return build(x, k4, b4, k3, p); }, b3));
    return err;
  });

  h.run("conv2d_relu", [](Rng& rng) {
    auto tensors = sample_until(rng, "conv2d_relu", [](Rng& r) {
      Td x = rand_tensor(r, {1, 2, 4, 4}, -1.0, 1.0);
      Td k = rand_tensor(r, {2, 2, 3, 3}, -0.5, 0.5);
      Td b = rand_tensor(r, {2}, -0.2, 0.2);
      Td pre = conv2d(x, k, 1, 1, &b);
      bool ok = min_abs(pre.data()) > 1e-3;
      return std::make_pair(std::vector<Td>{x, k, b}, ok);
    });
    Td x = tensors[0], k = tensors[1], b = tensors[2];
    Td w = fixed_weights(rng, {1, 2, 4, 4});
    auto build = [w](const Td& xi, const Td& ki, const Td& bi) {
      return scalarize(relu(conv2d(xi, ki, 1, 1, &bi)), w);
    };
    double err = 0;
    err = std::max(err, finite_diff_check<double>([&](const Td& p) { return build(p, k, b); }, x));
    err = std::max(err, finite_diff_check<double>([&](const Td& p) { return build(x, p, b); }, k));
    err = std::max(err, finite_diff_check<double>([&](const Td& p) { return build(x, k, p); }, b));
    return err;
  });

  h.run("global_avg_pool", [](Rng& rng) {
    Td x = rand_tensor(rng, {1, 3, 4, 5}, -1.0, 1.0);
    Td w = fixed_weights(rng, {1, 3});
    return finite_diff_check<double>(
        [w](const Td& p) { return scalarize(global_avg_pool(p), w); }, x);
  });

  h.run("bilinear_resize", [](Rng& rng) {
    Td x = rand_tensor(rng, {1, 2, 5, 7}, -1.0, 1.0);
    Td w_up = fixed_weights(rng, {1, 2, 8, 6});
    Td w_dn = fixed_weights(rng, {1, 2, 3, 4});
    double err = finite_diff_check<double>(
        [w_up](const Td& p) { return scalarize(bilinear_resize(p, 8, 6), w_up); }, x);
    return std::max(err, finite_diff_check<double>(
                             [w_dn](const Td& p) { return scalarize(bilinear_resize(p, 3, 4), w_dn); },
                             x));
  });

  h.run("softmax", [](Rng& rng) {
    Td x = rand_tensor(rng, {3, 5}, -2.0, 2.0);
    Td w = fixed_weights(rng, x.shape());
    double err = 0;
    for (int axis : {0, 1})
      err = std::max(err, finite_diff_check<double>(
                              [w, axis](const Td& p) { return scalarize(softmax(p, axis), w); }, x));
    return err;
  });

  h.run("reductions", [](Rng& rng) {
    Td x = rand_tensor(rng, {3, 4}, -1.0, 1.0);
    Td w0 = fixed_weights(rng, {4});
    Td w1 = fixed_weights(rng, {3});
    double err = finite_diff_check<double>(
        [w0](const Td& p) { return scalarize(sum_reduce(p, 0), w0); }, x);
    err = std::max(err, finite_diff_check<double>(
                            [w1](const Td& p) { return scalarize(sum_reduce(p, 1), w1); }, x));
    err = std::max(err, finite_diff_check<double>([](const Td& p) { return mean_all(p); }, x));
    return std::max(err,
                    finite_diff_check<double>([](const Td& p) { return sum_all(p); }, x));
  });

  h.run("max_reduce", [](Rng& rng) {
    Td x = sample_until(rng, "max_reduce", [](Rng& r) {
      Td t = rand_tensor(r, {4, 5}, -1.0, 1.0);
      // Each row's and each column's argmax must be stable under probing.
      bool ok = true;
      for (int i = 0; i < 4; ++i) {
        std::vector<double> row;
        for (int j = 0; j < 5; ++j) row.push_back(t.data()[static_cast<size_t>(i * 5 + j)]);
        if (kth_gap(row, 1) < 2e-3) ok = false;
      }
      for (int j = 0; j < 5; ++j) {
        std::vector<double> col;
        for (int i = 0; i < 4; ++i) col.push_back(t.data()[static_cast<size_t>(i * 5 + j)]);
        if (kth_gap(col, 1) < 2e-3) ok = false;
      }
      return std::make_pair(t, ok);
    });
    Td w0 = fixed_weights(rng, {5});
    Td w1 = fixed_weights(rng, {4});
    double err = finite_diff_check<double>(
        [w0](const Td& p) { return scalarize(max_reduce(p, 0), w0); }, x);
    return std::max(err, finite_diff_check<double>(
                             [w1](const Td& p) { return scalarize(max_reduce(p, 1), w1); }, x));
  });

  h.run("normalize_per_channel", [](Rng& rng) {
    Td x = sample_until(rng, "normalize_per_channel", [](Rng& r) {
      Td t = rand_tensor(r, {3, 4, 4}, 0.1, 1.0);
      // Each channel's peak must stay the peak under probing.
      bool ok = true;
      for (int c = 0; c < 3; ++c) {
        std::vector<double> chan(t.data().begin() + c * 16, t.data().begin() + (c + 1) * 16);
        if (kth_gap(chan, 1) < 2e-3) ok = false;
      }
      return std::make_pair(t, ok);
    });
    Td w = fixed_weights(rng, x.shape());
    return finite_diff_check<double>(
        [w](const Td& p) { return scalarize(normalize_per_channel(p), w); }, x);
  });

  h.run("scale_channels", [](Rng& rng) {
    Td x = rand_tensor(rng, {3, 2, 2}, -1.0, 1.0);
    Td w = fixed_weights(rng, x.shape());
    std::vector<double> ch{0.5, 0.0, 1.5};
    return finite_diff_check<double>(
        [w, ch](const Td& p) { return scalarize(scale_channels(p, ch), w); }, x);
  });

  h.run("reshape_transpose_concat", [](Rng& rng) {
    Td x = rand_tensor(rng, {3, 4}, -1.0, 1.0);
    Td y = rand_tensor(rng, {6, 2}, -1.0, 1.0);
    Td w = fixed_weights(rng, {4, 6});
    auto build = [w](const Td& a, const Td& b) {
      return scalarize(concat<double>({reshape(a, {2, 6}), transpose2d(b)}, 0), w);
    };
    double err = finite_diff_check<double>([&, y](const Td& p) { return build(p, y); }, x);
    return std::max(err, finite_diff_check<double>([&, x](const Td& p) { return build(x, p); }, y));
  });

  h.run("l1_normalize_columns", [](Rng& rng) {
    Td x = rand_signed(rng, {4, 6}, 0.2, 1.0);
    Td w = fixed_weights(rng, x.shape());
    return finite_diff_check<double>(
        [w](const Td& p) { return scalarize(l1_normalize_columns(p), w); }, x);
  });

  h.run("normalize_columns_sum", [](Rng& rng) {
    Td x = rand_tensor(rng, {4, 6}, 0.2, 1.0);
    Td w = fixed_weights(rng, x.shape());
    return finite_diff_check<double>(
        [w](const Td& p) { return scalarize(normalize_columns_sum(p), w); }, x);
  });

  h.run("topk_mean", [](Rng& rng) {
    Td x = sample_until(rng, "topk_mean", [](Rng& r) {
      Td t = rand_tensor(r, {20}, -1.0, 1.0);
      // Only the selection boundary matters: the 4th and 5th largest of 20
      // (frac 0.2) must not swap under probing.
      return std::make_pair(t, kth_gap(t.data(), 4) > 2e-3);
    });
    return finite_diff_check<double>([](const Td& p) { return topk_mean(p, 0.2); }, x);
  });

  h.run("multilabel_soft_margin", [](Rng& rng) {
    Td s = rand_tensor(rng, {4}, -2.0, 2.0);
    std::vector<uint8_t> labels{1, 0, 1, 0};
    return finite_diff_check<double>(
        [labels](const Td& p) { return multilabel_soft_margin(p, labels); }, s);
  });

  h.run("cls_loss", [](Rng& rng) {
    Td s_o = rand_tensor(rng, {3}, -2.0, 2.0);
    Td s_h = rand_tensor(rng, {3}, -2.0, 2.0);
    Td s_hbar = rand_tensor(rng, {3}, -2.0, 2.0);
    std::vector<uint8_t> labels{1, 1, 0};
    double err = 0;
    err = std::max(err, finite_diff_check<double>(
                            [&](const Td& p) { return cls_loss(p, s_h, s_hbar, labels); }, s_o));
    err = std::max(err, finite_diff_check<double>(
                            [&](const Td& p) { return cls_loss(s_o, p, s_hbar, labels); }, s_h));
    return std::max(err, finite_diff_check<double>(
                             [&](const Td& p) { return cls_loss(s_o, s_h, p, labels); }, s_hbar));
  });

  h.run("tcp_loss", [](Rng& rng) {
    double lambda = rng.uniform(0.2, 0.8);
    auto stacks = sample_until(rng, "tcp_loss", [lambda](Rng& r) {
      std::vector<Td> t;
      for (int i = 0; i < 6; ++i) t.push_back(rand_tensor(r, {3, 2, 2}, -1.0, 1.0));
      bool ok = true;
      for (int half = 0; half < 2; ++half) {
        const Td &o = t[static_cast<size_t>(3 * half)], &hh = t[static_cast<size_t>(3 * half + 1)],
                 &hb = t[static_cast<size_t>(3 * half + 2)];
        for (int64_t i = 0; i < o.numel(); ++i) {
          double mix = lambda * (hh.data()[static_cast<size_t>(i)] - o.data()[static_cast<size_t>(i)]) +
                       (1 - lambda) * (hb.data()[static_cast<size_t>(i)] - o.data()[static_cast<size_t>(i)]);
          if (std::abs(mix) < 5e-3) ok = false;
        }
      }
      return std::make_pair(t, ok);
    });
    auto loss = [&stacks, lambda](int replace, const Td& p, bool detach) {
      std::vector<Td> t = stacks;
      t[static_cast<size_t>(replace)] = p;
      return tcp_loss(t[0], t[1], t[2], t[3], t[4], t[5], lambda, detach);
    };
    double err = 0;
    for (int i = 0; i < 6; ++i)
      err = std::max(err, finite_diff_check<double>(
                              [&, i](const Td& p) { return loss(i, p, false); }, stacks[static_cast<size_t>(i)]));
    // With detached pairs only the original branches report gradients; the
    // checker returns 0 for the others because their analytic grad vanishes.
    for (int i : {0, 3})
      err = std::max(err, finite_diff_check<double>(
                              [&, i](const Td& p) { return loss(i, p, true); }, stacks[static_cast<size_t>(i)]));
    return err;
  });

  h.run("cpcr_loss", [](Rng& rng) {
    double lambda = rng.uniform(0.2, 0.8);
    double frac = 0.3;
    auto stacks = sample_until(rng, "cpcr_loss", [lambda](Rng& r) {
      std::vector<Td> t;
      for (int i = 0; i < 5; ++i) t.push_back(rand_tensor(r, {2, 3, 3}, -1.0, 1.0));
      // Both residuals must sit clear of their abs kinks, and the pooled
      // pixel losses must have no near-tie at the top-k selection boundary.
      bool ok = true;
      std::vector<double> pixels(static_cast<size_t>(t[0].numel()));
      for (int64_t i = 0; i < t[0].numel(); ++i) {
        size_t ii = static_cast<size_t>(i);
        double o = t[0].data()[ii], hh = t[1].data()[ii], hb = t[2].data()[ii];
        double rh = t[3].data()[ii], rhb = t[4].data()[ii];
        double a = lambda * (o - hh) + (1 - lambda) * o - (1 - lambda) * rhb;
        double b = (1 - lambda) * (o - hb) + lambda * o - lambda * rh;
        if (std::abs(a) < 5e-3 || std::abs(b) < 5e-3) ok = false;
        pixels[ii] = std::abs(a) + std::abs(b);
      }
      if (kth_gap(pixels, 6) < 5e-3) ok = false;  // ceil(0.3 * 18) = 6
      return std::make_pair(t, ok);
    });
    auto loss = [&stacks, lambda, frac](int replace, const Td& p, bool detach) {
      std::vector<Td> t = stacks;
      t[static_cast<size_t>(replace)] = p;
      return cpcr_loss(t[0], t[1], t[2], t[3], t[4], lambda, frac, detach).value;
    };
    double err = 0;
    for (int i = 0; i < 5; ++i)
      err = std::max(err, finite_diff_check<double>(
                              [&, i](const Td& p) { return loss(i, p, false); }, stacks[static_cast<size_t>(i)]));
    for (int i : {3, 4})
      err = std::max(err, finite_diff_check<double>(
                              [&, i](const Td& p) { return loss(i, p, true); }, stacks[static_cast<size_t>(i)]));
    return err;
  });

  for (PcmNorm mode : {PcmNorm::Row, PcmNorm::Global}) {
    h.run(std::string("pcm_") + pcm_norm_name(mode), [mode](Rng& rng) {
      auto tensors = sample_until(rng, "pcm", [](Rng& r) {
        Td x = rand_tensor(r, {1, 3, 3, 4}, -1.0, 1.0);
        Td g_w = rand_tensor(r, {4, 3, 1, 1}, -0.6, 0.6);
        Td g_b = rand_tensor(r, {4}, -0.2, 0.2);
        Td e = conv1x1(x, g_w, g_b);
        Td unit = l1_normalize_columns(reshape(e, {4, 12}));
        Td gram = matmul(transpose2d(unit), unit);
        bool ok = min_abs(gram.data()) > 2e-3 && min_abs(e.data()) > 2e-3;
        return std::make_pair(std::vector<Td>{x, g_w, g_b}, ok);
      });
      Td x = tensors[0], g_w = tensors[1], g_b = tensors[2];
      Td y = rand_tensor(rng, {2, 12}, 0.1, 1.0);
      Td w = fixed_weights(rng, {2, 12});
      auto build = [w, mode](const Td& yi, const Td& xi, const Td& gw, const Td& gb) {
        return scalarize(pcm_refine(yi, pcm_affinity(xi, gw, gb), mode), w);
      };
      double err = 0;
      err = std::max(err, finite_diff_check<double>(
                              [&](const Td& p) { return build(p, x, g_w, g_b); }, y));
      err = std::max(err, finite_diff_check<double>(
                              [&](const Td& p) { return build(y, p, g_w, g_b); }, x));
      err = std::max(err, finite_diff_check<double>(
                              [&](const Td& p) { return build(y, x, p, g_b); }, g_w));
      return std::max(err, finite_diff_check<double>(
                               [&](const Td& p) { return build(y, x, g_w, p); }, g_b));
    });
  }

  h.run("prcm", [](Rng& rng) {
    Td y = rand_tensor(rng, {3, 8}, 0.1, 1.0);
    Td x_flat = rand_tensor(rng, {5, 8}, -1.0, 1.0);
    Td phi_w = rand_tensor(rng, {4, 5, 1, 1}, -0.5, 0.5);
    Td phi_b = rand_tensor(rng, {4}, -0.2, 0.2);
    Td g_w = rand_tensor(rng, {4, 5, 1, 1}, -0.5, 0.5);
    Td g_b = rand_tensor(rng, {4}, -0.2, 0.2);
    Td w = fixed_weights(rng, {3, 8});
    auto build = [&](const Td& yi, const Td& xi, const Td& pw, const Td& gw) {
      return scalarize(prcm_refine(yi, xi, pw, phi_b, gw, g_b), w);
    };
    double err = 0;
    err = std::max(err, finite_diff_check<double>(
                            [&](const Td& p) { return build(p, x_flat, phi_w, g_w); }, y));
    err = std::max(err, finite_diff_check<double>(
                            [&](const Td& p) { return build(y, p, phi_w, g_w); }, x_flat));
    err = std::max(err, finite_diff_check<double>(
                            [&](const Td& p) { return build(y, x_flat, p, g_w); }, phi_w));
    return std::max(err, finite_diff_check<double>(
                             [&](const Td& p) { return build(y, x_flat, phi_w, p); }, g_w));
  });

  h.rows.shrink_to_fit();
  return h.rows;
}

bool all_passed(const std::vector<GradCheckCase>& cases) {
  for (const auto& c : cases)
    if (!c.passed) return false;
  return !cases.empty();
}

}  // namespace cpn
