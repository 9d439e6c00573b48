#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace cpn {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline void check_shape_valid(const Shape& s, const char* who) {
  if (s.empty())
    throw std::invalid_argument(std::string(who) + ": empty shape");
  for (int e : s)
    if (e <= 0)
      throw std::invalid_argument(std::string(who) + ": non-positive extent in " + shape_str(s));
}

namespace detail {

template <typename T>
struct Node;

template <typename T>
using GradMap = std::unordered_map<const Node<T>*, std::vector<T>>;

// One value in the computation graph. Interior nodes carry a closure that
// scatters the incoming gradient into their parents; leaves accumulate into
// their persistent grad buffer. Node ids increase with construction order,
// so descending id is a valid topological order for the backward sweep.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // leaves only, allocated on first use
  bool requires_grad = false;
  bool leaf = true;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const std::vector<T>&, GradMap<T>&)> backprop;
};

inline uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    check_shape_valid(shape, "Tensor::zeros");
    return from_data(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    check_shape_valid(shape, "Tensor::full");
    return from_data(shape, std::vector<T>(shape_numel(shape), value), requires_grad);
  }

  static Tensor scalar(T value) { return from_data({1}, {value}); }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    check_shape_valid(shape, "Tensor::from_data");
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw std::invalid_argument("Tensor::from_data: " + std::to_string(data.size()) +
                                  " values do not fill shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->leaf = true;
    n->id = detail::next_node_id();
    return Tensor(std::move(n));
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return node().shape; }
  int ndim() const { return static_cast<int>(node().shape.size()); }
  int dim(int i) const { return node().shape.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(node().data.size()); }
  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return node().leaf; }

  const std::vector<T>& data() const { return node().data; }

  // Mutable access is for optimizers and loaders touching leaf parameters
  // between steps; graphs built from earlier values are already consumed.
  std::vector<T>& data_mut() {
    if (!node().leaf)
      throw std::invalid_argument("Tensor::data_mut: only leaf tensors may be mutated");
    return node().data;
  }

  const std::vector<T>& grad() const {
    auto& n = node();
    if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
    return n.grad;
  }

  void zero_grad() {
    auto& n = node();
    n.grad.assign(n.data.size(), T(0));
  }

  T value() const {
    if (numel() != 1)
      throw std::invalid_argument("Tensor::value: tensor of shape " + shape_str(shape()) +
                                  " is not a scalar");
    return node().data[0];
  }

  T at(std::initializer_list<int> idx) const {
    const auto& n = node();
    if (idx.size() != n.shape.size())
      throw std::invalid_argument("Tensor::at: index rank does not match shape " +
                                  shape_str(n.shape));
    int64_t flat = 0;
    size_t d = 0;
    for (int i : idx) {
      if (i < 0 || i >= n.shape[d])
        throw std::invalid_argument("Tensor::at: index out of range for shape " +
                                    shape_str(n.shape));
      flat = flat * n.shape[d] + i;
      ++d;
    }
    return n.data[static_cast<size_t>(flat)];
  }

  // Breaks the graph edge: same values, no parents, no gradient flow.
  Tensor detach() const {
    auto m = std::make_shared<detail::Node<T>>();
    m->shape = node().shape;
    m->data = node().data;
    m->requires_grad = false;
    m->leaf = true;
    m->id = detail::next_node_id();
    return Tensor(std::move(m));
  }

  // Reverse sweep from a scalar. Interior gradients live in a transient map;
  // leaf gradients accumulate across repeated calls until zero_grad().
  void backward() const {
    if (numel() != 1)
      throw std::invalid_argument("Tensor::backward: loss must be a scalar, got shape " +
                                  shape_str(shape()));
    std::vector<detail::Node<T>*> order;
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<detail::Node<T>*> stack{n_.get()};
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto* v = stack.back();
      stack.pop_back();
      order.push_back(v);
      for (const auto& p : v->parents)
        if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node<T>* a, const detail::Node<T>* b) { return a->id > b->id; });

    detail::GradMap<T> grads;
    grads[n_.get()] = {T(1)};
    for (auto* v : order) {
      auto it = grads.find(v);
      if (it == grads.end()) continue;
      if (v->leaf) {
        if (v->requires_grad) {
          if (v->grad.empty()) v->grad.assign(v->data.size(), T(0));
          for (size_t i = 0; i < v->grad.size(); ++i) v->grad[i] += it->second[i];
        }
        continue;
      }
      if (v->backprop) v->backprop(it->second, grads);
    }
  }

  detail::Node<T>& node() const {
    if (!n_) throw std::invalid_argument("Tensor: use of an undefined tensor");
    return *n_;
  }

  const std::shared_ptr<detail::Node<T>>& handle() const { return n_; }

  explicit Tensor(std::shared_ptr<detail::Node<T>> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node<T>> n_;
};

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> data, std::vector<Tensor<T>> parents,
                  std::function<void(const std::vector<T>&, GradMap<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->leaf = false;
  n->id = next_node_id();
  bool needs = false;
  for (const auto& p : parents) {
    n->parents.push_back(p.handle());
    needs = needs || p.requires_grad();
  }
  n->requires_grad = needs;
  if (needs) n->backprop = std::move(backprop);
  return Tensor<T>(std::move(n));
}

// Fetches (allocating on demand) the transient gradient buffer of a parent.
// Returns nullptr when the parent needs no gradient so callers can skip work.
template <typename T>
std::vector<T>* sink(GradMap<T>& m, const std::shared_ptr<Node<T>>& p) {
  if (!p->requires_grad) return nullptr;
  auto& buf = m[p.get()];
  if (buf.empty()) buf.assign(p->data.size(), T(0));
  return &buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and scalar ops

namespace detail {

// Unary elementwise helper: fwd(x) and dfdx(x, y) evaluated per element.
template <typename T, typename F, typename D>
Tensor<T> unary_op(const Tensor<T>& x, F fwd, D dfdx) {
  const auto& xs = x.data();
  std::vector<T> out(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  auto xn = x.handle();
  std::vector<T> saved = out;
  return make_op<T>(
      x.shape(), std::move(out), {x},
      [xn, saved, dfdx](const std::vector<T>& g, GradMap<T>& m) {
        if (auto* gx = sink(m, xn))
          for (size_t i = 0; i < g.size(); ++i)
            (*gx)[i] += g[i] * dfdx(xn->data[i], saved[i]);
      });
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x,
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v < T(0) ? -v : v; },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// log(1 + exp(x)) in the overflow-safe form max(x,0) + log1p(exp(-|x|)).
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary_op(
      x,
      [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      });
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return T(1) / v; },
      [](T v, T) { return T(-1) / (v * v); });
}

// a*x + b; covers scalar multiply, negation and scalar shifts.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
  return detail::unary_op(
      x, [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T a) {
  return affine(x, a, T(0));
}

// x^p with 0^p defined as 0 (p > 0); derivative at 0 taken as 0.
template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
  return detail::unary_op(
      x, [p](T v) { return v == T(0) ? T(0) : std::pow(v, p); },
      [p](T v, T) { return v == T(0) ? T(0) : p * std::pow(v, p - T(1)); });
}

namespace detail {

// Binary elementwise helper supporting equal shapes or one scalar operand.
// combine(a_val, b_val) -> value; da, db give the two partials.
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, F combine, DA da,
                    DB db) {
  bool a_scalar = a.numel() == 1;
  bool b_scalar = b.numel() == 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape())
    throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const auto& av = a.data();
  const auto& bv = b.data();
  size_t n = std::max(av.size(), bv.size());
  std::vector<T> out(n);
  for (size_t i = 0; i < n; ++i)
    out[i] = combine(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  Shape shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  auto an = a.handle();
  auto bn = b.handle();
  return make_op<T>(
      std::move(shape), std::move(out), {a, b},
      [an, bn, a_scalar, b_scalar, da, db](const std::vector<T>& g, GradMap<T>& m) {
        if (auto* ga = sink(m, an)) {
          for (size_t i = 0; i < g.size(); ++i) {
            T x = an->data[a_scalar ? 0 : i];
            T y = bn->data[b_scalar ? 0 : i];
            (*ga)[a_scalar ? 0 : i] += g[i] * da(x, y);
          }
        }
        if (auto* gb = sink(m, bn)) {
          for (size_t i = 0; i < g.size(); ++i) {
            T x = an->data[a_scalar ? 0 : i];
            T y = bn->data[b_scalar ? 0 : i];
            (*gb)[b_scalar ? 0 : i] += g[i] * db(x, y);
          }
        }
      });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  check_shape_valid(shape, "reshape");
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  auto xn = x.handle();
  return detail::make_op<T>(std::move(shape), x.data(), {x},
                            [xn](const std::vector<T>& g, detail::GradMap<T>& m) {
                              if (auto* gx = detail::sink(m, xn))
                                for (size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                            });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  if (x.ndim() != 2)
    throw std::invalid_argument("transpose2d: expected a matrix, got " + shape_str(x.shape()));
  int r = x.dim(0), c = x.dim(1);
  std::vector<T> out(static_cast<size_t>(r) * c);
  const auto& xs = x.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(j) * r + i] = xs[static_cast<size_t>(i) * c + j];
  auto xn = x.handle();
  return detail::make_op<T>({c, r}, std::move(out), {x},
                            [xn, r, c](const std::vector<T>& g, detail::GradMap<T>& m) {
                              if (auto* gx = detail::sink(m, xn))
                                for (int i = 0; i < r; ++i)
                                  for (int j = 0; j < c; ++j)
                                    (*gx)[static_cast<size_t>(i) * c + j] +=
                                        g[static_cast<size_t>(j) * r + i];
                            });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size()))
    throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range for " +
                                shape_str(s0));
  Shape out_shape = s0;
  int total_axis = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != s0.size())
      throw std::invalid_argument("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
    for (size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != axis && s[d] != s0[d])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(s0) + " vs " +
                                    shape_str(s));
    total_axis += s[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total_axis;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s0.size(); ++d) inner *= s0[d];

  std::vector<T> out(shape_numel(out_shape));
  int64_t offset = 0;  // running position along the axis
  for (const auto& x : xs) {
    int64_t ax = x.dim(axis);
    const auto& xv = x.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(xv.begin() + o * ax * inner, xv.begin() + (o + 1) * ax * inner,
                out.begin() + (o * total_axis + offset) * inner);
    offset += ax;
  }

  std::vector<std::shared_ptr<detail::Node<T>>> handles;
  std::vector<int64_t> extents;
  for (const auto& x : xs) {
    handles.push_back(x.handle());
    extents.push_back(x.dim(axis));
  }
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), xs,
      [handles, extents, outer, inner, total_axis](const std::vector<T>& g,
                                                   detail::GradMap<T>& m) {
        int64_t offset = 0;
        for (size_t k = 0; k < handles.size(); ++k) {
          int64_t ax = extents[k];
          if (auto* gx = detail::sink(m, handles[k])) {
            for (int64_t o = 0; o < outer; ++o)
              for (int64_t i = 0; i < ax * inner; ++i)
                (*gx)[o * ax * inner + i] += g[(o * total_axis + offset) * inner + i];
          }
          offset += ax;
        }
      });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  const auto& xs = x.data();
  T acc = 0;
  for (T v : xs) acc += v;
  auto xn = x.handle();
  return detail::make_op<T>({1}, {acc}, {x},
                            [xn](const std::vector<T>& g, detail::GradMap<T>& m) {
                              if (auto* gx = detail::sink(m, xn))
                                for (auto& v : *gx) v += g[0];
                            });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scalar_mul(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

namespace detail {

inline void reduce_extents(const Shape& s, int axis, const char* who, int64_t& outer,
                           int64_t& len, int64_t& inner, Shape& out_shape) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument(std::string(who) + ": axis " + std::to_string(axis) +
                                " out of range for " + shape_str(s));
  outer = 1;
  inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  len = s[static_cast<size_t>(axis)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];
  out_shape.clear();
  for (size_t d = 0; d < s.size(); ++d)
    if (static_cast<int>(d) != axis) out_shape.push_back(s[d]);
  if (out_shape.empty()) out_shape.push_back(1);
}

}  // namespace detail

template <typename T>
Tensor<T> sum_reduce(const Tensor<T>& x, int axis) {
  int64_t outer, len, inner;
  Shape out_shape;
  detail::reduce_extents(x.shape(), axis, "sum_reduce", outer, len, inner, out_shape);
  const auto& xs = x.data();
  std::vector<T> out(static_cast<size_t>(outer * inner), T(0));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t k = 0; k < len; ++k)
      for (int64_t i = 0; i < inner; ++i)
        out[o * inner + i] += xs[(o * len + k) * inner + i];
  auto xn = x.handle();
  return detail::make_op<T>(std::move(out_shape), std::move(out), {x},
                            [xn, outer, len, inner](const std::vector<T>& g,
                                                    detail::GradMap<T>& m) {
                              if (auto* gx = detail::sink(m, xn))
                                for (int64_t o = 0; o < outer; ++o)
                                  for (int64_t k = 0; k < len; ++k)
                                    for (int64_t i = 0; i < inner; ++i)
                                      (*gx)[(o * len + k) * inner + i] += g[o * inner + i];
                            });
}

// Max along an axis; the gradient is routed to the first maximal element so
// ties resolve deterministically to the lowest index.
template <typename T>
Tensor<T> max_reduce(const Tensor<T>& x, int axis) {
  int64_t outer, len, inner;
  Shape out_shape;
  detail::reduce_extents(x.shape(), axis, "max_reduce", outer, len, inner, out_shape);
  const auto& xs = x.data();
  std::vector<T> out(static_cast<size_t>(outer * inner));
  std::vector<int64_t> argmax(static_cast<size_t>(outer * inner));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      T best = xs[(o * len) * inner + i];
      int64_t arg = 0;
      for (int64_t k = 1; k < len; ++k) {
        T v = xs[(o * len + k) * inner + i];
        if (v > best) {
          best = v;
          arg = k;
        }
      }
      out[o * inner + i] = best;
      argmax[o * inner + i] = arg;
    }
  auto xn = x.handle();
  return detail::make_op<T>(std::move(out_shape), std::move(out), {x},
                            [xn, argmax, outer, len, inner](const std::vector<T>& g,
                                                            detail::GradMap<T>& m) {
                              if (auto* gx = detail::sink(m, xn))
                                for (int64_t o = 0; o < outer; ++o)
                                  for (int64_t i = 0; i < inner; ++i)
                                    (*gx)[(o * len + argmax[o * inner + i]) * inner + i] +=
                                        g[o * inner + i];
                            });
}

// ---------------------------------------------------------------------------
// softmax

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  int64_t outer, len, inner;
  Shape out_shape;
  detail::reduce_extents(x.shape(), axis, "softmax", outer, len, inner, out_shape);
  const auto& xs = x.data();
  std::vector<T> out(xs.size());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      T mx = xs[(o * len) * inner + i];
      for (int64_t k = 1; k < len; ++k) mx = std::max(mx, xs[(o * len + k) * inner + i]);
      T denom = 0;
      for (int64_t k = 0; k < len; ++k) {
        T e = std::exp(xs[(o * len + k) * inner + i] - mx);
        out[(o * len + k) * inner + i] = e;
        denom += e;
      }
      for (int64_t k = 0; k < len; ++k) out[(o * len + k) * inner + i] /= denom;
    }
  auto xn = x.handle();
  std::vector<T> saved = out;
  return detail::make_op<T>(
      x.shape(), std::move(out), {x},
      [xn, saved, outer, len, inner](const std::vector<T>& g, detail::GradMap<T>& m) {
        if (auto* gx = detail::sink(m, xn))
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < inner; ++i) {
              T dot = 0;
              for (int64_t k = 0; k < len; ++k) {
                size_t ix = static_cast<size_t>((o * len + k) * inner + i);
                dot += g[ix] * saved[ix];
              }
              for (int64_t k = 0; k < len; ++k) {
                size_t ix = static_cast<size_t>((o * len + k) * inner + i);
                (*gx)[ix] += saved[ix] * (g[ix] - dot);
              }
            }
      });
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw std::invalid_argument("matmul: expected matrices, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner extents disagree, " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<T> out(static_cast<size_t>(M) * N, T(0));
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < K; ++k) {
      T aik = av[static_cast<size_t>(i) * K + k];
      const T* brow = &bv[static_cast<size_t>(k) * N];
      T* orow = &out[static_cast<size_t>(i) * N];
      for (int j = 0; j < N; ++j) orow[j] += aik * brow[j];
    }
  auto an = a.handle();
  auto bn = b.handle();
  return detail::make_op<T>(
      {M, N}, std::move(out), {a, b},
      [an, bn, M, K, N](const std::vector<T>& g, detail::GradMap<T>& m) {
        if (auto* ga = detail::sink(m, an)) {
          // dA = dY * B^T
          for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) {
              T gij = g[static_cast<size_t>(i) * N + j];
              for (int k = 0; k < K; ++k)
                (*ga)[static_cast<size_t>(i) * K + k] += gij * bn->data[static_cast<size_t>(k) * N + j];
            }
        }
        if (auto* gb = detail::sink(m, bn)) {
          // dB = A^T * dY
          for (int i = 0; i < M; ++i)
            for (int k = 0; k < K; ++k) {
              T aik = an->data[static_cast<size_t>(i) * K + k];
              for (int j = 0; j < N; ++j)
                (*gb)[static_cast<size_t>(k) * N + j] += aik * g[static_cast<size_t>(i) * N + j];
            }
        }
      });
}

// Cross-correlation over [N,Cin,H,W] with kernel [Cout,Cin,kh,kw] and an
// optional per-output-channel bias. Output extents must divide exactly:
// H' = (H + 2 pad - kh) / stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int pad,
                 const Tensor<T>* bias = nullptr) {
  if (input.ndim() != 4 || kernel.ndim() != 4)
    throw std::invalid_argument("conv2d: expected 4-d input and kernel, got " +
                                shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  int N = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  int Co = kernel.dim(0), Ck = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (Ci != Ck)
    throw std::invalid_argument("conv2d: input channels do not match kernel, input " +
                                shape_str(input.shape()) + " vs kernel " +
                                shape_str(kernel.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw std::invalid_argument("conv2d: kernel " + shape_str(kernel.shape()) +
                                " larger than padded input " + shape_str(input.shape()));
  if ((H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0)
    throw std::invalid_argument("conv2d: output extent not exact for input " +
                                shape_str(input.shape()) + ", kernel " +
                                shape_str(kernel.shape()) + ", stride " + std::to_string(stride) +
                                ", pad " + std::to_string(pad));
  if (bias) {
    if (bias->ndim() != 1 || bias->dim(0) != Co)
      throw std::invalid_argument("conv2d: bias " + shape_str(bias->shape()) +
                                  " does not match output channels " + std::to_string(Co));
  }
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;

  const auto& in = input.data();
  const auto& kv = kernel.data();
  std::vector<T> out(static_cast<size_t>(N) * Co * Ho * Wo, T(0));
  if (bias) {
    const auto& bv = bias->data();
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co) {
        T b = bv[static_cast<size_t>(co)];
        T* dst = &out[(static_cast<size_t>(n) * Co + co) * Ho * Wo];
        for (int i = 0; i < Ho * Wo; ++i) dst[i] = b;
      }
  }
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int ci = 0; ci < Ci; ++ci)
        for (int p = 0; p < kh; ++p)
          for (int q = 0; q < kw; ++q) {
            T kval = kv[((static_cast<size_t>(co) * Ci + ci) * kh + p) * kw + q];
            if (kval == T(0)) continue;
            for (int oh = 0; oh < Ho; ++oh) {
              int ih = oh * stride - pad + p;
              if (ih < 0 || ih >= H) continue;
              const T* irow = &in[((static_cast<size_t>(n) * Ci + ci) * H + ih) * W];
              T* orow = &out[((static_cast<size_t>(n) * Co + co) * Ho + oh) * Wo];
              for (int ow = 0; ow < Wo; ++ow) {
                int iw = ow * stride - pad + q;
                if (iw < 0 || iw >= W) continue;
                orow[ow] += kval * irow[iw];
              }
            }
          }

  std::vector<Tensor<T>> parents{input, kernel};
  if (bias) parents.push_back(*bias);
  auto in_n = input.handle();
  auto k_n = kernel.handle();
  std::shared_ptr<detail::Node<T>> b_n = bias ? bias->handle() : nullptr;
  return detail::make_op<T>(
      {N, Co, Ho, Wo}, std::move(out), std::move(parents),
      [in_n, k_n, b_n, N, Ci, H, W, Co, kh, kw, Ho, Wo, stride,
       pad](const std::vector<T>& g, detail::GradMap<T>& m) {
        auto* gin = detail::sink(m, in_n);
        auto* gk = detail::sink(m, k_n);
        if (gin || gk) {
          for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co)
              for (int ci = 0; ci < Ci; ++ci)
                for (int p = 0; p < kh; ++p)
                  for (int q = 0; q < kw; ++q) {
                    size_t kix = ((static_cast<size_t>(co) * Ci + ci) * kh + p) * kw + q;
                    T kval = k_n->data[kix];
                    T kacc = 0;
                    for (int oh = 0; oh < Ho; ++oh) {
                      int ih = oh * stride - pad + p;
                      if (ih < 0 || ih >= H) continue;
                      const T* grow = &g[((static_cast<size_t>(n) * Co + co) * Ho + oh) * Wo];
                      const T* irow =
                          &in_n->data[((static_cast<size_t>(n) * Ci + ci) * H + ih) * W];
                      T* ginrow = gin ? &(*gin)[((static_cast<size_t>(n) * Ci + ci) * H + ih) * W]
                                      : nullptr;
                      for (int ow = 0; ow < Wo; ++ow) {
                        int iw = ow * stride - pad + q;
                        if (iw < 0 || iw >= W) continue;
                        if (ginrow) ginrow[iw] += grow[ow] * kval;
                        if (gk) kacc += grow[ow] * irow[iw];
                      }
                    }
                    if (gk) (*gk)[kix] += kacc;
                  }
        }
        if (b_n) {
          if (auto* gb = detail::sink(m, b_n)) {
            for (int n = 0; n < N; ++n)
              for (int co = 0; co < Co; ++co) {
                const T* grow = &g[(static_cast<size_t>(n) * Co + co) * Ho * Wo];
                T acc = 0;
                for (int i = 0; i < Ho * Wo; ++i) acc += grow[i];
                (*gb)[static_cast<size_t>(co)] += acc;
              }
          }
        }
      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() != 4)
    throw std::invalid_argument("global_avg_pool: expected [N,C,H,W], got " +
                                shape_str(x.shape()));
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto& xs = x.data();
  std::vector<T> out(static_cast<size_t>(N) * C, T(0));
  T inv = T(1) / static_cast<T>(H * W);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = &xs[(static_cast<size_t>(n) * C + c) * H * W];
      T acc = 0;
      for (int i = 0; i < H * W; ++i) acc += src[i];
      out[static_cast<size_t>(n) * C + c] = acc * inv;
    }
  auto xn = x.handle();
  return detail::make_op<T>({N, C}, std::move(out), {x},
                            [xn, N, C, H, W, inv](const std::vector<T>& g,
                                                  detail::GradMap<T>& m) {
                              if (auto* gx = detail::sink(m, xn))
                                for (int n = 0; n < N; ++n)
                                  for (int c = 0; c < C; ++c) {
                                    T gv = g[static_cast<size_t>(n) * C + c] * inv;
                                    T* dst = &(*gx)[(static_cast<size_t>(n) * C + c) * H * W];
                                    for (int i = 0; i < H * W; ++i) dst[i] += gv;
                                  }
                            });
}

// ---------------------------------------------------------------------------
// bilinear resize (half-pixel centers, clamped borders)

namespace detail {

struct LerpAxis {
  std::vector<int> lo, hi;
  std::vector<double> w_hi;  // weight of the hi sample
};

inline LerpAxis lerp_axis(int in, int out) {
  LerpAxis a;
  a.lo.resize(static_cast<size_t>(out));
  a.hi.resize(static_cast<size_t>(out));
  a.w_hi.resize(static_cast<size_t>(out));
  double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > in - 1) src = in - 1;
    int lo = static_cast<int>(std::floor(src));
    int hi = std::min(lo + 1, in - 1);
    a.lo[static_cast<size_t>(i)] = lo;
    a.hi[static_cast<size_t>(i)] = hi;
    a.w_hi[static_cast<size_t>(i)] = src - lo;
  }
  return a;
}

}  // namespace detail

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
  if (x.ndim() != 4)
    throw std::invalid_argument("bilinear_resize: expected [N,C,H,W], got " +
                                shape_str(x.shape()));
  if (out_h <= 0 || out_w <= 0)
    throw std::invalid_argument("bilinear_resize: non-positive target extents");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h == H && out_w == W) {
    // Identity resize stays bit-exact.
    auto xn = x.handle();
    return detail::make_op<T>(x.shape(), x.data(), {x},
                              [xn](const std::vector<T>& g, detail::GradMap<T>& m) {
                                if (auto* gx = detail::sink(m, xn))
                                  for (size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                              });
  }
  auto ay = detail::lerp_axis(H, out_h);
  auto ax = detail::lerp_axis(W, out_w);
  const auto& xs = x.data();
  std::vector<T> out(static_cast<size_t>(N) * C * out_h * out_w);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = &xs[(static_cast<size_t>(n) * C + c) * H * W];
      T* dst = &out[(static_cast<size_t>(n) * C + c) * out_h * out_w];
      for (int i = 0; i < out_h; ++i) {
        T wy = static_cast<T>(ay.w_hi[static_cast<size_t>(i)]);
        int y0 = ay.lo[static_cast<size_t>(i)], y1 = ay.hi[static_cast<size_t>(i)];
        for (int j = 0; j < out_w; ++j) {
          T wx = static_cast<T>(ax.w_hi[static_cast<size_t>(j)]);
          int x0 = ax.lo[static_cast<size_t>(j)], x1 = ax.hi[static_cast<size_t>(j)];
          T v00 = src[static_cast<size_t>(y0) * W + x0];
          T v01 = src[static_cast<size_t>(y0) * W + x1];
          T v10 = src[static_cast<size_t>(y1) * W + x0];
          T v11 = src[static_cast<size_t>(y1) * W + x1];
          dst[static_cast<size_t>(i) * out_w + j] = (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) +
                                                    wy * ((T(1) - wx) * v10 + wx * v11);
        }
      }
    }
  auto xn = x.handle();
  return detail::make_op<T>(
      {N, C, out_h, out_w}, std::move(out), {x},
      [xn, ay, ax, N, C, H, W, out_h, out_w](const std::vector<T>& g, detail::GradMap<T>& m) {
        if (auto* gx = detail::sink(m, xn))
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              T* dst = &(*gx)[(static_cast<size_t>(n) * C + c) * H * W];
              const T* grow = &g[(static_cast<size_t>(n) * C + c) * out_h * out_w];
              for (int i = 0; i < out_h; ++i) {
                T wy = static_cast<T>(ay.w_hi[static_cast<size_t>(i)]);
                int y0 = ay.lo[static_cast<size_t>(i)], y1 = ay.hi[static_cast<size_t>(i)];
                for (int j = 0; j < out_w; ++j) {
                  T wx = static_cast<T>(ax.w_hi[static_cast<size_t>(j)]);
                  int x0 = ax.lo[static_cast<size_t>(j)], x1 = ax.hi[static_cast<size_t>(j)];
                  T gv = grow[static_cast<size_t>(i) * out_w + j];
                  dst[static_cast<size_t>(y0) * W + x0] += gv * (T(1) - wy) * (T(1) - wx);
                  dst[static_cast<size_t>(y0) * W + x1] += gv * (T(1) - wy) * wx;
                  dst[static_cast<size_t>(y1) * W + x0] += gv * wy * (T(1) - wx);
                  dst[static_cast<size_t>(y1) * W + x1] += gv * wy * wx;
                }
              }
            }
      });
}

// ---------------------------------------------------------------------------
// specialised normalisations

// Per-channel division by the spatial max (channel = axis 0). Channels whose
// max falls below the guard come out as zeros with no gradient.
template <typename T>
Tensor<T> normalize_per_channel(const Tensor<T>& x, T guard = static_cast<T>(1e-8)) {
  if (x.ndim() < 2)
    throw std::invalid_argument("normalize_per_channel: expected at least 2 dims, got " +
                                shape_str(x.shape()));
  int C = x.dim(0);
  int64_t inner = x.numel() / C;
  const auto& xs = x.data();
  std::vector<T> out(xs.size(), T(0));
  std::vector<T> maxv(static_cast<size_t>(C));
  std::vector<int64_t> argmax(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    const T* src = &xs[static_cast<size_t>(c) * inner];
    T best = src[0];
    int64_t arg = 0;
    for (int64_t i = 1; i < inner; ++i)
      if (src[i] > best) {
        best = src[i];
        arg = i;
      }
    maxv[static_cast<size_t>(c)] = best;
    argmax[static_cast<size_t>(c)] = arg;
    if (best >= guard) {
      T* dst = &out[static_cast<size_t>(c) * inner];
      for (int64_t i = 0; i < inner; ++i) dst[i] = src[i] / best;
    }
  }
  auto xn = x.handle();
  return detail::make_op<T>(
      x.shape(), std::move(out), {x},
      [xn, maxv, argmax, C, inner, guard](const std::vector<T>& g, detail::GradMap<T>& m) {
        if (auto* gx = detail::sink(m, xn))
          for (int c = 0; c < C; ++c) {
            T mx = maxv[static_cast<size_t>(c)];
            if (mx < guard) continue;
            const T* grow = &g[static_cast<size_t>(c) * inner];
            const T* src = &xn->data[static_cast<size_t>(c) * inner];
            T* dst = &(*gx)[static_cast<size_t>(c) * inner];
            T dot = 0;
            for (int64_t i = 0; i < inner; ++i) {
              dst[i] += grow[i] / mx;
              dot += grow[i] * src[i];
            }
            dst[argmax[static_cast<size_t>(c)]] -= dot / (mx * mx);
          }
      });
}

// Multiplies channel c (axis 0) by the constant weight w[c].
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const std::vector<T>& w) {
  if (x.ndim() < 1 || static_cast<int>(w.size()) != x.dim(0))
    throw std::invalid_argument("scale_channels: " + std::to_string(w.size()) +
                                " weights for shape " + shape_str(x.shape()));
  int C = x.dim(0);
  int64_t inner = x.numel() / C;
  const auto& xs = x.data();
  std::vector<T> out(xs.size());
  for (int c = 0; c < C; ++c)
    for (int64_t i = 0; i < inner; ++i)
      out[static_cast<size_t>(c) * inner + i] = xs[static_cast<size_t>(c) * inner + i] * w[static_cast<size_t>(c)];
  auto xn = x.handle();
  return detail::make_op<T>(x.shape(), std::move(out), {x},
                            [xn, w, C, inner](const std::vector<T>& g, detail::GradMap<T>& m) {
                              if (auto* gx = detail::sink(m, xn))
                                for (int c = 0; c < C; ++c)
                                  for (int64_t i = 0; i < inner; ++i)
                                    (*gx)[static_cast<size_t>(c) * inner + i] +=
                                        g[static_cast<size_t>(c) * inner + i] * w[static_cast<size_t>(c)];
                            });
}

// Scales every column of a matrix to unit L1 norm. Columns whose norm falls
// below the guard are left as zeros (no gradient there).
template <typename T>
Tensor<T> l1_normalize_columns(const Tensor<T>& x, T guard = static_cast<T>(1e-12)) {
  if (x.ndim() != 2)
    throw std::invalid_argument("l1_normalize_columns: expected a matrix, got " +
                                shape_str(x.shape()));
  int R = x.dim(0), Ccol = x.dim(1);
  const auto& xs = x.data();
  std::vector<T> norm(static_cast<size_t>(Ccol), T(0));
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < Ccol; ++j) norm[static_cast<size_t>(j)] += std::abs(xs[static_cast<size_t>(r) * Ccol + j]);
  std::vector<T> out(xs.size(), T(0));
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < Ccol; ++j)
      if (norm[static_cast<size_t>(j)] >= guard)
        out[static_cast<size_t>(r) * Ccol + j] = xs[static_cast<size_t>(r) * Ccol + j] / norm[static_cast<size_t>(j)];
  auto xn = x.handle();
  return detail::make_op<T>(
      x.shape(), std::move(out), {x},
      [xn, norm, R, Ccol, guard](const std::vector<T>& g, detail::GradMap<T>& m) {
        if (auto* gx = detail::sink(m, xn))
          for (int j = 0; j < Ccol; ++j) {
            T nj = norm[static_cast<size_t>(j)];
            if (nj < guard) continue;
            T dot = 0;
            for (int r = 0; r < R; ++r)
              dot += g[static_cast<size_t>(r) * Ccol + j] * xn->data[static_cast<size_t>(r) * Ccol + j];
            for (int r = 0; r < R; ++r) {
              T v = xn->data[static_cast<size_t>(r) * Ccol + j];
              T sign = v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
              (*gx)[static_cast<size_t>(r) * Ccol + j] +=
                  g[static_cast<size_t>(r) * Ccol + j] / nj - dot * sign / (nj * nj);
            }
          }
      });
}

// Scales every column of a non-negative matrix to sum 1 (column-stochastic).
// All-zero columns become uniform 1/rows and propagate no gradient.
template <typename T>
Tensor<T> normalize_columns_sum(const Tensor<T>& x, T guard = static_cast<T>(1e-12)) {
  if (x.ndim() != 2)
    throw std::invalid_argument("normalize_columns_sum: expected a matrix, got " +
                                shape_str(x.shape()));
  int R = x.dim(0), Ccol = x.dim(1);
  const auto& xs = x.data();
  std::vector<T> sum(static_cast<size_t>(Ccol), T(0));
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < Ccol; ++j) sum[static_cast<size_t>(j)] += xs[static_cast<size_t>(r) * Ccol + j];
  std::vector<T> out(xs.size());
  T unif = T(1) / static_cast<T>(R);
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < Ccol; ++j)
      out[static_cast<size_t>(r) * Ccol + j] =
          sum[static_cast<size_t>(j)] >= guard ? xs[static_cast<size_t>(r) * Ccol + j] / sum[static_cast<size_t>(j)] : unif;
  auto xn = x.handle();
  return detail::make_op<T>(
      x.shape(), std::move(out), {x},
      [xn, sum, R, Ccol, guard](const std::vector<T>& g, detail::GradMap<T>& m) {
        if (auto* gx = detail::sink(m, xn))
          for (int j = 0; j < Ccol; ++j) {
            T sj = sum[static_cast<size_t>(j)];
            if (sj < guard) continue;
            T dot = 0;
            for (int r = 0; r < R; ++r)
              dot += g[static_cast<size_t>(r) * Ccol + j] * xn->data[static_cast<size_t>(r) * Ccol + j];
            for (int r = 0; r < R; ++r)
              (*gx)[static_cast<size_t>(r) * Ccol + j] +=
                  g[static_cast<size_t>(r) * Ccol + j] / sj - dot / (sj * sj);
          }
      });
}

// Mean of the k largest elements, k = ceil(frac * numel). Ties are broken
// toward the lower flat index; gradient 1/k flows to each selected element.
template <typename T>
Tensor<T> topk_mean(const Tensor<T>& x, double frac) {
  if (!(frac > 0.0) || frac > 1.0)
    throw std::invalid_argument("topk_mean: frac must lie in (0, 1], got " + std::to_string(frac));
  int64_t n = x.numel();
  int64_t k = static_cast<int64_t>(std::ceil(frac * static_cast<double>(n)));
  if (k < 1) k = 1;
  const auto& xs = x.data();
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&xs](int64_t a, int64_t b) { return xs[static_cast<size_t>(a)] > xs[static_cast<size_t>(b)]; });
  idx.resize(static_cast<size_t>(k));
  T acc = 0;
  for (int64_t i : idx) acc += xs[static_cast<size_t>(i)];
  T out = acc / static_cast<T>(k);
  auto xn = x.handle();
  return detail::make_op<T>({1}, {out}, {x},
                            [xn, idx, k](const std::vector<T>& g, detail::GradMap<T>& m) {
                              if (auto* gx = detail::sink(m, xn)) {
                                T gv = g[0] / static_cast<T>(k);
                                for (int64_t i : idx) (*gx)[static_cast<size_t>(i)] += gv;
                              }
                            });
}

// ---------------------------------------------------------------------------
// finite differences

// Central-difference check of the analytic gradient of scalar-valued f at x.
// Returns the max over coordinates of |analytic - numeric| / (|analytic| + 1e-8).
// When no gradient reaches x at all (for example because f detaches it), the
// analytic gradient is identically zero and the check is skipped (returns 0).
template <typename T>
double finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                         double eps = 1e-5) {
  if (eps < 1e-7 || eps > 1e-3)
    throw std::invalid_argument("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  Tensor<T> probe = Tensor<T>::from_data(x.shape(), x.data(), true);
  Tensor<T> y = f(probe);
  if (y.numel() != 1)
    throw std::invalid_argument("finite_diff_check: f must produce a scalar, got shape " +
                                shape_str(y.shape()));
  y.backward();
  const auto& analytic = probe.grad();
  bool any = false;
  for (T v : analytic)
    if (v != T(0)) any = true;
  if (!any) return 0.0;

  double worst = 0.0;
  std::vector<T> base = x.data();
  for (size_t i = 0; i < base.size(); ++i) {
    std::vector<T> lo = base, hi = base;
    hi[i] += static_cast<T>(eps);
    lo[i] -= static_cast<T>(eps);
    double f_hi = static_cast<double>(f(Tensor<T>::from_data(x.shape(), hi)).value());
    double f_lo = static_cast<double>(f(Tensor<T>::from_data(x.shape(), lo)).value());
    double numeric = (f_hi - f_lo) / (2.0 * eps);
    double a = static_cast<double>(analytic[i]);
    double err = std::abs(a - numeric) / (std::abs(a) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace cpn
