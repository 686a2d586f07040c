#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "siammae/rng.hpp"

namespace siammae {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

// Disables graph construction in scope. Forward values are still computed.
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// Dense n-d array with an optional reverse-mode tape node. Value buffers are
// immutable after construction except through the optimizer; grad buffers
// accumulate across backward() calls until zero_grad().
template <typename S>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
      if (grad.empty()) grad.assign(value.size(), S(0));
    }
  };
  using NodePtr = std::shared_ptr<Node>;

  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape) {
    return filled(std::move(shape), S(0));
  }

  static Tensor filled(Shape shape, S v) {
    auto n = std::make_shared<Node>();
    const int64_t cnt = shape_numel(shape);
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(cnt), v);
    return Tensor(std::move(n));
  }

  static Tensor from_data(Shape shape, std::vector<S> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v) { return from_data({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    const int64_t cnt = shape_numel(shape);
    std::vector<S> d(static_cast<size_t>(cnt));
    for (auto& x : d) x = static_cast<S>(rng.normal(0.0, stddev));
    return from_data(std::move(shape), std::move(d));
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    const int64_t cnt = shape_numel(shape);
    std::vector<S> d(static_cast<size_t>(cnt));
    for (auto& x : d) x = static_cast<S>(rng.uniform(lo, hi));
    return from_data(std::move(shape), std::move(d));
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int64_t numel() const { return n_->numel(); }

  const std::vector<S>& value() const { return n_->value; }
  // Raw mutable access; reserved for leaf initialization and the optimizer.
  std::vector<S>& raw_value() { return n_->value; }
  const std::vector<S>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool rg = true) {
    n_->requires_grad = rg;
    return *this;
  }

  void zero_grad() { n_->grad.assign(n_->value.size(), S(0)); }

  S item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
  }

  S at(std::initializer_list<int> idx) const {
    int64_t off = 0;
    size_t i = 0;
    for (int v : idx) {
      off = off * n_->shape[i] + v;
      ++i;
    }
    return n_->value[static_cast<size_t>(off)];
  }

  NodePtr node() const { return n_; }

 private:
  NodePtr n_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---- graph construction -------------------------------------------------

template <typename S>
Tensor<S> make_op(Shape shape, std::vector<S> value,
                  const std::vector<Tensor<S>>& inputs,
                  std::function<void(typename Tensor<S>::Node&)> backward) {
  auto n = std::make_shared<typename Tensor<S>::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled()) {
    bool rg = false;
    for (const auto& t : inputs) rg = rg || t.requires_grad();
    if (rg) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (const auto& t : inputs) n->parents.push_back(t.node());
      n->backward = std::move(backward);
    }
  }
  return Tensor<S>(std::move(n));
}

// Accumulates reverse-order gradients from a scalar loss. Grads add across
// calls; callers zero them explicitly between steps.
template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  using Node = typename Tensor<S>::Node;
  // Iterative post-order DFS; graphs are deep enough that recursion is unsafe.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Interior grads are scratch for this pass; only leaves accumulate across calls.
  for (Node* n : order)
    if (!n->parents.empty()) n->grad.assign(n->value.size(), S(0));
  loss.node()->ensure_grad();
  loss.node()->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->requires_grad) n->backward(*n);
  }
}

// ---- broadcasting -------------------------------------------------------
//
// Supported forms: identical shapes, scalar against anything, and a shape
// that equals the trailing axes of the other operand.

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename S>
void accumulate_broadcast_grad(typename Tensor<S>::Node& parent,
                               const std::vector<S>& grad_out) {
  parent.ensure_grad();
  const size_t pn = parent.value.size();
  if (pn == grad_out.size()) {
    for (size_t i = 0; i < pn; ++i) parent.grad[i] += grad_out[i];
  } else {
    // Sum over the broadcast leading block.
    for (size_t i = 0; i < grad_out.size(); ++i) parent.grad[i % pn] += grad_out[i];
  }
}

template <typename S, typename Fwd>
std::vector<S> broadcast_apply(const Tensor<S>& a, const Tensor<S>& b, Fwd f,
                               const char* opname) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (a.shape() == b.shape()) {
    std::vector<S> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    return out;
  }
  if (b.numel() == 1 || is_suffix(b.shape(), a.shape())) {
    std::vector<S> out(av.size());
    const size_t bn = bv.size();
    for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i % bn]);
    return out;
  }
  throw ShapeError(std::string(opname) + ": shapes not broadcastable " +
                   shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Returns (larger, smaller, swapped) ordering for commutative-broadcast ops.
template <typename S>
std::pair<const Tensor<S>*, const Tensor<S>*> order_by_size(const Tensor<S>& a,
                                                            const Tensor<S>& b,
                                                            bool& swapped) {
  swapped = b.numel() > a.numel() ||
            (a.numel() == b.numel() && b.ndim() > a.ndim());
  return swapped ? std::make_pair(&b, &a) : std::make_pair(&a, &b);
}

}  // namespace detail

// ---- elementwise ---------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  bool swapped = false;
  auto [big, small] = detail::order_by_size(a, b, swapped);
  auto out = detail::broadcast_apply(*big, *small, [](S x, S y) { return x + y; }, "add");
  return make_op<S>(big->shape(), std::move(out), {a, b},
                    [](typename Tensor<S>::Node& n) {
                      for (auto& p : n.parents)
                        if (p->requires_grad) detail::accumulate_broadcast_grad<S>(*p, n.grad);
                    });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  bool swapped = false;
  auto [big, small] = detail::order_by_size(a, b, swapped);
  std::vector<S> out =
      swapped ? detail::broadcast_apply(*big, *small, [](S x, S y) { return y - x; }, "sub")
              : detail::broadcast_apply(*big, *small, [](S x, S y) { return x - y; }, "sub");
  return make_op<S>(big->shape(), std::move(out), {a, b},
                    [](typename Tensor<S>::Node& n) {
                      auto& pa = *n.parents[0];
                      auto& pb = *n.parents[1];
                      if (pa.requires_grad) detail::accumulate_broadcast_grad<S>(pa, n.grad);
                      if (pb.requires_grad) {
                        std::vector<S> neg(n.grad.size());
                        for (size_t i = 0; i < neg.size(); ++i) neg[i] = -n.grad[i];
                        detail::accumulate_broadcast_grad<S>(pb, neg);
                      }
                    });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  bool swapped = false;
  auto [big, small] = detail::order_by_size(a, b, swapped);
  auto out = detail::broadcast_apply(*big, *small, [](S x, S y) { return x * y; }, "mul");
  // Capture value copies so backward stays valid if leaves are later mutated.
  return make_op<S>(big->shape(), std::move(out), {a, b},
                    [](typename Tensor<S>::Node& n) {
                      auto& pa = *n.parents[0];
                      auto& pb = *n.parents[1];
                      const auto* bigp = &pa;
                      const auto* smallp = &pb;
                      if (pb.value.size() > pa.value.size()) std::swap(bigp, smallp);
                      const size_t bn = smallp->value.size();
                      if (pa.requires_grad) {
                        std::vector<S> g(n.grad.size());
                        if (&pa == bigp) {
                          for (size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * pb.value[i % bn];
                        } else {
                          for (size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * bigp->value[i];
                        }
                        detail::accumulate_broadcast_grad<S>(pa, g);
                      }
                      if (pb.requires_grad) {
                        std::vector<S> g(n.grad.size());
                        if (&pb == bigp) {
                          for (size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * pa.value[i % bn];
                        } else {
                          for (size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * bigp->value[i];
                        }
                        detail::accumulate_broadcast_grad<S>(pb, g);
                      }
                    });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  return make_op<S>(a.shape(), std::move(out), {a},
                    [c](typename Tensor<S>::Node& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      p.ensure_grad();
                      for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += c * n.grad[i];
                    });
}

template <typename S, typename FwdV, typename BwdV>
Tensor<S> unary_op(const Tensor<S>& a, FwdV f, BwdV dfdx_times) {
  std::vector<S> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.value()[i]);
  auto out_copy = out;  // some derivatives reuse the output value
  return make_op<S>(a.shape(), std::move(out), {a},
                    [dfdx_times, out_copy](typename Tensor<S>::Node& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      p.ensure_grad();
                      for (size_t i = 0; i < n.grad.size(); ++i)
                        p.grad[i] += dfdx_times(p.value[i], out_copy[i]) * n.grad[i];
                    });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt_2pi = 0.3989422804014326779;
  return unary_op(
      a, [](S x) { return static_cast<S>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2))); },
      [](S x, S) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * double(x) * double(x));
        return static_cast<S>(cdf + x * pdf);
      });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  return unary_op(a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  return unary_op(a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& a) {
  return unary_op(a, [](S x) { return std::sqrt(x); },
                  [](S, S y) { return S(0.5) / y; });
}

// ---- matmul ---------------------------------------------------------------

namespace detail {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<EMat<S>>;
template <typename S>
using CMatMap = Eigen::Map<const EMat<S>>;

struct MatmulDims {
  int m, k, n;          // effective contraction extents
  int64_t batch;        // number of batched matrices on the output
  bool a_batched, b_batched;
};

inline MatmulDims matmul_dims(const Shape& sa, const Shape& sb, bool ta, bool tb) {
  if (sa.size() < 2 || sb.size() < 2)
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " +
                     shape_str(sb));
  const int ar = sa[sa.size() - 2], ac = sa[sa.size() - 1];
  const int br = sb[sb.size() - 2], bc = sb[sb.size() - 1];
  MatmulDims d;
  d.m = ta ? ac : ar;
  d.k = ta ? ar : ac;
  const int k2 = tb ? bc : br;
  d.n = tb ? br : bc;
  if (d.k != k2)
    throw ShapeError("matmul: inner extents differ, " + shape_str(sa) + (ta ? "^T" : "") +
                     " vs " + shape_str(sb) + (tb ? "^T" : ""));
  Shape abatch(sa.begin(), sa.end() - 2), bbatch(sb.begin(), sb.end() - 2);
  if (!abatch.empty() && !bbatch.empty() && abatch != bbatch)
    throw ShapeError("matmul: batch extents differ, " + shape_str(sa) + " vs " + shape_str(sb));
  d.a_batched = !abatch.empty();
  d.b_batched = !bbatch.empty();
  d.batch = std::max<int64_t>(shape_numel(abatch), shape_numel(bbatch));
  return d;
}

}  // namespace detail

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool trans_a = false,
                 bool trans_b = false) {
  const auto d = detail::matmul_dims(a.shape(), b.shape(), trans_a, trans_b);
  const Shape& batch_shape = d.a_batched
                                 ? Shape(a.shape().begin(), a.shape().end() - 2)
                                 : Shape(b.shape().begin(), b.shape().end() - 2);
  Shape out_shape = batch_shape;
  out_shape.push_back(d.m);
  out_shape.push_back(d.n);

  const int ar = a.dim(a.ndim() - 2), ac = a.dim(a.ndim() - 1);
  const int br = b.dim(b.ndim() - 2), bc = b.dim(b.ndim() - 1);
  const int64_t a_stride = d.a_batched ? int64_t(ar) * ac : 0;
  const int64_t b_stride = d.b_batched ? int64_t(br) * bc : 0;

  std::vector<S> out(static_cast<size_t>(d.batch) * d.m * d.n);
  for (int64_t i = 0; i < d.batch; ++i) {
    detail::CMatMap<S> A(a.value().data() + i * a_stride, ar, ac);
    detail::CMatMap<S> B(b.value().data() + i * b_stride, br, bc);
    detail::MatMap<S> C(out.data() + i * int64_t(d.m) * d.n, d.m, d.n);
    if (!trans_a && !trans_b)
      C.noalias() = A * B;
    else if (trans_a && !trans_b)
      C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A.transpose() * B.transpose();
  }

  auto bw = [d, ar, ac, br, bc, a_stride, b_stride, trans_a,
             trans_b](typename Tensor<S>::Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (int64_t i = 0; i < d.batch; ++i) {
      detail::CMatMap<S> G(n.grad.data() + i * int64_t(d.m) * d.n, d.m, d.n);
      detail::CMatMap<S> A(pa.value.data() + i * a_stride, ar, ac);
      detail::CMatMap<S> B(pb.value.data() + i * b_stride, br, bc);
      if (pa.requires_grad) {
        detail::MatMap<S> dA(pa.grad.data() + i * a_stride, ar, ac);
        // dA' = G * B'^T with A' = op(A); undo the transpose on accumulate.
        if (!trans_a) {
          if (!trans_b)
            dA.noalias() += G * B.transpose();
          else
            dA.noalias() += G * B;
        } else {
          if (!trans_b)
            dA.noalias() += B * G.transpose();
          else
            dA.noalias() += B.transpose() * G.transpose();
        }
      }
      if (pb.requires_grad) {
        detail::MatMap<S> dB(pb.grad.data() + i * b_stride, br, bc);
        if (!trans_b) {
          if (!trans_a)
            dB.noalias() += A.transpose() * G;
          else
            dB.noalias() += A * G;
        } else {
          if (!trans_a)
            dB.noalias() += G.transpose() * A;
          else
            dB.noalias() += G.transpose() * A.transpose();
        }
      }
    }
  };
  return make_op<S>(std::move(out_shape), std::move(out), {a, b}, std::move(bw));
}

// ---- softmax / layer norm / reductions ------------------------------------

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  if (axis < 0 || axis >= x.ndim())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  const auto& sh = x.shape();
  const int64_t ax = sh[static_cast<size_t>(axis)];
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= sh[static_cast<size_t>(i)];
  for (int i = 0; i < axis; ++i) outer *= sh[static_cast<size_t>(i)];

  std::vector<S> out(x.value().size());
  const auto& v = x.value();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * ax * inner + in;
      S mx = v[static_cast<size_t>(base)];
      for (int64_t j = 1; j < ax; ++j) mx = std::max(mx, v[static_cast<size_t>(base + j * inner)]);
      S sum = S(0);
      for (int64_t j = 0; j < ax; ++j) {
        const S e = std::exp(v[static_cast<size_t>(base + j * inner)] - mx);
        out[static_cast<size_t>(base + j * inner)] = e;
        sum += e;
      }
      const S inv = S(1) / sum;
      for (int64_t j = 0; j < ax; ++j) out[static_cast<size_t>(base + j * inner)] *= inv;
    }
  }
  auto y = out;
  auto bw = [ax, inner, outer, y](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * ax * inner + in;
        S dot = S(0);
        for (int64_t j = 0; j < ax; ++j) {
          const size_t idx = static_cast<size_t>(base + j * inner);
          dot += n.grad[idx] * y[idx];
        }
        for (int64_t j = 0; j < ax; ++j) {
          const size_t idx = static_cast<size_t>(base + j * inner);
          p.grad[idx] += y[idx] * (n.grad[idx] - dot);
        }
      }
    }
  };
  return make_op<S>(x.shape(), std::move(out), {x}, std::move(bw));
}

// Normalizes over the last axis, then applies the affine gain/bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps = 1e-6) {
  const int d = x.dim(x.ndim() - 1);
  if (gain.numel() != d || bias.numel() != d)
    throw ShapeError("layer_norm: gain/bias length must equal last extent " + std::to_string(d));
  const int64_t rows = x.numel() / d;
  const auto& v = x.value();
  std::vector<S> out(v.size());
  std::vector<S> xhat(v.size());
  std::vector<S> inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const S* row = v.data() + r * d;
    S mu = S(0);
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= S(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) {
      const S c = row[j] - mu;
      var += c * c;
    }
    var /= S(d);
    const S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
    inv_std[static_cast<size_t>(r)] = inv;
    for (int j = 0; j < d; ++j) {
      const size_t idx = static_cast<size_t>(r * d + j);
      xhat[idx] = (row[j] - mu) * inv;
      out[idx] = xhat[idx] * gain.value()[static_cast<size_t>(j)] +
                 bias.value()[static_cast<size_t>(j)];
    }
  }
  auto bw = [rows, d, xhat, inv_std](typename Tensor<S>::Node& n) {
    auto& px = *n.parents[0];
    auto& pg = *n.parents[1];
    auto& pb = *n.parents[2];
    if (px.requires_grad) px.ensure_grad();
    if (pg.requires_grad) pg.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const int64_t base = r * d;
      if (pg.requires_grad || pb.requires_grad) {
        for (int j = 0; j < d; ++j) {
          const size_t idx = static_cast<size_t>(base + j);
          if (pg.requires_grad) pg.grad[static_cast<size_t>(j)] += n.grad[idx] * xhat[idx];
          if (pb.requires_grad) pb.grad[static_cast<size_t>(j)] += n.grad[idx];
        }
      }
      if (px.requires_grad) {
        S mean_dy = S(0), mean_dyx = S(0);
        for (int j = 0; j < d; ++j) {
          const size_t idx = static_cast<size_t>(base + j);
          const S dy = n.grad[idx] * pg.value[static_cast<size_t>(j)];
          mean_dy += dy;
          mean_dyx += dy * xhat[idx];
        }
        mean_dy /= S(d);
        mean_dyx /= S(d);
        const S inv = inv_std[static_cast<size_t>(r)];
        for (int j = 0; j < d; ++j) {
          const size_t idx = static_cast<size_t>(base + j);
          const S dy = n.grad[idx] * pg.value[static_cast<size_t>(j)];
          px.grad[idx] += inv * (dy - mean_dy - xhat[idx] * mean_dyx);
        }
      }
    }
  };
  return make_op<S>(x.shape(), std::move(out), {x, gain, bias}, std::move(bw));
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.value()) acc += v;
  return make_op<S>({1}, {acc}, {x}, [](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const S g = n.grad[0];
    for (auto& gv : p.grad) gv += g;
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  const S inv = S(1) / static_cast<S>(x.numel());
  S acc = S(0);
  for (S v : x.value()) acc += v;
  acc *= inv;
  return make_op<S>({1}, {acc}, {x}, [inv](typename Tensor<S>::Node& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const S g = n.grad[0] * inv;
    for (auto& gv : p.grad) gv += g;
  });
}

// ---- structural ops --------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto out = x.value();
  return make_op<S>(std::move(shape), std::move(out), {x},
                    [](typename Tensor<S>::Node& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      p.ensure_grad();
                      for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
                    });
}

namespace detail {
inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
  return st;
}
}  // namespace detail

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& axes) {
  const int nd = x.ndim();
  if (static_cast<int>(axes.size()) != nd)
    throw ShapeError("permute: axes rank mismatch for " + shape_str(x.shape()));
  Shape out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  const auto in_strides = detail::row_major_strides(x.shape());
  const auto out_strides = detail::row_major_strides(out_shape);
  // map from output linear index to input linear index
  std::vector<S> out(x.value().size());
  const int64_t total = x.numel();
  std::vector<int64_t> src_stride_for_out(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i)
    src_stride_for_out[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  std::vector<int64_t> mapping(static_cast<size_t>(total));
  for (int64_t o = 0; o < total; ++o) {
    int64_t rem = o, src = 0;
    for (int i = 0; i < nd; ++i) {
      const int64_t q = rem / out_strides[static_cast<size_t>(i)];
      rem -= q * out_strides[static_cast<size_t>(i)];
      src += q * src_stride_for_out[static_cast<size_t>(i)];
    }
    mapping[static_cast<size_t>(o)] = src;
    out[static_cast<size_t>(o)] = x.value()[static_cast<size_t>(src)];
  }
  return make_op<S>(std::move(out_shape), std::move(out), {x},
                    [mapping](typename Tensor<S>::Node& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      p.ensure_grad();
                      for (size_t o = 0; o < mapping.size(); ++o)
                        p.grad[static_cast<size_t>(mapping[o])] += n.grad[o];
                    });
}

// Concatenates 2D blocks along axis 0. All blocks must share the column count.
template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input");
  const int cols = parts[0].dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(1) != cols)
      throw ShapeError("concat_rows: inconsistent shapes, expected [*," + std::to_string(cols) +
                       "] got " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  std::vector<S> out;
  out.reserve(static_cast<size_t>(rows) * cols);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return make_op<S>({rows, cols}, std::move(out), parts,
                    [](typename Tensor<S>::Node& n) {
                      size_t off = 0;
                      for (auto& p : n.parents) {
                        const size_t cnt = p->value.size();
                        if (p->requires_grad) {
                          p->ensure_grad();
                          for (size_t i = 0; i < cnt; ++i) p->grad[i] += n.grad[off + i];
                        }
                        off += cnt;
                      }
                    });
}

// Selects rows of a 2D tensor. Gradient scatters back additively.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, std::vector<int> idx) {
  if (x.ndim() != 2) throw ShapeError("gather_rows: expected 2D tensor, got " + shape_str(x.shape()));
  const int cols = x.dim(1);
  for (int i : idx)
    if (i < 0 || i >= x.dim(0))
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       shape_str(x.shape()));
  std::vector<S> out(idx.size() * static_cast<size_t>(cols));
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.value().data() + static_cast<int64_t>(idx[r]) * cols, cols,
                out.data() + static_cast<int64_t>(r) * cols);
  return make_op<S>({static_cast<int>(idx.size()), cols}, std::move(out), {x},
                    [idx, cols](typename Tensor<S>::Node& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      p.ensure_grad();
                      for (size_t r = 0; r < idx.size(); ++r)
                        for (int c = 0; c < cols; ++c)
                          p.grad[static_cast<size_t>(idx[r]) * cols + c] +=
                              n.grad[r * static_cast<size_t>(cols) + c];
                    });
}

// Places rows into an n_rows x cols zero tensor at the given (unique) indices.
template <typename S>
Tensor<S> scatter_rows(int n_rows, const std::vector<int>& idx, const Tensor<S>& rows) {
  if (rows.ndim() != 2 || static_cast<int>(idx.size()) != rows.dim(0))
    throw ShapeError("scatter_rows: index count must match rows, got " +
                     std::to_string(idx.size()) + " vs " + shape_str(rows.shape()));
  const int cols = rows.dim(1);
  std::vector<S> out(static_cast<size_t>(n_rows) * cols, S(0));
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= n_rows)
      throw ShapeError("scatter_rows: index " + std::to_string(idx[r]) + " out of range");
    std::copy_n(rows.value().data() + static_cast<int64_t>(r) * cols, cols,
                out.data() + static_cast<int64_t>(idx[r]) * cols);
  }
  auto idx_copy = idx;
  return make_op<S>({n_rows, cols}, std::move(out), {rows},
                    [idx_copy, cols](typename Tensor<S>::Node& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      p.ensure_grad();
                      for (size_t r = 0; r < idx_copy.size(); ++r)
                        for (int c = 0; c < cols; ++c)
                          p.grad[r * static_cast<size_t>(cols) + c] +=
                              n.grad[static_cast<size_t>(idx_copy[r]) * cols + c];
                    });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

// ---- gradient checking ------------------------------------------------------
//
// Compares the analytic gradient of a scalar-valued function against central
// finite differences. Reports errors instead of throwing on mismatch.

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool ok = true;
  std::vector<double> per_input_max;  // one entry per checked input
  int64_t coords_checked = 0;
};

// When max_coords_per_input > 0, only that many coordinates per input are
// finite-differenced (chosen by `rng`); the analytic pass still covers all.
template <typename S>
GradCheckReport grad_check(
    const std::function<Tensor<S>(const std::vector<Tensor<S>>&)>& f,
    std::vector<Tensor<S>> inputs, double tol, double step = 1e-5,
    int64_t max_coords_per_input = 0, Rng* rng = nullptr) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<S> loss = f(inputs);
  if (loss.numel() != 1) throw ShapeError("grad_check: f must be scalar-valued");
  backward(loss);

  GradCheckReport rep;
  for (auto& t : inputs) {
    double input_max = 0.0;
    auto& vals = t.raw_value();
    const auto& analytic = t.grad();
    std::vector<size_t> coords;
    if (max_coords_per_input > 0 && rng &&
        static_cast<int64_t>(vals.size()) > max_coords_per_input) {
      for (int64_t c = 0; c < max_coords_per_input; ++c)
        coords.push_back(static_cast<size_t>(rng->uniform_int(static_cast<int64_t>(vals.size()))));
    } else {
      coords.resize(vals.size());
      std::iota(coords.begin(), coords.end(), size_t{0});
    }
    for (size_t i : coords) {
      const double orig = static_cast<double>(vals[i]);
      const double h = step * std::max(1.0, std::abs(orig));
      double fp, fm;
      {
        NoGradGuard ng;
        vals[i] = static_cast<S>(orig + h);
        fp = static_cast<double>(f(inputs).item());
        vals[i] = static_cast<S>(orig - h);
        fm = static_cast<double>(f(inputs).item());
        vals[i] = static_cast<S>(orig);
      }
      const double fd = (fp - fm) / (2.0 * h);
      const double an = static_cast<double>(analytic[i]);
      const double denom = std::max({1.0, std::abs(an), std::abs(fd)});
      const double rel = std::abs(an - fd) / denom;
      input_max = std::max(input_max, rel);
      ++rep.coords_checked;
    }
    rep.per_input_max.push_back(input_max);
    rep.max_rel_err = std::max(rep.max_rel_err, input_max);
  }
  rep.ok = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace siammae
