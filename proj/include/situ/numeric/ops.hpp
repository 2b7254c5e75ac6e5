#pragma once

// Differentiable operations over Graph nodes. Every op computes its value
// eagerly and registers a closure that distributes the output gradient.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "situ/numeric/graph.hpp"

namespace situ::numeric {

namespace detail {

inline void require(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw NumericError(std::string(op) + ": " + msg);
}

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <class Real>
void add_into(Tensor<Real>& dst, const Tensor<Real>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class Real>
Real max_of(std::span<const Real> x) {
  return *std::max_element(x.begin(), x.end());
}

}  // namespace detail

/// a + b for equal shapes; a matrix plus a vector broadcasts over rows.
template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  auto& g = *a.graph;
  const auto& x = a.value();
  const auto& y = b.value();
  if (x.shape() == y.shape()) {
    Tensor<Real> out = x;
    detail::add_into(out, y);
    return g.make(std::move(out), {a, b}, [a, b](Graph<Real>& g, std::size_t id) {
      if (g.needs_grad(a)) detail::add_into(g.grad(a), g.grad(id));
      if (g.needs_grad(b)) detail::add_into(g.grad(b), g.grad(id));
    }, "add");
  }
  detail::require(x.rank() == 2 && y.rank() == 1 && y.size() == x.cols(), "add",
                  "shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  Tensor<Real> out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) += y[c];
  return g.make(std::move(out), {a, b}, [a, b](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    if (g.needs_grad(a)) detail::add_into(g.grad(a), go);
    if (g.needs_grad(b)) {
      auto& gb = g.grad(b);
      for (std::size_t r = 0; r < go.rows(); ++r)
        for (std::size_t c = 0; c < go.cols(); ++c) gb[c] += go.at(r, c);
    }
  }, "add");
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  auto& g = *a.graph;
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return g.make(std::move(out), {a, b}, [a, b](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    if (g.needs_grad(a)) detail::add_into(g.grad(a), go);
    if (g.needs_grad(b)) {
      auto& gb = g.grad(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  }, "sub");
}

template <class Real>
Var<Real> elementwise_mul(Var<Real> a, Var<Real> b) {
  auto& g = *a.graph;
  detail::require_same_shape(a.value(), b.value(), "elementwise_mul");
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return g.make(std::move(out), {a, b}, [a, b](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    if (g.needs_grad(a)) {
      auto& ga = g.grad(a);
      const auto& y = g.value(b);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
    }
    if (g.needs_grad(b)) {
      auto& gb = g.grad(b);
      const auto& x = g.value(a);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * x[i];
    }
  }, "elementwise_mul");
}

template <class Real>
Var<Real> scale(Var<Real> a, Real s) {
  auto& g = *a.graph;
  Tensor<Real> out = a.value();
  for (auto& x : out.span()) x *= s;
  return g.make(std::move(out), {a}, [a, s](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
  }, "scale");
}

/// [m x k] * [k x n] -> [m x n], or [m x k] * [k] -> [m].
template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  auto& g = *a.graph;
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.rank() == 2 && (B.rank() == 1 || B.rank() == 2) && A.cols() == B.rows(), "matmul",
                  "shape mismatch " + shape_string(A.shape()) + " * " + shape_string(B.shape()));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<Real> out(B.rank() == 1 ? Shape{m} : Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = A.span().data() + i * k;
    Real* orow = out.span().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = arow[p];
      const Real* brow = B.span().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return g.make(std::move(out), {a, b}, [a, b, m, k, n](Graph<Real>& g, std::size_t id) {
    const Real* go = g.grad(id).span().data();
    if (g.needs_grad(a)) {
      Real* ga = g.grad(a).span().data();
      const Real* B = g.value(b).span().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          Real acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * B[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (g.needs_grad(b)) {
      Real* gb = g.grad(b).span().data();
      const Real* A = g.value(a).span().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const Real aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * go[i * n + j];
        }
    }
  }, "matmul");
}

template <class Real>
Var<Real> transpose(Var<Real> a) {
  auto& g = *a.graph;
  const auto& A = a.value();
  detail::require(A.rank() == 2, "transpose", "expects a matrix");
  const std::size_t m = A.rows(), n = A.cols();
  Tensor<Real> out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
  return g.make(std::move(out), {a}, [a, m, n](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += go.at(j, i);
  }, "transpose");
}

template <class Real>
Var<Real> concat(const std::vector<Var<Real>>& parts) {
  detail::require(!parts.empty(), "concat", "no inputs");
  auto& g = *parts.front().graph;
  std::vector<Real> data;
  for (auto p : parts) {
    detail::require(p.value().rank() <= 1, "concat", "expects vectors");
    data.insert(data.end(), p.value().span().begin(), p.value().span().end());
  }
  std::vector<Var<Real>> ins = parts;
  Tensor<Real> out = Tensor<Real>::vector(std::move(data));
  bool needs = false;
  for (auto p : parts) needs = needs || g.needs_grad(p);
  // make() takes an initializer list; route the dependency through the first
  // input and gather the rest inside the closure.
  Var<Real> anchor = parts.front();
  for (auto p : parts)
    if (g.needs_grad(p)) anchor = p;
  return g.make(std::move(out), {anchor}, [ins](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    std::size_t off = 0;
    for (auto p : ins) {
      std::size_t len = g.value(p).size();
      if (g.needs_grad(p)) {
        auto& gp = g.grad(p);
        for (std::size_t i = 0; i < len; ++i) gp[i] += go[off + i];
      }
      off += len;
    }
  }, "concat");
}

template <class Real>
Var<Real> slice(Var<Real> a, std::size_t begin, std::size_t len) {
  auto& g = *a.graph;
  const auto& x = a.value();
  detail::require(x.rank() == 1 && begin + len <= x.size(), "slice", "range out of bounds");
  Tensor<Real> out = Tensor<Real>::vector({x.span().begin() + begin, x.span().begin() + begin + len});
  return g.make(std::move(out), {a}, [a, begin, len](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < len; ++i) ga[begin + i] += go[i];
  }, "slice");
}

namespace detail {

template <class Real, class F, class DF>
Var<Real> unary(Var<Real> a, F f, DF df_from_output, const char* op) {
  auto& g = *a.graph;
  Tensor<Real> out = a.value();
  for (auto& x : out.span()) x = f(x);
  return g.make(std::move(out), {a}, [a, df_from_output](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    const auto& y = g.value(Var<Real>{&g, id});
    const auto& x = g.value(a);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * df_from_output(x[i], y[i]);
  }, op);
}

}  // namespace detail

template <class Real>
Var<Real> sigmoid(Var<Real> a) {
  return detail::unary(
      a, [](Real x) { return x >= 0 ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x)); },
      [](Real, Real y) { return y * (Real(1) - y); }, "sigmoid");
}

template <class Real>
Var<Real> tanh(Var<Real> a) {
  return detail::unary(a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return Real(1) - y * y; }, "tanh");
}

template <class Real>
Var<Real> relu(Var<Real> a) {
  return detail::unary(a, [](Real x) { return x > 0 ? x : Real(0); }, [](Real x, Real) { return x > 0 ? Real(1) : Real(0); },
                       "relu");
}

namespace detail {

// Row-wise (or whole-vector) stable softmax / log-softmax.
template <class Real>
void softmax_rows(const Tensor<Real>& x, Tensor<Real>& out, bool log) {
  const std::size_t rows = x.rank() == 2 ? x.rows() : 1;
  const std::size_t cols = x.rank() == 2 ? x.cols() : x.size();
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.span().subspan(r * cols, cols);
    Real mx = max_of<Real>(in);
    Real sum = 0;
    for (Real v : in) sum += std::exp(v - mx);
    const Real log_sum = std::log(sum);
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = log ? (in[c] - mx) - log_sum : std::exp(in[c] - mx) / sum;
  }
}

}  // namespace detail

template <class Real>
Var<Real> softmax(Var<Real> a) {
  auto& g = *a.graph;
  const auto& x = a.value();
  detail::require(x.rank() == 1 || x.rank() == 2, "softmax", "expects a vector or matrix");
  Tensor<Real> out(x.shape());
  detail::softmax_rows(x, out, false);
  return g.make(std::move(out), {a}, [a](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    const auto& y = g.value(Var<Real>{&g, id});
    auto& ga = g.grad(a);
    const std::size_t rows = y.rank() == 2 ? y.rows() : 1;
    const std::size_t cols = y.size() / rows;
    for (std::size_t r = 0; r < rows; ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += go[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[r * cols + c] * (go[r * cols + c] - dot);
    }
  }, "softmax");
}

template <class Real>
Var<Real> log_softmax(Var<Real> a) {
  auto& g = *a.graph;
  const auto& x = a.value();
  detail::require(x.rank() == 1 || x.rank() == 2, "log_softmax", "expects a vector or matrix");
  Tensor<Real> out(x.shape());
  detail::softmax_rows(x, out, true);
  return g.make(std::move(out), {a}, [a](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    const auto& y = g.value(Var<Real>{&g, id});
    auto& ga = g.grad(a);
    const std::size_t rows = y.rank() == 2 ? y.rows() : 1;
    const std::size_t cols = y.size() / rows;
    for (std::size_t r = 0; r < rows; ++r) {
      Real sum = 0;
      for (std::size_t c = 0; c < cols; ++c) sum += go[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += go[r * cols + c] - std::exp(y[r * cols + c]) * sum;
    }
  }, "log_softmax");
}

/// Log-softmax restricted to the contiguous logit range [begin, begin+len);
/// the result has `len` entries and logits outside the range get no mass.
template <class Real>
Var<Real> log_softmax_range(Var<Real> a, std::size_t begin, std::size_t len) {
  return log_softmax(slice(a, begin, len));
}

template <class Real>
Var<Real> embedding_lookup(Var<Real> table, std::size_t index) {
  auto& g = *table.graph;
  const auto& T = table.value();
  detail::require(T.rank() == 2, "embedding_lookup", "table must be a matrix");
  detail::require(index < T.rows(), "embedding_lookup", "index " + std::to_string(index) + " out of range");
  auto row = T.row(index);
  Tensor<Real> out = Tensor<Real>::vector({row.begin(), row.end()});
  return g.make(std::move(out), {table}, [table, index](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    auto& gt = g.grad(table);
    const std::size_t cols = gt.cols();
    for (std::size_t c = 0; c < cols; ++c) gt[index * cols + c] += go[c];
  }, "embedding_lookup");
}

/// Elementwise mean over same-shaped inputs.
template <class Real>
Var<Real> mean_pool(const std::vector<Var<Real>>& xs) {
  detail::require(!xs.empty(), "mean_pool", "no inputs");
  auto& g = *xs.front().graph;
  Tensor<Real> out(xs.front().value().shape());
  for (auto x : xs) {
    detail::require_same_shape(out, x.value(), "mean_pool");
    detail::add_into(out, x.value());
  }
  const Real inv = Real(1) / static_cast<Real>(xs.size());
  for (auto& v : out.span()) v *= inv;
  Var<Real> anchor = xs.front();
  for (auto x : xs)
    if (g.needs_grad(x)) anchor = x;
  return g.make(std::move(out), {anchor}, [xs, inv](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    for (auto x : xs) {
      if (!g.needs_grad(x)) continue;
      auto& gx = g.grad(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += inv * go[i];
    }
  }, "mean_pool");
}

/// Elementwise max over same-shaped inputs; ties route the gradient to the
/// earliest input.
template <class Real>
Var<Real> max_pool(const std::vector<Var<Real>>& xs) {
  detail::require(!xs.empty(), "max_pool", "no inputs");
  auto& g = *xs.front().graph;
  Tensor<Real> out = xs.front().value();
  std::vector<std::size_t> argmax(out.size(), 0);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const auto& x = xs[k].value();
    detail::require_same_shape(out, x, "max_pool");
    for (std::size_t i = 0; i < out.size(); ++i)
      if (x[i] > out[i]) {
        out[i] = x[i];
        argmax[i] = k;
      }
  }
  Var<Real> anchor = xs.front();
  for (auto x : xs)
    if (g.needs_grad(x)) anchor = x;
  return g.make(std::move(out), {anchor}, [xs, argmax](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    for (std::size_t i = 0; i < go.size(); ++i) {
      auto x = xs[argmax[i]];
      if (g.needs_grad(x)) g.grad(x)[i] += go[i];
    }
  }, "max_pool");
}

template <class Real>
Var<Real> sum(Var<Real> a) {
  auto& g = *a.graph;
  Real s = 0;
  for (Real v : a.value().span()) s += v;
  return g.make(Tensor<Real>::scalar(s), {a}, [a](Graph<Real>& g, std::size_t id) {
    const Real go = g.grad(id)[0];
    for (auto& v : g.grad(a).span()) v += go;
  }, "sum");
}

template <class Real>
Var<Real> dot(Var<Real> a, Var<Real> b) {
  return sum(elementwise_mul(a, b));
}

/// Scalar entry `index` of a vector.
template <class Real>
Var<Real> pick(Var<Real> a, std::size_t index) {
  auto& g = *a.graph;
  detail::require(index < a.value().size(), "pick", "index " + std::to_string(index) + " out of range");
  return g.make(Tensor<Real>::scalar(a.value()[index]), {a}, [a, index](Graph<Real>& g, std::size_t id) {
    g.grad(a)[index] += g.grad(id)[0];
  }, "pick");
}

template <class Real>
Var<Real> gather(Var<Real> a, std::vector<std::size_t> indices) {
  auto& g = *a.graph;
  const auto& x = a.value();
  std::vector<Real> data;
  data.reserve(indices.size());
  for (auto i : indices) {
    detail::require(i < x.size(), "gather", "index " + std::to_string(i) + " out of range");
    data.push_back(x[i]);
  }
  return g.make(Tensor<Real>::vector(std::move(data)), {a}, [a, indices = std::move(indices)](Graph<Real>& g, std::size_t id) {
    const auto& go = g.grad(id);
    auto& ga = g.grad(a);
    for (std::size_t k = 0; k < indices.size(); ++k) ga[indices[k]] += go[k];
  }, "gather");
}

template <class Real>
Var<Real> logsumexp(Var<Real> a) {
  auto& g = *a.graph;
  const auto& x = a.value();
  detail::require(x.size() > 0, "logsumexp", "empty input");
  Real mx = detail::max_of<Real>(x.span());
  Real s = 0;
  for (Real v : x.span()) s += std::exp(v - mx);
  return g.make(Tensor<Real>::scalar(mx + std::log(s)), {a}, [a](Graph<Real>& g, std::size_t id) {
    const Real go = g.grad(id)[0];
    const Real lse = g.value(Var<Real>{&g, id})[0];
    const auto& x = g.value(a);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += go * std::exp(x[i] - lse);
  }, "logsumexp");
}

/// w[target] * (-log softmax(logits)[target]).
template <class Real>
Var<Real> weighted_cross_entropy(Var<Real> logits, std::size_t target, std::span<const Real> class_weights) {
  const auto& x = logits.value();
  detail::require(x.rank() == 1, "weighted_cross_entropy", "logits must be a vector");
  detail::require(target < x.size(), "weighted_cross_entropy", "target " + std::to_string(target) + " out of range");
  detail::require(class_weights.size() == x.size(), "weighted_cross_entropy", "one weight per class required");
  const Real w = class_weights[target];
  detail::require(w > 0, "weighted_cross_entropy", "weights must be strictly positive");
  return scale(pick(log_softmax(logits), target), -w);
}

template <class Real>
Var<Real> cross_entropy(Var<Real> logits, std::size_t target) {
  detail::require(target < logits.value().size(), "cross_entropy", "target out of range");
  return scale(pick(log_softmax(logits), target), Real(-1));
}

}  // namespace situ::numeric
