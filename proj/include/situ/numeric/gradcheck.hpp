#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>

#include "situ/numeric/ops.hpp"

namespace situ::numeric {

template <class Real>
struct GradCheckResult {
  Real max_rel_error = 0;
  std::size_t worst_index = 0;
  Real analytic = 0;
  Real numeric = 0;
  std::size_t checked = 0;
};

// Components smaller than this are compared absolutely: below it the central
// difference is dominated by rounding of f (about ulp(f) / eps).
inline constexpr double kDenominatorFloor = 1e-6;

namespace detail {

template <class Real>
void record(GradCheckResult<Real>& r, std::size_t index, Real analytic, Real numeric) {
  Real denom = std::max({std::abs(analytic), std::abs(numeric), Real(kDenominatorFloor)});
  Real err = std::abs(analytic - numeric) / denom;
  ++r.checked;
  if (r.checked == 1 || err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst_index = index;
    r.analytic = analytic;
    r.numeric = numeric;
  }
}

template <class Real>
Real finite_scalar(Var<Real> v, const char* what) {
  const auto& t = v.value();
  if (t.size() != 1) throw NumericError(std::string(what) + ": function must return a scalar");
  if (!std::isfinite(t[0])) throw NumericError(std::string(what) + ": non-finite function value");
  return t[0];
}

}  // namespace detail

/// Central-difference check of fn's gradient at `point`. Relative error per
/// coordinate uses the denominator max(|a|, |b|, kDenominatorFloor).
template <class Real>
GradCheckResult<Real> finite_diff_check(const std::function<Var<Real>(Graph<Real>&, Var<Real>)>& fn,
                                        const Tensor<Real>& point, Real eps) {
  if (!(eps > 0)) throw NumericError("finite_diff_check: eps must be positive");
  Tensor<Real> analytic;
  {
    auto g = Graph<Real>::recording();
    auto x = g.input(point);
    auto y = fn(g, x);
    detail::finite_scalar(y, "finite_diff_check");
    g.backward(y);
    analytic = g.has_grad(x.id) ? g.grad(x) : Tensor<Real>(point.shape());
  }
  auto eval = [&](const Tensor<Real>& p) {
    Graph<Real> g;
    return detail::finite_scalar(fn(g, g.constant(p)), "finite_diff_check");
  };
  GradCheckResult<Real> result;
  Tensor<Real> p = point;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Real orig = p[i];
    p[i] = orig + eps;
    Real fp = eval(p);
    p[i] = orig - eps;
    Real fm = eval(p);
    p[i] = orig;
    detail::record(result, i, analytic[i], (fp - fm) / (Real(2) * eps));
  }
  return result;
}

/// Same check over every entry of every parameter in `store` (optionally
/// restricted to parameters whose name starts with `prefix`).
template <class Real>
GradCheckResult<Real> finite_diff_check_params(ParameterStore<Real>& store,
                                               const std::function<Var<Real>(Graph<Real>&)>& fn, Real eps,
                                               const std::string& prefix = "") {
  if (!(eps > 0)) throw NumericError("finite_diff_check: eps must be positive");
  store.zero_grad();
  {
    Graph<Real> g(store);
    auto y = fn(g);
    detail::finite_scalar(y, "finite_diff_check");
    g.backward(y);
  }
  auto eval = [&]() {
    Graph<Real> g(&std::as_const(store));
    return detail::finite_scalar(fn(g), "finite_diff_check");
  };
  GradCheckResult<Real> result;
  std::size_t flat = 0;
  for (auto& p : store) {
    if (p.name.rfind(prefix, 0) != 0) {
      flat += p.value.size();
      continue;
    }
    for (std::size_t i = 0; i < p.value.size(); ++i, ++flat) {
      const Real orig = p.value[i];
      p.value[i] = orig + eps;
      Real fp = eval();
      p.value[i] = orig - eps;
      Real fm = eval();
      p.value[i] = orig;
      detail::record(result, flat, p.grad[i], (fp - fm) / (Real(2) * eps));
    }
  }
  store.zero_grad();
  return result;
}

}  // namespace situ::numeric
