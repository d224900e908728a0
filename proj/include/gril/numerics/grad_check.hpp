#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "gril/errors.hpp"
#include "gril/numerics/tape.hpp"

namespace gril {

using ScalarFn = std::function<Var(Tape&, Var)>;

namespace detail {

inline double eval_scalar(const std::function<Var(Tape&)>& build) {
  Tape t;
  Var y = build(t);
  if (y.size() != 1) throw DimensionError("grad_check: function must return a scalar");
  double v = y.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

inline void check_eps(double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw DomainError("grad_check: eps must lie in [1e-6, 1e-3]");
}

}  // namespace detail

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
inline double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5) {
  detail::check_eps(eps);
  Tensor analytic;
  {
    Tape t;
    Var xv = t.leaf(x);
    Var y = f(t, xv);
    if (y.size() != 1) throw DimensionError("grad_check: function must return a scalar");
    if (!std::isfinite(y.item())) throw NumericError("grad_check: non-finite function value");
    t.backward(y);
    analytic = t.grad(xv);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    double fp = detail::eval_scalar([&](Tape& t) { return f(t, t.constant(xp)); });
    double fm = detail::eval_scalar([&](Tape& t) { return f(t, t.constant(xm)); });
    double numeric = (fp - fm) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

// Same check against a parameter's gradient; `build` must bind `p` via tape.param.
inline double grad_check_param(const std::function<Var(Tape&)>& build, Parameter& p, double eps = 1e-5) {
  detail::check_eps(eps);
  Tensor saved_grad = p.grad;
  p.zero_grad();
  {
    Tape t;
    Var y = build(t);
    if (y.size() != 1) throw DimensionError("grad_check: function must return a scalar");
    t.backward(y);
  }
  Tensor analytic = p.grad;
  p.grad = saved_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double orig = p.value[i];
    p.value[i] = orig + eps;
    double fp = detail::eval_scalar(build);
    p.value[i] = orig - eps;
    double fm = detail::eval_scalar(build);
    p.value[i] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace gril
