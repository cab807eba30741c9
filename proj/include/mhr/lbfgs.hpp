#pragma once

#include <deque>
#include <functional>
#include <limits>

#include "mhr/common.hpp"

namespace mhr {

/// Objective for LbfgsMinimize: fills grad and returns f(x).
using LbfgsObjective = std::function<double(const VecX& x, VecX& grad)>;

struct LbfgsOptions {
  int max_iterations = 30;
  int history = 8;
  double initial_step = 1.0;   // first trial step length of each line search
  double grad_tolerance = 1e-8;    // on the gradient infinity norm
  double f_rel_tolerance = 1e-10;  // on the relative energy change
  int max_line_search = 40;
};

struct LbfgsResult {
  VecX x;
  double f = 0.0;
  double grad_inf_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Limited-memory BFGS with a backtracking Armijo line search. Intended for
/// small, smooth (or piecewise-smooth) objectives; throws NumericError if the
/// objective goes non-finite at the initial point.
inline LbfgsResult lbfgs_minimize(const LbfgsObjective& f, VecX x0,
                                  const LbfgsOptions& opts = {}) {
  const int n = int(x0.size());
  VecX x = std::move(x0);
  VecX grad(n);
  double fx = f(x, grad);
  if (!std::isfinite(fx)) throw NumericError("lbfgs: objective non-finite at the initial point");

  std::deque<VecX> s_hist, y_hist;
  std::deque<double> rho_hist;

  LbfgsResult res;
  res.x = x;
  res.f = fx;
  res.grad_inf_norm = grad.lpNorm<Eigen::Infinity>();

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (grad.lpNorm<Eigen::Infinity>() < opts.grad_tolerance) {
      res.converged = true;
      break;
    }

    // Two-loop recursion.
    VecX q = grad;
    std::vector<double> alpha(s_hist.size());
    for (int i = int(s_hist.size()) - 1; i >= 0; --i) {
      alpha[std::size_t(i)] = rho_hist[std::size_t(i)] * s_hist[std::size_t(i)].dot(q);
      q -= alpha[std::size_t(i)] * y_hist[std::size_t(i)];
    }
    if (!s_hist.empty()) {
      const VecX& s = s_hist.back();
      const VecX& y = y_hist.back();
      q *= s.dot(y) / y.dot(y);
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    VecX dir = -q;
    if (dir.dot(grad) >= 0.0) dir = -grad;  // not a descent direction, reset

    // Weak-Wolfe line search by bisection bracketing. The curvature
    // condition keeps s.dot(y) > 0, so the inverse Hessian estimate stays
    // positive definite; Armijo alone lets the step collapse in narrow
    // valleys and stalls the relative-change stop far from the minimum.
    double step = opts.initial_step;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double f_old = fx;
    VecX x_old = x;
    VecX grad_old = grad;
    double dg = dir.dot(grad);
    bool accepted = false;
    bool have_armijo = false;
    double f_armijo = 0.0, step_armijo = 0.0;
    VecX x_armijo, grad_armijo;
    for (int ls = 0; ls < opts.max_line_search; ++ls) {
      VecX x_try = x_old + step * dir;
      VecX grad_try(n);
      double f_try = f(x_try, grad_try);
      if (!std::isfinite(f_try) || f_try > f_old + 1e-4 * step * dg) {
        hi = step;
      } else if (grad_try.dot(dir) < 0.9 * dg) {
        if (!have_armijo || f_try < f_armijo) {
          have_armijo = true;
          f_armijo = f_try;
          step_armijo = step;
          x_armijo = x_try;
          grad_armijo = grad_try;
        }
        lo = step;
      } else {
        x = std::move(x_try);
        fx = f_try;
        grad = std::move(grad_try);
        accepted = true;
        break;
      }
      step = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * step;
    }
    if (!accepted && have_armijo) {  // curvature never held, take the best Armijo point
      x = std::move(x_armijo);
      fx = f_armijo;
      grad = std::move(grad_armijo);
      step = step_armijo;
      accepted = true;
    }
    res.iterations = iter + 1;
    if (!accepted) break;  // line search failed, keep the best point so far

    VecX s = x - x_old;
    VecX y = grad - grad_old;
    double sy = s.dot(y);
    if (sy > 1e-12) {  // keep the inverse Hessian estimate positive definite
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (int(s_hist.size()) > opts.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }

    res.x = x;
    res.f = fx;
    res.grad_inf_norm = grad.lpNorm<Eigen::Infinity>();
    if (std::abs(f_old - fx) <= opts.f_rel_tolerance * std::max(1.0, std::abs(f_old))) {
      res.converged = true;
      break;
    }
  }

  res.x = x;
  res.f = fx;
  res.grad_inf_norm = grad.lpNorm<Eigen::Infinity>();
  return res;
}

}  // namespace mhr
