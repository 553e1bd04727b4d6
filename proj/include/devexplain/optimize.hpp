#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "devexplain/errors.hpp"

namespace devexplain {

struct OptimResult {
  std::vector<double> x;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
  long evaluations = 0;
};

struct BfgsOptions {
  double grad_tol = 1e-6;
  double step_tol = 1e-12;
  int max_iters = 500;
};

struct SimplexOptions {
  double step_tol = 1e-8;
  double initial_step = 0.25;  // times (1 + |x0_i|)
  int max_iters = 5000;
};

namespace detail {

inline double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Central differences with h_i = 1e-6 (1 + |x_i|).
template <typename F>
std::vector<double> fd_gradient(F& f, std::vector<double> x, long& evals) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double h = 1e-6 * (1.0 + std::abs(xi));
    x[i] = xi + h;
    const double fp = f(std::span<const double>(x));
    x[i] = xi - h;
    const double fm = f(std::span<const double>(x));
    x[i] = xi;
    evals += 2;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace detail

// Quasi-Newton minimization with finite-difference gradients and an Armijo
// backtracking line search. Converged means ||grad||_inf < grad_tol.
template <typename F>
OptimResult minimize_bfgs(F&& f, std::vector<double> x, const BfgsOptions& opt = {}) {
  const std::size_t n = x.size();
  OptimResult res;
  double fx = f(std::span<const double>(x));
  res.evaluations = 1;
  if (!std::isfinite(fx)) throw NumericalError("bfgs: objective is not finite at the start point");
  auto g = detail::fd_gradient(f, x, res.evaluations);

  // Inverse Hessian approximation, row-major.
  std::vector<double> H(n * n, 0.0);
  auto reset = [&](double scale) {
    std::fill(H.begin(), H.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) H[i * n + i] = scale;
  };
  reset(1.0);
  bool fresh = true;

  std::vector<double> p(n), xn(n), s(n), y(n), Hy(n);
  for (res.iterations = 0; res.iterations < opt.max_iters; ++res.iterations) {
    if (detail::inf_norm(g) < opt.grad_tol) {
      res.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc -= H[i * n + j] * g[j];
      p[i] = acc;
    }
    double slope = detail::dot(g, p);
    if (!(slope < 0.0)) {
      reset(1.0);
      fresh = true;
      for (std::size_t i = 0; i < n; ++i) p[i] = -g[i];
      slope = detail::dot(g, p);
    }

    double alpha = 1.0;
    double fn = fx;
    bool accepted = false;
    for (int ls = 0; ls < 80; ++ls) {
      for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] + alpha * p[i];
      fn = f(std::span<const double>(xn));
      ++res.evaluations;
      if (std::isfinite(fn) && fn <= fx + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!fresh) {
        reset(1.0);
        fresh = true;
        continue;
      }
      break;
    }

    for (std::size_t i = 0; i < n; ++i) s[i] = xn[i] - x[i];
    auto gn = detail::fd_gradient(f, xn, res.evaluations);
    for (std::size_t i = 0; i < n; ++i) y[i] = gn[i] - g[i];
    const double step = detail::inf_norm(s);
    const double xscale = 1.0 + detail::inf_norm(x);
    x = xn;
    g = std::move(gn);
    const double f_prev = fx;
    fx = fn;
    if (step < opt.step_tol * xscale && std::abs(f_prev - fx) <= 1e-15 * (1.0 + std::abs(fx))) {
      res.converged = detail::inf_norm(g) < opt.grad_tol;
      break;
    }

    const double sy = detail::dot(s, y);
    if (sy > 1e-12 * std::sqrt(detail::dot(s, s) * detail::dot(y, y))) {
      if (fresh) reset(sy / detail::dot(y, y));
      fresh = false;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += H[i * n + j] * y[j];
        Hy[i] = acc;
      }
      const double yHy = detail::dot(y, Hy);
      const double rho = 1.0 / sy;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          H[i * n + j] += -rho * (Hy[i] * s[j] + s[i] * Hy[j]) + (rho * rho * yHy + rho) * s[i] * s[j];
    }
  }
  if (!res.converged && detail::inf_norm(g) < opt.grad_tol) res.converged = true;
  res.x = std::move(x);
  res.value = fx;
  return res;
}

// Nelder-Mead minimization (reflection 1, expansion 2, contraction 1/2,
// shrink 1/2). Converged means the simplex diameter, measured in the
// inf-norm from the best vertex and relative to 1 + ||best||_inf, fell below step_tol.
template <typename F>
OptimResult minimize_simplex(F&& f, std::vector<double> x0, const SimplexOptions& opt = {}) {
  const std::size_t n = x0.size();
  OptimResult res;
  auto eval = [&](const std::vector<double>& v) {
    ++res.evaluations;
    const double val = f(std::span<const double>(v));
    return std::isfinite(val) ? val : std::numeric_limits<double>::infinity();
  };
  const double f0 = f(std::span<const double>(x0));
  ++res.evaluations;
  if (!std::isfinite(f0)) throw NumericalError("simplex: objective is not finite at the start point");

  std::vector<std::vector<double>> pts{x0};
  std::vector<double> vals{f0};
  for (std::size_t i = 0; i < n; ++i) {
    auto v = x0;
    v[i] += opt.initial_step * (1.0 + std::abs(x0[i]));
    vals.push_back(eval(v));
    pts.push_back(std::move(v));
  }

  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), trial(n), trial2(n);
  auto affine = [&](const std::vector<double>& base, double t, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = centroid[i] + t * (base[i] - centroid[i]);
  };

  for (res.iterations = 0; res.iterations < opt.max_iters; ++res.iterations) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const auto& best = pts[order[0]];
    double diam = 0.0;
    for (std::size_t k = 1; k <= n; ++k)
      for (std::size_t i = 0; i < n; ++i) diam = std::max(diam, std::abs(pts[order[k]][i] - best[i]));
    if (diam < opt.step_tol * (1.0 + detail::inf_norm(best))) {
      res.converged = true;
      break;
    }

    const std::size_t worst = order[n];
    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i) centroid[i] += pts[order[k]][i] / static_cast<double>(n);

    affine(pts[worst], -1.0, trial);
    const double fr = eval(trial);
    if (fr < vals[order[0]]) {
      affine(pts[worst], -2.0, trial2);
      const double fe = eval(trial2);
      if (fe < fr) {
        pts[worst] = trial2;
        vals[worst] = fe;
      } else {
        pts[worst] = trial;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[order[n - 1]]) {
      pts[worst] = trial;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    affine(outside ? trial : pts[worst], 0.5, trial2);
    const double fc = eval(trial2);
    if (fc < std::min(fr, vals[worst]) || (!outside && fc < vals[worst])) {
      pts[worst] = trial2;
      vals[worst] = fc;
      continue;
    }
    const auto b = pts[order[0]];
    for (std::size_t k = 1; k <= n; ++k) {
      auto& v = pts[order[k]];
      for (std::size_t i = 0; i < n; ++i) v[i] = b[i] + 0.5 * (v[i] - b[i]);
      vals[order[k]] = eval(v);
    }
  }
  const auto it = std::min_element(vals.begin(), vals.end());
  res.x = pts[static_cast<std::size_t>(it - vals.begin())];
  res.value = *it;
  return res;
}

}  // namespace devexplain
