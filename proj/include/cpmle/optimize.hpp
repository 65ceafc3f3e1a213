#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "cpmle/error.hpp"

namespace cpmle {

struct NewtonOptions {
  int max_iterations = 100;
  /// Converged once the projected gradient norm is ≤ gradient_tolerance·(1 + |f|).
  double gradient_tolerance = 1e-10;
  /// When no step increases f, accept the iterate if the projected gradient is below this
  /// (relative) level; the remaining gradient is rounding noise.
  double stall_tolerance = 1e-6;
};

struct NewtonResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool stalled = false;
};

inline Eigen::VectorXd clamp_to_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lower,
                                    const Eigen::VectorXd& upper) {
  return x.cwiseMax(lower).cwiseMin(upper);
}

/// Gradient with the components blocked by an active bound zeroed.
inline Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                          const Eigen::VectorXd& lower,
                                          const Eigen::VectorXd& upper) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if ((x[i] <= lower[i] && g[i] < 0.0) || (x[i] >= upper[i] && g[i] > 0.0)) pg[i] = 0.0;
  }
  return pg;
}

/// Safeguarded Newton ascent on a box. `f(x, grad, hess)` returns the objective and fills
/// the gradient and Hessian when the pointers are non-null. Indefinite Hessians are shifted
/// until −H + τI is positive definite; steps are halved until the objective increases and
/// projected back onto the box.
template <class Objective>
NewtonResult maximize_box_newton(Objective&& f, Eigen::VectorXd start,
                                 const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                 const NewtonOptions& options = {}) {
  const Eigen::Index dim = start.size();
  NewtonResult r;
  r.x = clamp_to_box(start, lower, upper);
  if (dim == 0) {
    r.value = f(r.x, nullptr, nullptr);
    return r;
  }

  Eigen::VectorXd g(dim);
  Eigen::MatrixXd h(dim, dim);
  r.value = f(r.x, &g, &h);
  if (!std::isfinite(r.value))
    throw OptimizationError("objective is not finite at the starting point", r.x,
                            std::numeric_limits<double>::infinity());

  for (r.iterations = 0; r.iterations <= options.max_iterations; ++r.iterations) {
    Eigen::VectorXd pg = projected_gradient(r.x, g, lower, upper);
    r.gradient_norm = pg.norm();
    if (r.gradient_norm <= options.gradient_tolerance * (1.0 + std::abs(r.value))) return r;
    if (r.iterations == options.max_iterations) break;

    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < dim; ++i)
      if (pg[i] != 0.0) free.push_back(i);
    const auto m = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd a(m, m);
    Eigen::VectorXd gf(m);
    for (Eigen::Index p = 0; p < m; ++p) {
      gf[p] = g[free[static_cast<std::size_t>(p)]];
      for (Eigen::Index q = 0; q < m; ++q)
        a(p, q) = -h(free[static_cast<std::size_t>(p)], free[static_cast<std::size_t>(q)]);
    }
    a = 0.5 * (a + a.transpose()).eval();

    Eigen::VectorXd df;
    double shift = 0.0;
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::LLT<Eigen::MatrixXd> llt(a + shift * Eigen::MatrixXd::Identity(m, m));
      if (llt.info() == Eigen::Success) {
        df = llt.solve(gf);
        if (df.allFinite() && df.dot(gf) > 0.0) break;
      }
      df.resize(0);
      shift = shift == 0.0 ? 1e-8 * scale : 4.0 * shift;
    }
    if (df.size() == 0) df = gf / scale;

    Eigen::VectorXd direction = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index p = 0; p < m; ++p) direction[free[static_cast<std::size_t>(p)]] = df[p];

    bool improved = false;
    double step = 1.0;
    for (int halving = 0; halving < 60; ++halving, step *= 0.5) {
      Eigen::VectorXd candidate = clamp_to_box(r.x + step * direction, lower, upper);
      const double value = f(candidate, nullptr, nullptr);
      if (std::isfinite(value) && value > r.value) {
        r.x = std::move(candidate);
        improved = true;
        break;
      }
    }
    if (!improved) {
      if (r.gradient_norm <= options.stall_tolerance * (1.0 + std::abs(r.value))) {
        r.stalled = true;
        return r;
      }
      throw OptimizationError("Newton ascent found no improving step", r.x, r.gradient_norm);
    }
    r.value = f(r.x, &g, &h);
  }
  throw OptimizationError("Newton ascent did not converge in " +
                              std::to_string(options.max_iterations) + " iterations",
                          r.x, r.gradient_norm);
}

struct NelderMeadOptions {
  int max_evaluations = 4000;
  double value_tolerance = 1e-14;
  double initial_step = 0.05;  // fraction of the box width
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
};

/// Derivative-free minimization of f over a box; trial points are clamped onto the box.
template <class F>
NelderMeadResult minimize_nelder_mead(F&& f, const Eigen::VectorXd& start,
                                      const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                      const NelderMeadOptions& options = {}) {
  const Eigen::Index dim = start.size();
  NelderMeadResult r;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++r.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  if (dim == 0) {
    r.x = start;
    r.value = eval(start);
    return r;
  }

  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(dim) + 1);
  std::vector<double> vals(pts.size());
  pts[0] = clamp_to_box(start, lower, upper);
  for (Eigen::Index i = 0; i < dim; ++i) {
    Eigen::VectorXd p = pts[0];
    const double width = upper[i] - lower[i];
    double step = options.initial_step * width;
    if (p[i] + step > upper[i]) step = -step;
    p[i] = std::clamp(p[i] + step, lower[i], upper[i]);
    pts[static_cast<std::size_t>(i) + 1] = p;
  }
  for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = eval(pts[i]);

  std::vector<std::size_t> order(pts.size());
  while (r.evaluations < options.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
    const auto best = order.front(), worst = order.back(), second = order[order.size() - 2];
    if (std::abs(vals[worst] - vals[best]) <=
        options.value_tolerance * (1.0 + std::abs(vals[best])))
      break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(dim);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) centroid += pts[order[i]];
    centroid /= static_cast<double>(dim);

    auto along = [&](double t) {
      return clamp_to_box(centroid + t * (pts[worst] - centroid), lower, upper);
    };
    Eigen::VectorXd reflected = along(-1.0);
    const double fr = eval(reflected);
    if (fr < vals[best]) {
      Eigen::VectorXd expanded = along(-2.0);
      const double fe = eval(expanded);
      if (fe < fr) {
        pts[worst] = expanded;
        vals[worst] = fe;
      } else {
        pts[worst] = reflected;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = reflected;
      vals[worst] = fr;
      continue;
    }
    Eigen::VectorXd contracted = fr < vals[worst] ? along(-0.5) : along(0.5);
    const double fc = eval(contracted);
    if (fc < std::min(fr, vals[worst])) {
      pts[worst] = contracted;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
      vals[i] = eval(pts[i]);
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  r.x = pts[best];
  r.value = vals[best];
  return r;
}

}  // namespace cpmle
