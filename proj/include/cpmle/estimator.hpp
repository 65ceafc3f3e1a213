#pragma once

// Exact joint maximum likelihood over change points, segment parameters and the common
// parameter: dynamic programming over segment costs at fixed ψ, alternated with joint
// Newton steps on (ψ, θ) at fixed change points.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "cpmle/inference.hpp"
#include "cpmle/likelihood.hpp"

namespace cpmle {

/// c_j(s, t; ψ) = max_θ Σ_{i=s+1}^{t} log f_j(ψ, θ; x_i) with its maximizer, for rows [s, t).
/// Families with sufficient statistics answer from prefix sums in O(1); the others fall back
/// to Newton on the rows, memoized.
class SegmentCostTable {
 public:
  SegmentCostTable(const ModelSpec& spec, const Dataset& data, const VecIn& psi, ParameterBox box,
                   NewtonOptions newton = {})
      : spec_(&spec), data_(&data), box_(std::move(box)), newton_(newton) {
    const std::size_t n = data.size();
    for (std::size_t j = 0; j < spec.segments(); ++j) {
      const auto& f = spec.family(j);
      psi_.push_back(spec.psi_for(j, psi));
      detail::check_parameters(f, psi_.back(), box_.thetas[j].midpoint());
      for (std::size_t i = 0; i < n; ++i) detail::check_observation(f, data.row(i), i);
      const std::size_t m = f.statistic_dim();
      std::vector<long double> prefix((n + 1) * m, 0.0L);
      for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(prefix.begin() + static_cast<std::ptrdiff_t>(i * m), m,
                    prefix.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
        f.add_statistics(data.row(i), std::span<long double>(prefix.data() + (i + 1) * m, m));
      }
      prefix_.push_back(std::move(prefix));
    }
    scratch_.resize(64);
  }

  const ParameterBox& box() const { return box_; }

  SegmentFit fit(std::size_t j, std::size_t s, std::size_t t) const {
    if (s >= t || t > data_->size()) throw ArgumentError("segment cost needs s < t <= n");
    const auto& f = spec_->family(j);
    const std::size_t m = f.statistic_dim();
    if (m > 0) {
      if (scratch_.size() < m) scratch_.resize(m);
      const auto& p = prefix_[j];
      for (std::size_t q = 0; q < m; ++q) scratch_[q] = p[t * m + q] - p[s * m + q];
      if (auto r = f.fit_from_statistics(psi_[j], std::span<const long double>(scratch_.data(), m), t - s,
                                         box_.thetas[j]))
        return *std::move(r);
    }
    const auto key = std::make_tuple(j, s, t);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    auto r = segment_mle_theta_newton(f, psi_[j], *data_, s, t, box_.thetas[j], newton_);
    memo_.emplace(key, r);
    return r;
  }

  double cost(std::size_t j, std::size_t s, std::size_t t) const { return fit(j, s, t).loglik; }

 private:
  const ModelSpec* spec_;
  const Dataset* data_;
  ParameterBox box_;
  NewtonOptions newton_;
  std::vector<Vec> psi_;
  std::vector<std::vector<long double>> prefix_;
  mutable std::vector<long double> scratch_;
  mutable std::map<std::tuple<std::size_t, std::size_t, std::size_t>, SegmentFit> memo_;
};

/// Equal-likelihood tolerance used to break ties toward the smallest boundary vector.
inline double tie_tolerance(double loglik) { return 1e-11 * (1.0 + std::abs(loglik)); }

struct FixedPsiFit {
  ChangePointConfig change_points;
  std::vector<Vec> thetas;
  double loglik = 0.0;
};

namespace detail {

inline void check_fit_inputs(const ModelSpec& spec, const Dataset& data, std::size_t min_len) {
  if (data.dim() != spec.observation_dim())
    throw ArgumentError("data has " + std::to_string(data.dim()) + " columns, the model expects " +
                        std::to_string(spec.observation_dim()));
  if (min_len == 0) throw ArgumentError("minimum segment length must be at least 1");
  if (data.size() < (spec.k() + 1) * min_len)
    throw ArgumentError("n = " + std::to_string(data.size()) + " is too small for " + std::to_string(spec.k()) +
                        " change points with minimum segment length " + std::to_string(min_len));
}

}  // namespace detail

/// Exact maximizer over all configurations 0 < n_1 < ... < n_k < n (each segment at least
/// min_segment_length long) at fixed ψ. Among optimal configurations, within tie_tolerance,
/// the lexicographically smallest boundary vector is returned.
inline FixedPsiFit fit_fixed_psi(const ModelSpec& spec, const Dataset& data, const SegmentCostTable& table,
                                 std::size_t min_segment_length = 1) {
  detail::check_fit_inputs(spec, data, min_segment_length);
  const std::size_t n = data.size(), k = spec.k(), m = min_segment_length;
  constexpr double ninf = -std::numeric_limits<double>::infinity();

  // best[j][s]: maximal log-likelihood of segments j..k when segment j starts at row s.
  std::vector<std::vector<double>> best(k + 1, std::vector<double>(n + 1, ninf));
  for (std::size_t s = k * m; s + m <= n; ++s) best[k][s] = table.cost(k, s, n);
  for (std::size_t j = k; j-- > 0;) {
    const std::size_t s_lo = j == 0 ? 0 : j * m;
    const std::size_t s_hi = j == 0 ? 0 : n - (k + 1 - j) * m;
    const std::size_t t_hi = n - (k - j) * m;
    for (std::size_t s = s_lo; s <= s_hi; ++s) {
      double b = ninf;
      for (std::size_t t = s + m; t <= t_hi; ++t) b = std::max(b, table.cost(j, s, t) + best[j + 1][t]);
      best[j][s] = b;
    }
  }
  const double optimum = best[0][0];
  if (!std::isfinite(optimum)) throw NumericError("no configuration has a finite log-likelihood");
  const double floor_value = optimum - tie_tolerance(optimum);

  FixedPsiFit r;
  std::vector<std::size_t> boundaries;
  double acc = 0.0;
  std::size_t s = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t t_hi = n - (k - j) * m;
    std::size_t chosen = 0;
    for (std::size_t t = s + m; t <= t_hi; ++t) {
      if (acc + table.cost(j, s, t) + best[j + 1][t] >= floor_value) {
        chosen = t;
        break;
      }
    }
    if (chosen == 0) throw InternalError("dynamic-programming backtrack found no optimal continuation");
    const auto seg = table.fit(j, s, chosen);
    acc += seg.loglik;
    r.thetas.push_back(seg.theta);
    boundaries.push_back(chosen);
    s = chosen;
  }
  const auto last = table.fit(k, s, n);
  r.thetas.push_back(last.theta);
  r.change_points = ChangePointConfig(std::move(boundaries), n);
  r.loglik = acc + last.loglik;
  return r;
}

inline FixedPsiFit fit_fixed_psi(const ModelSpec& spec, const Dataset& data, const VecIn& psi,
                                 std::size_t min_segment_length = 1) {
  detail::check_fit_inputs(spec, data, min_segment_length);
  SegmentCostTable table(spec, data, psi, spec.resolve_box(data));
  return fit_fixed_psi(spec, data, table, min_segment_length);
}

struct FitOptions {
  /// Extra starting values for ψ, tried after the whole-sample pooled estimate.
  std::vector<Vec> psi_starts;
  bool pooled_start = true;
  int max_outer_iters = 50;
  double tol = 1e-8;
  std::size_t min_segment_length = 1;
  NewtonOptions newton;
  bool compute_inference = true;
};

struct StartRecord {
  Vec psi_start;
  bool succeeded = false;
  std::string error;
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  ChangePointConfig change_points;
  Vec psi;
  int outer_iterations = 0;
  bool converged = false;
};

struct FitDiagnostics {
  /// Accepted log-likelihood values of the winning start, in order.
  std::vector<double> trace;
  int outer_iterations = 0;
  bool converged = true;
  std::vector<StartRecord> starts;
  std::size_t winning_start = 0;
  /// Starts ending within tol of the best with a different (change points, ψ).
  std::size_t alternative_maxima = 0;
  /// Packed coordinates of φ̂ lying on their box bound.
  std::vector<bool> at_box_bound;
  /// Entry j flags segments j, j+1 sharing a family and a numerically equal θ̂.
  std::vector<bool> indistinct_neighbors;
  double condition_number = std::numeric_limits<double>::quiet_NaN();
  std::string inference_error;
};

struct FitResult {
  ChangePointConfig change_points;
  ParameterState params;
  double loglik = 0.0;
  InfoMatrix info;
  Vec std_errors;
  FitDiagnostics diagnostics;
};

namespace detail {

/// Σ_j Σ_{i in segment j} log f_j with gradient and Hessian in packed (ψ, θ) coordinates.
inline double joint_objective(const ModelSpec& spec, const Dataset& data, const ChangePointConfig& cps,
                              const Vec& x, Vec* grad, Mat* hess) {
  const auto dc = static_cast<Eigen::Index>(spec.common_dim());
  const Vec psi = x.head(dc);
  if (grad) grad->setZero(x.size());
  if (hess) hess->setZero(x.size(), x.size());
  double value = 0.0;
  for (std::size_t j = 0; j < cps.segments(); ++j) {
    const auto& f = spec.family(j);
    const Vec pj = spec.psi_for(j, psi);
    const auto dp = static_cast<Eigen::Index>(f.psi_dim());
    const auto dt = static_cast<Eigen::Index>(f.theta_dim());
    const auto off = static_cast<Eigen::Index>(spec.theta_offset(j));
    const Vec theta = x.segment(off, dt);
    if (!f.valid_parameters(pj, theta)) return -std::numeric_limits<double>::infinity();
    Vec g(dp + dt);
    Mat h(dp + dt, dp + dt);
    for (std::size_t t = cps.begin(j); t < cps.end(j); ++t) {
      const auto row = data.row(t);
      value += f.log_density(pj, theta, row);
      if (grad) {
        f.gradient(pj, theta, row, g);
        if (dp > 0) grad->head(dp) += g.head(dp);
        grad->segment(off, dt) += g.tail(dt);
      }
      if (hess) {
        f.hessian(pj, theta, row, h);
        if (dp > 0) {
          hess->topLeftCorner(dp, dp) += h.topLeftCorner(dp, dp);
          hess->block(0, off, dp, dt) += h.topRightCorner(dp, dt);
          hess->block(off, 0, dt, dp) += h.bottomLeftCorner(dt, dp);
        }
        hess->block(off, off, dt, dt) += h.bottomRightCorner(dt, dt);
      }
    }
  }
  return value;
}

inline Vec packed_lower(const ModelSpec& spec, const ParameterBox& box) {
  ParameterState s{box.psi.lower, {}};
  for (const auto& b : box.thetas) s.thetas.push_back(b.lower);
  if (spec.common_dim() == 0) s.psi = Vec();
  return s.packed();
}

inline Vec packed_upper(const ModelSpec& spec, const ParameterBox& box) {
  ParameterState s{box.psi.upper, {}};
  for (const auto& b : box.thetas) s.thetas.push_back(b.upper);
  if (spec.common_dim() == 0) s.psi = Vec();
  return s.packed();
}

/// Joint Newton over (ψ, θ) with the change points held fixed.
inline std::pair<ParameterState, double> maximize_at_fixed_cps(const ModelSpec& spec, const Dataset& data,
                                                               const ChangePointConfig& cps,
                                                               const ParameterState& start, const ParameterBox& box,
                                                               const NewtonOptions& newton) {
  auto objective = [&](const Vec& x, Vec* g, Mat* h) { return joint_objective(spec, data, cps, x, g, h); };
  auto r = maximize_box_newton(objective, start.packed(), packed_lower(spec, box), packed_upper(spec, box), newton);
  return {spec.unpack(r.x), r.value};
}

/// Whole-sample ψ estimate: single-segment joint fit with the first ψ-carrying family.
inline Vec pooled_psi(const ModelSpec& spec, const Dataset& data, const ParameterBox& box,
                      const NewtonOptions& newton) {
  const std::size_t owner = spec.psi_owner();
  ModelSpec single({spec.family_ptr(owner)});
  ParameterBox b{box.psi, {box.thetas[owner]}};
  const auto& f = spec.family(owner);
  ParameterState start;
  start.psi = f.initial_psi(data, box.psi);
  start.thetas.push_back(box.thetas[owner].clamp(f.initial_theta(start.psi, data, 0, data.size(), box.thetas[owner])));
  ChangePointConfig whole({}, data.size());
  return maximize_at_fixed_cps(single, data, whole, start, b, newton).first.psi;
}

}  // namespace detail

namespace detail {

inline StartRecord profile_from(const ModelSpec& spec, const Dataset& data, const ParameterBox& box,
                                const Vec& psi_start, const FitOptions& options, ChangePointConfig& cps_out,
                                ParameterState& params_out) {
  StartRecord rec;
  rec.psi_start = psi_start;
  SegmentCostTable table0(spec, data, psi_start, box, options.newton);
  auto r = fit_fixed_psi(spec, data, table0, options.min_segment_length);
  ChangePointConfig cps = r.change_points;
  ParameterState params{psi_start, r.thetas};
  double ll = full_loglik(spec, data, cps, params);
  rec.trace.push_back(ll);

  for (int it = 1; it <= options.max_outer_iters; ++it) {
    rec.outer_iterations = it;
    auto [joint, joint_ll] = maximize_at_fixed_cps(spec, data, cps, params, box, options.newton);
    joint_ll = full_loglik(spec, data, cps, joint);
    SegmentCostTable table(spec, data, joint.psi, box, options.newton);
    auto dp = fit_fixed_psi(spec, data, table, options.min_segment_length);
    ParameterState dp_params{joint.psi, dp.thetas};
    const double dp_ll = full_loglik(spec, data, dp.change_points, dp_params);

    ChangePointConfig next_cps = cps;
    ParameterState next = joint;
    double next_ll = joint_ll;
    if (dp_ll >= joint_ll) {
      next_cps = dp.change_points;
      next = dp_params;
      next_ll = dp_ll;
    }
    if (next_ll < ll) {
      if (ll - next_ll > 1e-9 * (1.0 + std::abs(ll)))
        throw InternalError("profile iteration decreased the log-likelihood from " + std::to_string(ll) + " to " +
                            std::to_string(next_ll));
      rec.converged = true;
      break;
    }
    const double increase = next_ll - ll;
    const double step = (next.psi - params.psi).norm();
    const bool unchanged = next_cps == cps;
    cps = std::move(next_cps);
    params = std::move(next);
    ll = next_ll;
    rec.trace.push_back(ll);
    if (increase < options.tol * (1.0 + std::abs(ll)) || (unchanged && step < options.tol)) {
      rec.converged = true;
      break;
    }
  }
  for (std::size_t q = 1; q < rec.trace.size(); ++q)
    if (rec.trace[q] < rec.trace[q - 1]) throw InternalError("log-likelihood trace is not monotone");
  rec.succeeded = true;
  rec.loglik = ll;
  rec.change_points = cps;
  rec.psi = params.psi;
  cps_out = std::move(cps);
  params_out = std::move(params);
  return rec;
}

inline void finish_fit(const ModelSpec& spec, const Dataset& data, const ParameterBox& box, FitResult& result,
                       bool compute_inference) {
  result.loglik = full_loglik(spec, data, result.change_points, result.params);
  const Vec x = result.params.packed(), lo = packed_lower(spec, box), hi = packed_upper(spec, box);
  result.diagnostics.at_box_bound.assign(static_cast<std::size_t>(x.size()), false);
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    const double margin = 1e-8 * (hi[c] - lo[c]);
    result.diagnostics.at_box_bound[static_cast<std::size_t>(c)] = x[c] <= lo[c] + margin || x[c] >= hi[c] - margin;
  }
  result.diagnostics.indistinct_neighbors.assign(spec.k(), false);
  for (std::size_t j = 0; j < spec.k(); ++j) {
    if (spec.family(j).descriptor() != spec.family(j + 1).descriptor()) continue;
    const Vec& a = result.params.thetas[j];
    const Vec& b = result.params.thetas[j + 1];
    result.diagnostics.indistinct_neighbors[j] = (a - b).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + a.cwiseAbs().maxCoeff());
  }
  result.info = plugin_info(spec, data, result.change_points, result.params);
  result.std_errors = Vec::Constant(x.size(), std::numeric_limits<double>::quiet_NaN());
  if (!compute_inference) return;
  try {
    const auto inv = invert_info(result.info);
    result.diagnostics.condition_number = inv.condition_number;
    for (Eigen::Index c = 0; c < x.size(); ++c) result.std_errors[c] = std::sqrt(std::max(0.0, inv.covariance(c, c)));
  } catch (const InferenceError& e) {
    result.diagnostics.inference_error = e.what();
  }
}

}  // namespace detail

/// Joint MLE (n̂, θ̂, ψ̂). With no common parameter a single exact dynamic-programming pass
/// suffices; otherwise the profile loop runs from every ψ start and the best result wins.
inline FitResult fit(const ModelSpec& spec, const Dataset& data, const FitOptions& options = {}) {
  detail::check_fit_inputs(spec, data, options.min_segment_length);
  const ParameterBox box = spec.resolve_box(data);
  FitResult result;

  if (spec.common_dim() == 0) {
    SegmentCostTable table(spec, data, Vec(), box, options.newton);
    auto r = fit_fixed_psi(spec, data, table, options.min_segment_length);
    result.change_points = r.change_points;
    result.params = ParameterState{Vec(), r.thetas};
    StartRecord rec;
    rec.succeeded = rec.converged = true;
    rec.loglik = r.loglik;
    rec.trace = {full_loglik(spec, data, result.change_points, result.params)};
    rec.change_points = result.change_points;
    result.diagnostics.starts.push_back(rec);
    result.diagnostics.trace = rec.trace;
    detail::finish_fit(spec, data, box, result, options.compute_inference);
    return result;
  }

  std::vector<Vec> starts;
  if (options.pooled_start) starts.push_back(detail::pooled_psi(spec, data, box, options.newton));
  for (const auto& s : options.psi_starts) {
    if (static_cast<std::size_t>(s.size()) != spec.common_dim())
      throw ArgumentError("psi start has dimension " + std::to_string(s.size()) + ", expected " +
                          std::to_string(spec.common_dim()));
    if (!box.psi.contains(s)) throw ArgumentError("psi start lies outside the psi box");
    if (std::none_of(starts.begin(), starts.end(), [&](const Vec& v) { return v == s; })) starts.push_back(s);
  }
  if (starts.empty()) throw ArgumentError("no psi starts: enable the pooled start or supply psi_starts");

  bool have = false;
  double best_ll = -std::numeric_limits<double>::infinity();
  std::string failures;
  for (std::size_t q = 0; q < starts.size(); ++q) {
    ChangePointConfig cps;
    ParameterState params;
    StartRecord rec;
    try {
      rec = detail::profile_from(spec, data, box, starts[q], options, cps, params);
    } catch (const OptimizationError& e) {
      rec.psi_start = starts[q];
      rec.error = e.what();
      failures += (failures.empty() ? "" : "; ") + rec.error;
      result.diagnostics.starts.push_back(rec);
      continue;
    }
    if (!have || rec.loglik > best_ll) {
      have = true;
      best_ll = rec.loglik;
      result.change_points = cps;
      result.params = params;
      result.diagnostics.winning_start = q;
    }
    result.diagnostics.starts.push_back(std::move(rec));
  }
  if (!have) throw OptimizationError("every psi start failed: " + failures, starts.front(), std::numeric_limits<double>::infinity());

  const auto& win = result.diagnostics.starts[result.diagnostics.winning_start];
  result.diagnostics.trace = win.trace;
  result.diagnostics.outer_iterations = win.outer_iterations;
  result.diagnostics.converged = win.converged;
  for (const auto& rec : result.diagnostics.starts) {
    if (!rec.succeeded || &rec == &win) continue;
    const bool close = rec.loglik >= best_ll - options.tol * (1.0 + std::abs(best_ll));
    const bool different = !(rec.change_points == win.change_points) ||
                           (rec.psi - win.psi).norm() > 1e-6 * (1.0 + win.psi.norm());
    if (close && different) ++result.diagnostics.alternative_maxima;
  }
  detail::finish_fit(spec, data, box, result, options.compute_inference);
  return result;
}

inline InfoMatrix plugin_info(const ModelSpec& spec, const Dataset& data, const FitResult& fit) {
  return plugin_info(spec, data, fit.change_points, fit.params);
}

inline WaldResult wald_intervals(const FitResult& fit, const InfoMatrix& info, double level) {
  return wald_intervals(fit.params.packed(), info, level);
}

/// Number of boundary configurations C(n−1, k), as a double to avoid overflow.
inline double configuration_count(std::size_t n, std::size_t k) {
  if (n == 0 || k > n - 1) return 0.0;
  double c = 1.0;
  for (std::size_t q = 0; q < k; ++q) c = c * static_cast<double>(n - 1 - q) / static_cast<double>(q + 1);
  return std::round(c);
}

/// Reference maximizer by enumerating every configuration (lexicographic order) crossed with
/// psi_grid, with an independent θ maximization on each segment slice.
inline FitResult brute_force_fit(const ModelSpec& spec, const Dataset& data, const std::vector<Vec>& psi_grid = {},
                                 double max_configurations = 1e6) {
  detail::check_fit_inputs(spec, data, 1);
  const std::size_t n = data.size(), k = spec.k();
  const double count = configuration_count(n, k);
  if (count > max_configurations)
    throw SizeError("brute force would enumerate " + std::to_string(count) + " configurations (limit " +
                    std::to_string(max_configurations) + ")");
  std::vector<Vec> grid = psi_grid;
  if (spec.common_dim() == 0) grid = {Vec()};
  if (grid.empty()) throw ArgumentError("brute force needs a psi grid for a model with a common parameter");
  const ParameterBox box = spec.resolve_box(data);
  for (const auto& psi : grid)
    if (static_cast<std::size_t>(psi.size()) != spec.common_dim()) throw ArgumentError("psi grid entry has the wrong dimension");

  auto evaluate = [&](const std::vector<std::size_t>& b, const Vec& psi, std::vector<Vec>* thetas) {
    double total = 0.0;
    for (std::size_t j = 0; j <= k; ++j) {
      const std::size_t s = j == 0 ? 0 : b[j - 1], t = j == k ? n : b[j];
      const auto slice = data.slice(s, t);
      const auto r = segment_mle_theta(spec.family(j), spec.psi_for(j, psi), slice, box.thetas[j]);
      total += r.loglik;
      if (thetas) thetas->push_back(r.theta);
    }
    return total;
  };
  auto for_each_config = [&](auto&& visit) {
    std::vector<std::size_t> b(k);
    for (std::size_t q = 0; q < k; ++q) b[q] = q + 1;
    while (true) {
      if (!visit(b)) return;
      std::size_t q = k;
      while (q > 0 && b[q - 1] == n - 1 - (k - q)) --q;
      if (q == 0) return;
      ++b[q - 1];
      for (std::size_t r = q; r < k; ++r) b[r] = b[r - 1] + 1;
    }
  };

  std::vector<double> values;
  for_each_config([&](const std::vector<std::size_t>& b) {
    for (const auto& psi : grid) values.push_back(evaluate(b, psi, nullptr));
    return true;
  });
  const double best = *std::max_element(values.begin(), values.end());
  const double floor_value = best - tie_tolerance(best);

  std::size_t index = 0;
  FitResult result;
  bool found = false;
  for_each_config([&](const std::vector<std::size_t>& b) {
    for (const auto& psi : grid) {
      if (values[index++] >= floor_value) {
        std::vector<Vec> thetas;
        evaluate(b, psi, &thetas);
        result.change_points = ChangePointConfig(b, n);
        result.params = ParameterState{psi, std::move(thetas)};
        found = true;
        return false;
      }
    }
    return true;
  });
  if (!found) throw InternalError("brute force lost its maximizer");
  StartRecord rec;
  rec.succeeded = rec.converged = true;
  rec.change_points = result.change_points;
  rec.psi = result.params.psi;
  rec.loglik = best;
  rec.trace = {best};
  result.diagnostics.starts.push_back(rec);
  result.diagnostics.trace = rec.trace;
  detail::finish_fit(spec, data, box, result, false);
  return result;
}

}  // namespace cpmle
