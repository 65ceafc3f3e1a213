#pragma once

// Full log-likelihood, the divergence v, overlap counts n_ji, the decomposition
// J = J1 + J2 and the constants of the J1 upper bound with its probe check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "cpmle/families.hpp"
#include "cpmle/parameters.hpp"

namespace cpmle {

/// ℓ = Σ_j Σ_{i in segment j} log f_j(ψ, θ_j; x_i).
inline double full_loglik(const ModelSpec& spec, const Dataset& data, const ChangePointConfig& cps,
                          const ParameterState& params) {
  if (cps.n() != data.size())
    throw ArgumentError("configuration is for n = " + std::to_string(cps.n()) + " but the data has " +
                        std::to_string(data.size()) + " observations");
  if (cps.k() != spec.k())
    throw ArgumentError("configuration has " + std::to_string(cps.k()) + " change points, the model " +
                        std::to_string(spec.k()));
  spec.validate(params);
  double total = 0.0;
  for (std::size_t j = 0; j < cps.segments(); ++j) {
    try {
      total += segment_loglik(spec.family(j), spec.psi_for(j, params.psi), params.thetas[j], data,
                              cps.begin(j), cps.end(j));
    } catch (const DomainError& e) {
      throw DomainError(std::string(e.what()) + " (segment " + std::to_string(j + 1) + ")");
    } catch (const ParameterError& e) {
      throw ParameterError(std::string(e.what()) + " (segment " + std::to_string(j + 1) + ")");
    }
  }
  return total;
}

/// An expectation with its numerical pedigree. std_error is nonzero only for Monte Carlo.
struct Expectation {
  double value = 0.0;
  double std_error = 0.0;
  std::string method;  // identical, closed-form, quadrature, series, monte-carlo
};

struct ExpectationOptions {
  double quadrature_tolerance = 1e-13;
  unsigned quadrature_max_depth = 25;
  /// Achieved quadrature error above this (relative to 1 + |value|) raises IntegrationError.
  double accept_error = 1e-9;
  std::size_t monte_carlo_draws = 1'000'000;
  std::uint64_t seed = default_seed;
};

namespace detail {

inline Vec psi_view(const SegmentFamily& family, const VecIn& psi) {
  return family.psi_dim() == 0 ? Vec() : Vec(psi);
}

inline void check_support_nesting(const SegmentFamily& candidate, const SegmentFamily& truth) {
  if (!support_contains(candidate.support(), candidate.observation_dim(), truth.support(),
                        truth.observation_dim()))
    throw DomainError(candidate.descriptor() + " has support " + to_string(candidate.support()) +
                      ", which does not cover the support " + to_string(truth.support()) + " of " +
                      truth.descriptor() + "; the divergence is -infinity");
}

/// E[h(X)] for X ~ f(ψ, θ; ·) by quadrature, series summation or Monte Carlo.
template <class H>
Expectation expect_numerically(const SegmentFamily& f, const VecIn& psi, const VecIn& theta, H&& h,
                               const ExpectationOptions& options) {
  if (f.observation_dim() == 1 && f.support() == Support::nonnegative_integer) {
    const auto [lo, hi] = f.integration_range(psi, theta);
    long double sum = 0.0L, mass = 0.0L;
    for (double x = std::max(0.0, std::floor(lo)); x <= hi; x += 1.0) {
      const double p = std::exp(f.log_density(psi, theta, Observation(&x, 1)));
      if (p == 0.0) continue;
      sum += static_cast<long double>(p) * h(Observation(&x, 1));
      mass += p;
    }
    const double missing = std::abs(1.0 - static_cast<double>(mass));
    if (missing > options.accept_error)
      throw IntegrationError(f.descriptor() + ": series summation left probability mass " + std::to_string(missing),
                             missing);
    return {static_cast<double>(sum), 0.0, "series"};
  }
  if (f.observation_dim() == 1) {
    const auto [lo, hi] = f.integration_range(psi, theta);
    auto integrand = [&](double x) {
      const double p = std::exp(f.log_density(psi, theta, Observation(&x, 1)));
      return p == 0.0 ? 0.0 : p * h(Observation(&x, 1));
    };
    double error = 0.0;
    const double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        integrand, lo, hi, options.quadrature_max_depth, options.quadrature_tolerance, &error);
    if (!std::isfinite(value) || error > options.accept_error * (1.0 + std::abs(value)))
      throw IntegrationError(f.descriptor() + ": quadrature reached error " + std::to_string(error), error);
    return {value, 0.0, "quadrature"};
  }
  Engine rng = make_stream(options.seed, {0x6b6cULL});
  std::vector<double> draws;
  draws.reserve(options.monte_carlo_draws * f.observation_dim());
  f.sample(psi, theta, options.monte_carlo_draws, rng, draws);
  long double sum = 0.0L, sum_sq = 0.0L;
  const std::size_t p = f.observation_dim();
  for (std::size_t i = 0; i < options.monte_carlo_draws; ++i) {
    const double v = h(Observation(draws.data() + i * p, p));
    sum += v;
    sum_sq += static_cast<long double>(v) * v;
  }
  const auto m = static_cast<long double>(options.monte_carlo_draws);
  const long double mean = sum / m;
  const long double var = std::max(0.0L, (sum_sq / m - mean * mean) * m / (m - 1.0L));
  return {static_cast<double>(mean), static_cast<double>(std::sqrt(var / m)), "monte-carlo"};
}

}  // namespace detail

/// E[log f_j(ψ, θ_j; X)] for X ~ f_i(ψ⁰, θ⁰_i; ·).
inline Expectation expected_log_density(const SegmentFamily& fj, const VecIn& psi, const VecIn& theta,
                                        const SegmentFamily& fi, const VecIn& psi0, const VecIn& theta0,
                                        const ExpectationOptions& options = {}) {
  const Vec pj = detail::psi_view(fj, psi), pi = detail::psi_view(fi, psi0);
  detail::check_parameters(fj, pj, theta);
  detail::check_parameters(fi, pi, theta0);
  detail::check_support_nesting(fj, fi);
  if (auto m = fi.moments(pi, theta0))
    if (auto e = fj.expected_log_density(pj, theta, *m)) return {*e, 0.0, "closed-form"};
  return detail::expect_numerically(
      fi, pi, theta0, [&](Observation x) { return fj.log_density(pj, theta, x); }, options);
}

/// v(ψ, θ_j; ψ⁰, θ⁰_i) = E_i[log f_j(ψ, θ_j; X) − log f_i(ψ⁰, θ⁰_i; X)], the negative
/// Kullback–Leibler divergence of f_j from f_i.
inline Expectation kl_v_detailed(const SegmentFamily& fj, const VecIn& psi, const VecIn& theta,
                                 const SegmentFamily& fi, const VecIn& psi0, const VecIn& theta0,
                                 const ExpectationOptions& options = {}) {
  const Vec pj = detail::psi_view(fj, psi), pi = detail::psi_view(fi, psi0);
  detail::check_parameters(fj, pj, theta);
  detail::check_parameters(fi, pi, theta0);
  detail::check_support_nesting(fj, fi);
  if (fj.descriptor() == fi.descriptor() && pj == pi && Vec(theta) == Vec(theta0)) return {0.0, 0.0, "identical"};
  if (auto v = fj.divergence_from(pj, theta, fi, pi, theta0)) return {*v, 0.0, "closed-form"};
  if (auto m = fi.moments(pi, theta0)) {
    auto cross = fj.expected_log_density(pj, theta, *m);
    auto self = fi.negative_entropy(pi, theta0);
    if (cross && self) return {*cross - *self, 0.0, "closed-form"};
  }
  return detail::expect_numerically(
      fi, pi, theta0,
      [&](Observation x) { return fj.log_density(pj, theta, x) - fi.log_density(pi, theta0, x); }, options);
}

inline double kl_v(const SegmentFamily& fj, const VecIn& psi, const VecIn& theta, const SegmentFamily& fi,
                   const VecIn& psi0, const VecIn& theta0, const ExpectationOptions& options = {}) {
  return kl_v_detailed(fj, psi, theta, fi, psi0, theta0, options).value;
}

/// Pluggable v, so the checks can be exercised against a corrupted implementation.
using DivergenceFn = std::function<Expectation(const SegmentFamily&, const VecIn&, const VecIn&,
                                               const SegmentFamily&, const VecIn&, const VecIn&)>;

inline DivergenceFn default_divergence(ExpectationOptions options = {}) {
  return [options](const SegmentFamily& fj, const VecIn& psi, const VecIn& theta, const SegmentFamily& fi,
                   const VecIn& psi0, const VecIn& theta0) {
    return kl_v_detailed(fj, psi, theta, fi, psi0, theta0, options);
  };
}

/// n_ji = |(n_{j-1}, n_j] ∩ (n⁰_{i-1}, n⁰_i]|, rows j over candidate segments, columns i
/// over true segments.
class OverlapMatrix {
 public:
  OverlapMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), cells_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t operator()(std::size_t j, std::size_t i) const { return cells_[j * cols_ + i]; }
  std::size_t& operator()(std::size_t j, std::size_t i) { return cells_[j * cols_ + i]; }

  std::size_t row_sum(std::size_t j) const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < cols_; ++i) s += (*this)(j, i);
    return s;
  }
  std::size_t col_sum(std::size_t i) const {
    std::size_t s = 0;
    for (std::size_t j = 0; j < rows_; ++j) s += (*this)(j, i);
    return s;
  }
  std::size_t total() const {
    std::size_t s = 0;
    for (auto c : cells_) s += c;
    return s;
  }

  friend bool operator==(const OverlapMatrix&, const OverlapMatrix&) = default;

 private:
  std::size_t rows_, cols_;
  std::vector<std::size_t> cells_;
};

inline OverlapMatrix overlap_counts(std::size_t n, const ChangePointConfig& cps, const ChangePointConfig& truth) {
  if (cps.n() != n || truth.n() != n)
    throw ArgumentError("overlap counts need both configurations on n = " + std::to_string(n));
  OverlapMatrix m(cps.segments(), truth.segments());
  for (std::size_t j = 0; j < cps.segments(); ++j)
    for (std::size_t i = 0; i < truth.segments(); ++i) {
      const std::size_t lo = std::max(cps.begin(j), truth.begin(i));
      const std::size_t hi = std::min(cps.end(j), truth.end(i));
      m(j, i) = hi > lo ? hi - lo : 0;
    }
  return m;
}

namespace detail {

inline void check_same_shape(const ModelSpec& spec, const ChangePointConfig& cps, const ChangePointConfig& truth) {
  if (cps.k() != spec.k() || truth.k() != spec.k())
    throw ArgumentError("configurations must have k = " + std::to_string(spec.k()) + " change points");
  if (cps.n() != truth.n()) throw ArgumentError("candidate and true configurations have different n");
}

}  // namespace detail

/// J1 = Σ_j Σ_i (n_ji/n) v(ψ, θ_j; ψ⁰, θ⁰_i); empty cells contribute nothing.
inline Expectation j1_detailed(const ModelSpec& spec, const ChangePointConfig& cps, const ParameterState& params,
                               const ParameterState& true_params, const ChangePointConfig& true_cps,
                               const DivergenceFn& divergence = default_divergence()) {
  detail::check_same_shape(spec, cps, true_cps);
  spec.validate(params);
  spec.validate(true_params);
  const auto counts = overlap_counts(cps.n(), cps, true_cps);
  const auto n = static_cast<double>(cps.n());
  double value = 0.0, variance = 0.0;
  for (std::size_t j = 0; j < counts.rows(); ++j)
    for (std::size_t i = 0; i < counts.cols(); ++i) {
      if (counts(j, i) == 0) continue;
      const double w = static_cast<double>(counts(j, i)) / n;
      const auto v = divergence(spec.family(j), params.psi, params.thetas[j], spec.family(i), true_params.psi,
                                true_params.thetas[i]);
      value += w * v.value;
      variance += w * w * v.std_error * v.std_error;
    }
  return {value, std::sqrt(variance), "weighted-divergence"};
}

inline double j1(const ModelSpec& spec, const ChangePointConfig& cps, const ParameterState& params,
                 const ParameterState& true_params, const ChangePointConfig& true_cps,
                 const DivergenceFn& divergence = default_divergence()) {
  return j1_detailed(spec, cps, params, true_params, true_cps, divergence).value;
}

namespace detail {

/// E[j][i] = E_i[log f_j(ψ, θ_j; X)] and E0[i] = E_i[log f_i(ψ⁰, θ⁰_i; X)].
struct ExpectationTable {
  std::vector<std::vector<double>> cross;
  std::vector<double> self;
};

inline ExpectationTable expectation_table(const ModelSpec& spec, const ParameterState& params,
                                          const ParameterState& true_params, const ExpectationOptions& options) {
  ExpectationTable t;
  const std::size_t s = spec.segments();
  t.cross.assign(s, std::vector<double>(s, 0.0));
  t.self.assign(s, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    t.self[i] = expected_log_density(spec.family(i), true_params.psi, true_params.thetas[i], spec.family(i),
                                     true_params.psi, true_params.thetas[i], options)
                    .value;
    for (std::size_t j = 0; j < s; ++j)
      t.cross[j][i] = expected_log_density(spec.family(j), params.psi, params.thetas[j], spec.family(i),
                                           true_params.psi, true_params.thetas[i], options)
                          .value;
  }
  return t;
}

}  // namespace detail

/// J2 = (1/n) Σ_j Σ_{t in candidate segment j} {log f_j(ψ, θ_j; x_t) − E log f_j(ψ, θ_j; X_t)}
///    − (1/n) Σ_i Σ_{t in true segment i} {log f_i(ψ⁰, θ⁰_i; x_t) − E log f_i(ψ⁰, θ⁰_i; X_t)}.
inline double j2(const ModelSpec& spec, const Dataset& data, const ChangePointConfig& cps,
                 const ParameterState& params, const ChangePointConfig& true_cps, const ParameterState& true_params,
                 const ExpectationOptions& options = {}) {
  detail::check_same_shape(spec, cps, true_cps);
  if (data.size() != cps.n()) throw ArgumentError("data size does not match the configurations");
  spec.validate(params);
  spec.validate(true_params);
  const auto table = detail::expectation_table(spec, params, true_params, options);
  double candidate = 0.0, truth = 0.0;
  for (std::size_t j = 0; j < cps.segments(); ++j) {
    const auto& f = spec.family(j);
    const Vec psi = spec.psi_for(j, params.psi);
    for (std::size_t t = cps.begin(j); t < cps.end(j); ++t) {
      detail::check_observation(f, data.row(t), t);
      candidate += f.log_density(psi, params.thetas[j], data.row(t)) - table.cross[j][true_cps.segment_of(t)];
    }
  }
  for (std::size_t i = 0; i < true_cps.segments(); ++i) {
    const auto& f = spec.family(i);
    const Vec psi = spec.psi_for(i, true_params.psi);
    for (std::size_t t = true_cps.begin(i); t < true_cps.end(i); ++t) {
      detail::check_observation(f, data.row(t), t);
      truth += f.log_density(psi, true_params.thetas[i], data.row(t)) - table.self[i];
    }
  }
  return (candidate - truth) / static_cast<double>(cps.n());
}

/// J2 regrouped by the cells ñ_ji of indices in candidate segment j and true segment i.
inline double j2_regrouped(const ModelSpec& spec, const Dataset& data, const ChangePointConfig& cps,
                           const ParameterState& params, const ChangePointConfig& true_cps,
                           const ParameterState& true_params, const ExpectationOptions& options = {}) {
  detail::check_same_shape(spec, cps, true_cps);
  if (data.size() != cps.n()) throw ArgumentError("data size does not match the configurations");
  spec.validate(params);
  spec.validate(true_params);
  const auto table = detail::expectation_table(spec, params, true_params, options);
  double total = 0.0;
  for (std::size_t j = 0; j < cps.segments(); ++j) {
    const auto& fj = spec.family(j);
    const Vec psi = spec.psi_for(j, params.psi);
    for (std::size_t i = 0; i < true_cps.segments(); ++i) {
      const std::size_t lo = std::max(cps.begin(j), true_cps.begin(i));
      const std::size_t hi = std::min(cps.end(j), true_cps.end(i));
      if (hi <= lo) continue;
      const auto& fi = spec.family(i);
      const Vec psi0 = spec.psi_for(i, true_params.psi);
      double cand = 0.0, tru = 0.0;
      for (std::size_t t = lo; t < hi; ++t) {
        detail::check_observation(fj, data.row(t), t);
        detail::check_observation(fi, data.row(t), t);
        cand += fj.log_density(psi, params.thetas[j], data.row(t));
        tru += fi.log_density(psi0, true_params.thetas[i], data.row(t));
      }
      const auto cell = static_cast<double>(hi - lo);
      total += (cand - cell * table.cross[j][i]) - (tru - cell * table.self[i]);
    }
  }
  return total / static_cast<double>(cps.n());
}

/// Resolution of the searches behind the suprema in G_i and ϱ.
struct SearchGrid {
  std::size_t points_per_dim = 20;
  /// Up to this many dimensions the full lattice is scanned, beyond it random_points draws.
  std::size_t max_lattice_dims = 3;
  std::size_t random_points = 8000;
  std::size_t refine_from = 5;
  std::uint64_t seed = default_seed;
};

struct LemmaOneConstants {
  double delta_lambda0 = 0.0;
  std::vector<double> G;  // G_i, i = 1..k
  double G_bar = 0.0;
  double rho_sup = 0.0;  // ϱ
  double C1 = 0.0;
  double C2 = 0.0;
  std::string note;
};

namespace detail {

/// sup of F over the box: lattice or random scan, then Nelder–Mead from the best points.
template <class F>
double box_supremum(F&& objective, const Vec& lower, const Vec& upper, const SearchGrid& grid,
                    const std::vector<Vec>& seeds = {}) {
  auto safe = [&](const Vec& z) {
    try {
      const double v = objective(z);
      return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
    } catch (const DomainError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  const Eigen::Index dim = lower.size();
  if (dim == 0) return safe(Vec());

  // Coordinates spanning several orders of magnitude on the positive axis are scanned
  // geometrically.
  auto place = [&](Eigen::Index d, double frac) {
    if (lower[d] > 0.0 && upper[d] / lower[d] > 1e3) return lower[d] * std::pow(upper[d] / lower[d], frac);
    return lower[d] + frac * (upper[d] - lower[d]);
  };
  std::vector<std::pair<double, Vec>> scanned;
  for (const auto& z : seeds)
    if (z.size() == dim) scanned.emplace_back(safe(z), z);
  if (static_cast<std::size_t>(dim) <= grid.max_lattice_dims) {
    const std::size_t p = std::max<std::size_t>(grid.points_per_dim, 2);
    std::size_t total = 1;
    for (Eigen::Index d = 0; d < dim; ++d) total *= p;
    Vec z(dim);
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t rest = idx;
      for (Eigen::Index d = 0; d < dim; ++d) {
        const double frac = static_cast<double>(rest % p) / static_cast<double>(p - 1);
        rest /= p;
        z[d] = place(d, frac);
      }
      scanned.emplace_back(safe(z), z);
    }
  } else {
    Engine rng = make_stream(grid.seed, {static_cast<std::uint64_t>(dim)});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec z(dim);
    for (std::size_t idx = 0; idx < grid.random_points; ++idx) {
      for (Eigen::Index d = 0; d < dim; ++d) z[d] = place(d, u(rng));
      scanned.emplace_back(safe(z), z);
    }
  }
  const std::size_t keep = std::min(grid.refine_from, scanned.size());
  std::partial_sort(scanned.begin(), scanned.begin() + static_cast<std::ptrdiff_t>(keep), scanned.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  double best = scanned.front().first;
  for (std::size_t q = 0; q < keep; ++q) {
    if (!std::isfinite(scanned[q].first)) continue;
    auto r = minimize_nelder_mead([&](const Vec& z) { return -safe(z); }, scanned[q].second, lower, upper);
    best = std::max(best, -r.value);
  }
  return best;
}

/// Search space of segment family j: (ψ, θ_j) when it uses ψ, else θ_j.
struct SearchSpace {
  Vec lower, upper;
  std::size_t psi_dim = 0;
};

inline SearchSpace search_space(const ModelSpec& spec, const ParameterBox& box, std::size_t j) {
  SearchSpace s;
  s.psi_dim = spec.uses_psi(j) ? spec.common_dim() : 0;
  const auto dp = static_cast<Eigen::Index>(s.psi_dim);
  const auto dt = box.thetas[j].size();
  s.lower.resize(dp + dt);
  s.upper.resize(dp + dt);
  if (dp > 0) {
    s.lower.head(dp) = box.psi.lower;
    s.upper.head(dp) = box.psi.upper;
  }
  s.lower.tail(dt) = box.thetas[j].lower;
  s.upper.tail(dt) = box.thetas[j].upper;
  return s;
}

inline double min_fraction_gap(const ChangePointConfig& cps) {
  double prev = 0.0, gap = 1.0;
  for (double f : cps.fractions()) {
    gap = std::min(gap, f - prev);
    prev = f;
  }
  return std::min(gap, 1.0 - prev);
}

}  // namespace detail

/// Δ⁰_λ, G_i, Ḡ, ϱ and the constants C1, C2 of J1 ≤ −max{C1‖λ − λ⁰‖∞, C2 ρ(φ, φ⁰)}.
/// Δ⁰_λ is the smallest gap between consecutive entries of (0, λ⁰_1, ..., λ⁰_k, 1).
inline LemmaOneConstants lemma1_constants(const ModelSpec& spec, const ParameterState& true_params,
                                          const ChangePointConfig& true_cps, const ParameterBox& box,
                                          const SearchGrid& grid = {},
                                          const DivergenceFn& divergence = default_divergence()) {
  if (spec.k() == 0) throw ArgumentError("the J1 bound needs at least one change point");
  if (true_cps.k() != spec.k()) throw ArgumentError("true configuration does not match k");
  spec.validate(true_params, &box);

  LemmaOneConstants c;
  c.delta_lambda0 = detail::min_fraction_gap(true_cps);

  auto evaluate = [&](std::size_t j, const detail::SearchSpace& s, const Vec& z, std::size_t i) {
    const Vec psi = s.psi_dim > 0 ? Vec(z.head(static_cast<Eigen::Index>(s.psi_dim))) : Vec();
    const Vec theta = z.tail(z.size() - static_cast<Eigen::Index>(s.psi_dim));
    if (!spec.family(j).valid_parameters(psi, theta)) throw DomainError("outside the natural domain");
    return divergence(spec.family(j), psi, theta, spec.family(i), true_params.psi, true_params.thetas[i]).value;
  };

  // The true parameters of the two adjacent segments, and their midpoint, join the scan
  // whenever segment j's family can take them.
  auto seeds_for = [&](std::size_t j, const detail::SearchSpace& s, std::initializer_list<std::size_t> truths) {
    std::vector<Vec> seeds;
    for (std::size_t i : truths) {
      if (spec.family(i).descriptor() != spec.family(j).descriptor()) continue;
      Vec z(s.lower.size());
      z.head(static_cast<Eigen::Index>(s.psi_dim)) = true_params.psi.head(static_cast<Eigen::Index>(s.psi_dim));
      z.tail(true_params.thetas[i].size()) = true_params.thetas[i];
      seeds.push_back(z.cwiseMax(s.lower).cwiseMin(s.upper));
    }
    if (seeds.size() == 2) seeds.push_back(0.5 * (seeds[0] + seeds[1]));
    return seeds;
  };

  c.G_bar = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < spec.k(); ++i) {
    double g = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < spec.segments(); ++j) {
      const auto s = detail::search_space(spec, box, j);
      g = std::max(g, detail::box_supremum(
                          [&](const Vec& z) { return evaluate(j, s, z, i + 1) + evaluate(j, s, z, i); },
                          s.lower, s.upper, grid, seeds_for(j, s, {i, i + 1})));
    }
    c.G.push_back(g);
    c.G_bar = std::max(c.G_bar, g);
  }
  if (!(c.G_bar < -1e-10)) {
    std::ostringstream os;
    os << "adjacent true segments are not distinguishable: G-bar = " << c.G_bar << " is not negative";
    throw IdentifiabilityError(os.str());
  }

  c.rho_sup = 0.0;
  for (std::size_t j = 0; j < spec.segments(); ++j) {
    const auto s = detail::search_space(spec, box, j);
    c.rho_sup = std::max(c.rho_sup, detail::box_supremum([&](const Vec& z) { return std::abs(evaluate(j, s, z, j)); },
                                                         s.lower, s.upper, grid));
  }

  const double quarter = (c.delta_lambda0 / 2.0) * (c.delta_lambda0 / 2.0);
  c.C1 = quarter * std::abs(c.G_bar) / 2.0;
  c.C2 = c.rho_sup > 0.0 ? std::min(quarter * std::abs(c.G_bar) / (2.0 * c.rho_sup), c.delta_lambda0 / 2.0)
                         : c.delta_lambda0 / 2.0;
  c.note = "C2 uses the supremum of |v| over the whole box, so it holds uniformly in phi";
  return c;
}

struct LemmaCheckOptions {
  std::size_t probes = 10'000;
  std::uint64_t seed = default_seed;
  double tolerance = 1e-9;
  /// Width of the allowance, in standard errors, when v comes from Monte Carlo.
  double std_error_guard = 4.0;
  bool throw_on_violation = true;
};

struct LemmaCheckReport {
  std::size_t probes = 0;
  std::size_t violations = 0;
  double worst_slack = -std::numeric_limits<double>::infinity();
  std::size_t worst_probe = 0;
  std::string worst_description;
  std::string first_violation;
};

/// Evaluates slack = J1 + max{C1‖λ − λ⁰‖∞, C2 ρ(φ, φ⁰)} at random (λ, φ): λ on the lattice
/// of feasible fractions for n = true_cps.n(), φ uniform in the box. Probe 0 is (λ⁰, φ⁰).
inline LemmaCheckReport lemma1_check(const ModelSpec& spec, const ParameterState& true_params,
                                     const ChangePointConfig& true_cps, const ParameterBox& box,
                                     const LemmaOneConstants& constants, const LemmaCheckOptions& options = {},
                                     const DivergenceFn& divergence = default_divergence()) {
  const std::size_t n = true_cps.n(), k = spec.k();
  if (n < k + 1) throw ArgumentError("n is too small for k change points");
  LemmaCheckReport report;
  report.probes = options.probes;

  for (std::size_t probe = 0; probe < options.probes; ++probe) {
    ChangePointConfig cps = true_cps;
    ParameterState phi = true_params;
    if (probe > 0) {
      Engine rng = make_stream(options.seed, {probe});
      std::vector<std::size_t> b;
      std::uniform_int_distribution<std::size_t> pick(1, n - 1);
      while (b.size() < k) {
        const std::size_t c = pick(rng);
        if (std::find(b.begin(), b.end(), c) == b.end()) b.push_back(c);
      }
      std::sort(b.begin(), b.end());
      cps = ChangePointConfig(std::move(b), n);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (Eigen::Index d = 0; d < phi.psi.size(); ++d)
        phi.psi[d] = box.psi.lower[d] + u(rng) * (box.psi.upper[d] - box.psi.lower[d]);
      for (std::size_t j = 0; j < phi.thetas.size(); ++j)
        for (Eigen::Index d = 0; d < phi.thetas[j].size(); ++d)
          phi.thetas[j][d] = box.thetas[j].lower[d] + u(rng) * (box.thetas[j].upper[d] - box.thetas[j].lower[d]);
    }

    double j1_value = 0.0, j1_se = 0.0;
    try {
      const auto e = j1_detailed(spec, cps, phi, true_params, true_cps, divergence);
      j1_value = e.value;
      j1_se = e.std_error;
    } catch (const DomainError&) {
      j1_value = -std::numeric_limits<double>::infinity();
    }
    double rho = 0.0, rho_se = 0.0;
    for (std::size_t j = 0; j < spec.segments(); ++j) {
      const auto v = divergence(spec.family(j), phi.psi, phi.thetas[j], spec.family(j), true_params.psi,
                                true_params.thetas[j]);
      if (std::abs(v.value) > rho) {
        rho = std::abs(v.value);
        rho_se = v.std_error;
      }
    }
    const double lambda_err = sup_norm_fraction_error(cps, true_cps);
    const double bound = std::max(constants.C1 * lambda_err, constants.C2 * rho);
    const double slack = j1_value + bound;
    const double allowance = options.tolerance + options.std_error_guard * (j1_se + constants.C2 * rho_se);

    auto describe = [&] {
      std::ostringstream os;
      os.precision(10);
      os << "probe " << probe << ": boundaries (";
      for (std::size_t q = 0; q < cps.k(); ++q) os << (q ? ", " : "") << cps.boundaries()[q];
      os << "), phi = (" << phi.packed().transpose() << "), J1 = " << j1_value << ", bound = " << -bound
         << ", slack = " << slack;
      return os.str();
    };
    if (slack > report.worst_slack || probe == 0) {
      report.worst_slack = std::max(report.worst_slack, slack);
      if (report.worst_slack == slack) {
        report.worst_probe = probe;
        report.worst_description = describe();
      }
    }
    if (slack > allowance) {
      if (report.violations == 0) report.first_violation = describe();
      ++report.violations;
    }
  }
  if (report.violations > 0 && options.throw_on_violation)
    throw LemmaCheckError("J1 bound violated on " + std::to_string(report.violations) + " of " +
                          std::to_string(report.probes) + " probes; first " + report.first_violation);
  return report;
}

}  // namespace cpmle
