#pragma once

// Scenario generation and the Monte Carlo suites for consistency, the 1/n rate and
// asymptotic normality, plus the unit-variance mean-shift profile statistic demo.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "cpmle/estimator.hpp"
#include "cpmle/parallel.hpp"

namespace cpmle {

struct ScenarioSpec {
  std::string name = "custom";
  ModelSpec model;
  ParameterState truth;
  std::vector<double> fractions;
  std::vector<std::size_t> sizes;
  std::size_t reps = 500;
  std::uint64_t seed = default_seed;
  FitOptions fit_options;
  double level = 0.95;
  std::vector<double> deltas{5.0, 10.0, 20.0};
  /// Ceiling on P(n‖λ̂ − λ⁰‖∞ ≥ largest δ) at the largest n.
  double rate_target = 0.10;
  unsigned threads = 0;

  void validate() const {
    if (fractions.size() != model.k())
      throw ArgumentError("scenario lists " + std::to_string(fractions.size()) + " fractions for k = " +
                          std::to_string(model.k()));
    double prev = 0.0;
    for (double f : fractions) {
      if (!(f > prev && f < 1.0)) throw ArgumentError("change-point fractions must increase strictly inside (0, 1)");
      prev = f;
    }
    if (reps == 0) throw ArgumentError("replication count must be at least 1");
    for (std::size_t q = 0; q < sizes.size(); ++q) {
      if (q > 0 && sizes[q] <= sizes[q - 1]) throw ArgumentError("sample sizes must increase");
      ChangePointConfig::from_fractions(fractions, sizes[q]);
    }
    model.validate(truth);
  }
};

inline ChangePointConfig true_config(const ScenarioSpec& scenario, std::size_t n) {
  try {
    return ChangePointConfig::from_fractions(scenario.fractions, n);
  } catch (const ArgumentError& e) {
    throw ArgumentError("n = " + std::to_string(n) + " gives degenerate true boundaries: " + e.what());
  }
}

/// Segment j fills rows (n⁰_{j−1}, n⁰_j] with draws from f_j(ψ⁰, θ⁰_j), n⁰_j = ⌊n λ⁰_j⌋, from
/// the stream keyed by (seed, n, rep, j).
inline Dataset generate(const ScenarioSpec& scenario, std::size_t n, std::size_t rep) {
  const auto cps = true_config(scenario, n);
  const auto& spec = scenario.model;
  std::vector<double> values;
  values.reserve(n * spec.observation_dim());
  for (std::size_t j = 0; j < cps.segments(); ++j) {
    Engine rng = make_stream(scenario.seed, {n, rep, j});
    spec.family(j).sample(spec.psi_for(j, scenario.truth.psi), scenario.truth.thetas[j], cps.length(j), rng, values);
  }
  return Dataset(std::move(values), spec.observation_dim());
}

struct ReplicationRecord {
  std::size_t rep = 0;
  bool failed = false;
  std::string error;
  std::vector<std::size_t> boundaries;
  double lambda_error = 0.0;     // ‖λ̂ − λ⁰‖∞
  std::size_t scaled_error = 0;  // n‖λ̂ − λ⁰‖∞ = max_j |n̂_j − n⁰_j|
  std::vector<double> theta_error;
  double psi_error = std::numeric_limits<double>::quiet_NaN();
  Vec estimate;
  Vec std_errors;
  std::vector<double> z;
  std::vector<bool> covered;
};

struct Check {
  std::string name;
  bool passed = true;
  std::string detail;
  bool informational = false;
};

struct SizeSummary {
  std::size_t n = 0;
  std::size_t failures = 0;
  double median_lambda_error = 0.0;
  double median_scaled_error = 0.0;
  std::vector<double> median_theta_error;
  double median_psi_error = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> tail_probability;  // per δ
  std::vector<double> coverage;          // per packed coordinate
  std::vector<double> mean_z;
  std::vector<double> ks_distance;
  std::size_t inference_failures = 0;
  std::vector<ReplicationRecord> records;
};

struct MonteCarloReport {
  std::string suite;
  std::string scenario;
  std::uint64_t seed = 0;
  std::size_t reps = 0;
  double level = 0.0;
  std::vector<double> deltas;
  std::vector<SizeSummary> sizes;
  std::vector<Check> checks;
  std::vector<std::string> notes;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.informational || c.passed; });
  }
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  const double upper = v[h];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h));
  return 0.5 * (lower + upper);
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  os.precision(6);
  for (std::size_t q = 0; q < v.size(); ++q) os << (q ? ", " : "") << v[q];
  return os.str();
}

/// Kolmogorov–Smirnov distance between the empirical law of z and N(0, 1).
inline double ks_to_normal(std::vector<double> z) {
  if (z.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(z.begin(), z.end());
  const boost::math::normal_distribution<double> normal;
  const auto m = static_cast<double>(z.size());
  double d = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double f = boost::math::cdf(normal, z[i]);
    d = std::max({d, static_cast<double>(i + 1) / m - f, f - static_cast<double>(i) / m});
  }
  return d;
}

inline ReplicationRecord replicate(const ScenarioSpec& scenario, std::size_t n, std::size_t rep, double z_crit) {
  ReplicationRecord r;
  r.rep = rep;
  const auto& spec = scenario.model;
  const auto truth_cps = true_config(scenario, n);
  try {
    const Dataset data = generate(scenario, n, rep);
    const FitResult f = fit(spec, data, scenario.fit_options);
    r.boundaries = f.change_points.boundaries();
    r.scaled_error = max_boundary_error(f.change_points, truth_cps);
    r.lambda_error = sup_norm_fraction_error(f.change_points, truth_cps);
    for (std::size_t j = 0; j < spec.segments(); ++j)
      r.theta_error.push_back((f.params.thetas[j] - scenario.truth.thetas[j]).cwiseAbs().maxCoeff());
    if (spec.common_dim() > 0) r.psi_error = (f.params.psi - scenario.truth.psi).cwiseAbs().maxCoeff();
    r.estimate = f.params.packed();
    r.std_errors = f.std_errors;
    const Vec truth = scenario.truth.packed();
    for (Eigen::Index c = 0; c < r.estimate.size(); ++c) {
      const double se = f.std_errors[c];
      if (!(se > 0.0) || !std::isfinite(se)) {
        r.z.clear();
        r.covered.clear();
        break;
      }
      const double z = (r.estimate[c] - truth[c]) / se;
      r.z.push_back(z);
      r.covered.push_back(std::abs(z) <= z_crit);
    }
  } catch (const Error& e) {
    r.failed = true;
    r.error = e.what();
  }
  return r;
}

inline SizeSummary run_size(const ScenarioSpec& scenario, std::size_t n) {
  SizeSummary s;
  s.n = n;
  const double z_crit = normal_critical_value(scenario.level);
  s.records.resize(scenario.reps);
  parallel_for(
      scenario.reps, [&](std::size_t rep) { s.records[rep] = replicate(scenario, n, rep, z_crit); }, scenario.threads);

  const auto& spec = scenario.model;
  const std::size_t dim = spec.packed_dim();
  std::vector<double> lam, scaled, psi;
  std::vector<std::vector<double>> theta(spec.segments()), z(dim);
  std::vector<std::size_t> covered(dim, 0);
  std::vector<std::size_t> tails(scenario.deltas.size(), 0);
  std::size_t ok = 0, with_z = 0;
  for (const auto& r : s.records) {
    if (r.failed) {
      ++s.failures;
      continue;
    }
    ++ok;
    lam.push_back(r.lambda_error);
    scaled.push_back(static_cast<double>(r.scaled_error));
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j].push_back(r.theta_error[j]);
    if (spec.common_dim() > 0) psi.push_back(r.psi_error);
    for (std::size_t q = 0; q < scenario.deltas.size(); ++q)
      if (static_cast<double>(r.scaled_error) >= scenario.deltas[q]) ++tails[q];
    if (r.z.size() != dim) {
      ++s.inference_failures;
      continue;
    }
    ++with_z;
    for (std::size_t c = 0; c < dim; ++c) {
      z[c].push_back(r.z[c]);
      if (r.covered[c]) ++covered[c];
    }
  }
  s.median_lambda_error = median(lam);
  s.median_scaled_error = median(scaled);
  for (auto& t : theta) s.median_theta_error.push_back(median(t));
  if (spec.common_dim() > 0) s.median_psi_error = median(psi);
  for (auto t : tails) s.tail_probability.push_back(ok ? static_cast<double>(t) / static_cast<double>(ok) : 0.0);
  for (std::size_t c = 0; c < dim; ++c) {
    const double m = static_cast<double>(with_z);
    s.coverage.push_back(with_z ? static_cast<double>(covered[c]) / m : std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    for (double v : z[c]) sum += v;
    s.mean_z.push_back(with_z ? sum / m : std::numeric_limits<double>::quiet_NaN());
    s.ks_distance.push_back(ks_to_normal(z[c]));
  }
  return s;
}

inline MonteCarloReport start_report(const ScenarioSpec& scenario, std::string suite) {
  scenario.validate();
  MonteCarloReport report;
  report.suite = std::move(suite);
  report.scenario = scenario.name;
  report.seed = scenario.seed;
  report.reps = scenario.reps;
  report.level = scenario.level;
  report.deltas = scenario.deltas;
  return report;
}

inline void add_failure_checks(MonteCarloReport& report) {
  for (const auto& s : report.sizes) {
    const double rate = static_cast<double>(s.failures) / static_cast<double>(report.reps);
    report.checks.push_back({"fit failures at n=" + std::to_string(s.n) + " <= 1%", rate <= 0.01,
                             std::to_string(s.failures) + " of " + std::to_string(report.reps) + " fits failed"});
  }
}

template <class Get>
Check strictly_decreasing(const std::string& name, const std::vector<SizeSummary>& sizes, Get&& get) {
  std::vector<double> v;
  for (const auto& s : sizes) v.push_back(get(s));
  bool ok = v.size() >= 2;
  for (std::size_t q = 1; q < v.size(); ++q) ok = ok && v[q] < v[q - 1];
  return {name, ok, "values along n: " + join(v)};
}

}  // namespace detail

/// Identifiability precheck: Ḡ < 0 for the scenario's truth, on the box of a pilot dataset.
inline LemmaOneConstants scenario_constants(const ScenarioSpec& scenario, const SearchGrid& grid = {}) {
  scenario.validate();
  const std::size_t n = scenario.sizes.empty() ? 100 : scenario.sizes.front();
  const Dataset pilot = generate(scenario, n, 0);
  return lemma1_constants(scenario.model, scenario.truth, true_config(scenario, n), scenario.model.resolve_box(pilot),
                          grid);
}

/// Medians of ‖λ̂ − λ⁰‖∞, |θ̂_j − θ⁰_j| and |ψ̂ − ψ⁰| along the n ladder, each required to
/// decrease strictly.
inline MonteCarloReport run_consistency(const ScenarioSpec& scenario) {
  auto report = detail::start_report(scenario, "consistency");
  if (scenario.sizes.size() < 2) throw ArgumentError("the consistency suite needs at least two sample sizes");
  if (scenario.model.k() > 0) {
    SearchGrid quick;
    quick.points_per_dim = 8;
    quick.random_points = 1000;
    scenario_constants(scenario, quick);
  }
  for (auto n : scenario.sizes) report.sizes.push_back(detail::run_size(scenario, n));
  detail::add_failure_checks(report);
  report.checks.push_back(detail::strictly_decreasing("median sup |lambda_hat - lambda0| strictly decreasing",
                                                      report.sizes, [](const SizeSummary& s) { return s.median_lambda_error; }));
  for (std::size_t j = 0; j < scenario.model.segments(); ++j)
    report.checks.push_back(detail::strictly_decreasing(
        "median |theta_hat_" + std::to_string(j + 1) + " - theta0_" + std::to_string(j + 1) + "| strictly decreasing",
        report.sizes, [j](const SizeSummary& s) { return s.median_theta_error[j]; }));
  if (scenario.model.common_dim() > 0)
    report.checks.push_back(detail::strictly_decreasing("median |psi_hat - psi0| strictly decreasing", report.sizes,
                                                        [](const SizeSummary& s) { return s.median_psi_error; }));
  return report;
}

/// Tail probabilities P(n‖λ̂ − λ⁰‖∞ ≥ δ): non-increasing along n up to two binomial standard
/// errors for every δ, and at most rate_target for the largest δ at the largest n.
inline MonteCarloReport run_rate(const ScenarioSpec& scenario) {
  auto report = detail::start_report(scenario, "rate");
  if (scenario.deltas.empty()) throw ArgumentError("the rate suite needs at least one delta");
  for (auto n : scenario.sizes) report.sizes.push_back(detail::run_size(scenario, n));
  detail::add_failure_checks(report);
  const auto reps = static_cast<double>(scenario.reps);
  for (std::size_t q = 0; q < scenario.deltas.size(); ++q) {
    bool ok = true;
    std::vector<double> p;
    for (std::size_t s = 0; s < report.sizes.size(); ++s) {
      p.push_back(report.sizes[s].tail_probability[q]);
      if (s == 0) continue;
      const double a = p[s - 1], b = p[s];
      const double se = std::sqrt(a * (1.0 - a) / reps + b * (1.0 - b) / reps);
      ok = ok && b <= a + 2.0 * se;
    }
    report.checks.push_back({"P(n*err >= " + detail::fmt(scenario.deltas[q]) + ") non-increasing in n (2 SE)", ok,
                             "values along n: " + detail::join(p)});
  }
  if (!report.sizes.empty()) {
    const double p = report.sizes.back().tail_probability.back();
    report.checks.push_back({"P(n*err >= " + detail::fmt(scenario.deltas.back()) + ") at n=" +
                                 std::to_string(report.sizes.back().n) + " <= " + detail::fmt(scenario.rate_target),
                             p <= scenario.rate_target, "estimate " + detail::fmt(p)});
  }
  report.notes.push_back("tail monotonicity plus a large-delta ceiling stands in for the delta-to-infinity limit");
  return report;
}

/// Wald coverage per packed coordinate within level ± 0.03 and mean standardized error within
/// 3/sqrt(reps) of zero, at every n. Kolmogorov–Smirnov distances are reported alongside.
inline MonteCarloReport run_normality(const ScenarioSpec& scenario) {
  auto report = detail::start_report(scenario, "normality");
  for (auto n : scenario.sizes) report.sizes.push_back(detail::run_size(scenario, n));
  detail::add_failure_checks(report);
  for (const auto& s : report.sizes) {
    const std::string at = " at n=" + std::to_string(s.n);
    const double band = 3.0 / std::sqrt(static_cast<double>(scenario.reps));
    for (std::size_t c = 0; c < s.coverage.size(); ++c) {
      const std::string coord = "coordinate " + std::to_string(c + 1);
      report.checks.push_back({coord + " coverage in level +/- 0.03" + at,
                               std::abs(s.coverage[c] - scenario.level) <= 0.03,
                               "coverage " + detail::fmt(s.coverage[c])});
      report.checks.push_back({coord + " |mean z| <= 3/sqrt(reps)" + at, std::abs(s.mean_z[c]) <= band,
                               "mean z " + detail::fmt(s.mean_z[c]) + ", band " + detail::fmt(band)});
      report.checks.push_back({coord + " KS distance to N(0,1)" + at, true, detail::fmt(s.ks_distance[c]), true});
    }
    report.checks.push_back({"replications without standard errors" + at, s.inference_failures == 0,
                             std::to_string(s.inference_failures)});
  }
  if (report.sizes.size() >= 2) {
    const auto& a = report.sizes.front();
    const auto& b = report.sizes.back();
    bool shrinks = true;
    for (std::size_t c = 0; c < a.ks_distance.size(); ++c) shrinks = shrinks && b.ks_distance[c] < a.ks_distance[c];
    report.checks.push_back({"KS distance shrinks from smallest to largest n", shrinks,
                             detail::join(a.ks_distance) + " -> " + detail::join(b.ks_distance), true});
  }
  return report;
}

struct HinkleyRow {
  std::size_t m = 0;
  std::size_t reps = 0;
  double mean = 0.0;
  double std_error = 0.0;
  double min_statistic = 0.0;
  double max_abs_difference = 0.0;  // |closed form − numeric profile|
};

struct HinkleyReport {
  double theta2_0 = 0.0;
  std::uint64_t seed = 0;
  std::vector<HinkleyRow> rows;
  std::vector<Check> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.informational || c.passed; });
  }
};

/// For X_1..X_m ~ N(θ⁰₂, 1): sup_{θ1} Σ [log f(X_i; θ1) − log f(X_i; θ⁰₂)] = (m/2)(X̄_m − θ⁰₂)².
/// Each draw is profiled numerically as well; the statistic is a half chi-square(1), so it
/// neither diverges to −∞ nor has a mean other than 1/2.
inline HinkleyReport hinkley_demo(const std::vector<std::size_t>& m_grid, double theta2_0, std::uint64_t seed,
                                  std::size_t reps = 10'000, unsigned threads = 0) {
  for (std::size_t q = 0; q < m_grid.size(); ++q)
    if (m_grid[q] == 0 || (q > 0 && m_grid[q] <= m_grid[q - 1])) throw ArgumentError("m grid must increase from 1");
  if (reps < 2) throw ArgumentError("the demo needs at least two replications");
  const NormalKnownVariance family(1.0);
  const Vec none, theta0 = Vec::Constant(1, theta2_0);
  HinkleyReport report;
  report.theta2_0 = theta2_0;
  report.seed = seed;
  for (auto m : m_grid) {
    std::vector<double> stat(reps), diff(reps);
    parallel_for(
        reps,
        [&](std::size_t rep) {
          Engine rng = make_stream(seed, {m, rep});
          std::vector<double> x;
          x.reserve(m);
          family.sample(none, theta0, m, rng, x);
          long double sum = 0.0L;
          for (double v : x) sum += v;
          const double xbar = static_cast<double>(sum / static_cast<long double>(m));
          const double closed = 0.5 * static_cast<double>(m) * (xbar - theta2_0) * (xbar - theta2_0);
          const Dataset data = Dataset::univariate(std::move(x));
          const auto profile = segment_mle_theta_newton(family, none, data, 0, m, family.default_theta_box(data));
          const double numeric = profile.loglik - segment_loglik(family, none, theta0, data, 0, m);
          stat[rep] = closed;
          diff[rep] = std::abs(closed - numeric);
        },
        threads);
    HinkleyRow row;
    row.m = m;
    row.reps = reps;
    long double s = 0.0L, ss = 0.0L;
    for (double v : stat) {
      s += v;
      ss += static_cast<long double>(v) * v;
    }
    const auto r = static_cast<long double>(reps);
    row.mean = static_cast<double>(s / r);
    const double var = static_cast<double>((ss - s * s / r) / (r - 1.0L));
    row.std_error = std::sqrt(std::max(0.0, var) / static_cast<double>(reps));
    row.min_statistic = *std::min_element(stat.begin(), stat.end());
    row.max_abs_difference = *std::max_element(diff.begin(), diff.end());
    report.rows.push_back(row);

    const std::string at = " at m=" + std::to_string(m);
    report.checks.push_back({"closed form matches numeric profile within 1e-8" + at, row.max_abs_difference <= 1e-8,
                             "max difference " + detail::fmt(row.max_abs_difference)});
    report.checks.push_back({"statistic >= 0" + at, row.min_statistic >= 0.0, "min " + detail::fmt(row.min_statistic)});
    report.checks.push_back({"mean within 5 SE of 1/2" + at, std::abs(row.mean - 0.5) <= 5.0 * row.std_error,
                             "mean " + detail::fmt(row.mean) + ", SE " + detail::fmt(row.std_error)});
  }
  return report;
}

/// Built-in scenarios. All use a two-segment normal mean shift 0 -> 2 at λ⁰ = 0.5 with a
/// common unit variance.
inline std::vector<std::string> builtin_scenario_names() {
  return {"normal-shift-small", "normal-shift", "normal-coverage"};
}

inline ScenarioSpec builtin_scenario(const std::string& name) {
  ScenarioSpec s;
  s.name = name;
  s.model = ModelSpec::homogeneous(std::make_shared<NormalCommonVariance>(), 1);
  s.truth = ParameterState{Vec::Constant(1, 1.0), {Vec::Constant(1, 0.0), Vec::Constant(1, 2.0)}};
  s.fractions = {0.5};
  if (name == "normal-shift-small") {
    s.sizes = {100, 400};
    s.reps = 100;
  } else if (name == "normal-shift") {
    s.sizes = {100, 400, 1600};
    s.reps = 500;
  } else if (name == "normal-coverage") {
    s.sizes = {1000};
    s.reps = 2000;
  } else {
    std::string known;
    for (const auto& n : builtin_scenario_names()) known += (known.empty() ? "" : ", ") + n;
    throw ArgumentError("unknown scenario '" + name + "' (built-in: " + known + ")");
  }
  return s;
}

}  // namespace cpmle
