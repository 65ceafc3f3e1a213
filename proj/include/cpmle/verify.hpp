#pragma once

// Self-checking bundle: the J1 bound, closed-form v against numerical expectation, dynamic
// programming against enumeration, and the J = J1 + J2 identity.

#include <algorithm>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cpmle/simulation.hpp"

namespace cpmle {

struct VerifyOptions {
  std::uint64_t seed = default_seed;
  std::size_t probes = 10'000;
  std::size_t kl_pairs = 50;
  std::size_t dp_instances = 40;
  std::size_t j_instances = 25;
  double kl_tolerance = 1e-8;
  double identity_tolerance = 1e-10;
  /// Replaces the built-in J1-bound instance and joins the J-identity models.
  std::optional<ScenarioSpec> scenario;
  /// Flips the sign of v everywhere the bundle uses it.
  bool inject_kl_sign = false;
};

struct VerifyReport {
  std::string lemma_instance;
  LemmaOneConstants constants;
  LemmaCheckReport lemma;
  std::vector<Check> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.informational || c.passed; });
  }
};

namespace detail {

inline ScenarioSpec bundle_scenario(std::string name, std::vector<FamilyPtr> families, ParameterState truth,
                                    std::vector<double> fractions, BoxOverrides box = {}) {
  ScenarioSpec s;
  s.name = std::move(name);
  s.model = ModelSpec(std::move(families), std::move(box));
  s.truth = std::move(truth);
  s.fractions = std::move(fractions);
  s.sizes = {100};
  return s;
}

inline Vec scalar(double v) { return Vec::Constant(1, v); }

/// Two unit-variance normal segments with means 0 and 1 at λ⁰ = 0.5, θ boxed in [-3, 4].
inline ScenarioSpec lemma_benchmark() {
  BoxOverrides box;
  box.thetas[0] = BlockBox(scalar(-3.0), scalar(4.0));
  box.thetas[1] = BlockBox(scalar(-3.0), scalar(4.0));
  auto f = std::make_shared<NormalKnownVariance>(1.0);
  return bundle_scenario("normal-known-var-benchmark", {f, f}, {Vec(), {scalar(0.0), scalar(1.0)}}, {0.5}, box);
}

inline std::vector<ScenarioSpec> identity_models() {
  auto nc = std::make_shared<NormalCommonVariance>();
  auto ex = std::make_shared<Exponential>();
  auto po = std::make_shared<Poisson>();
  std::vector<ScenarioSpec> out;
  out.push_back(lemma_benchmark());
  out.push_back(bundle_scenario("normal-common-var-k2", {nc, nc, nc},
                                {scalar(1.5), {scalar(-1.0), scalar(1.0), scalar(0.5)}}, {0.3, 0.7}));
  out.push_back(bundle_scenario("exponential-k1", {ex, ex}, {Vec(), {scalar(1.0), scalar(3.0)}}, {0.4}));
  out.push_back(
      bundle_scenario("poisson-k2", {po, po, po}, {Vec(), {scalar(2.0), scalar(6.0), scalar(3.0)}}, {0.25, 0.6}));
  return out;
}

/// Uniform draw from the box intersected with a window around the truth.
inline ParameterState random_params_near(const ModelSpec& spec, const ParameterState& truth, const ParameterBox& box,
                                         Engine& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](const Vec& center, const BlockBox& b) {
    Vec v(center.size());
    for (Eigen::Index q = 0; q < center.size(); ++q) {
      const double w = 2.0 * (1.0 + std::abs(center[q]));
      const double lo = std::max(b.lower[q], center[q] - w), hi = std::min(b.upper[q], center[q] + w);
      v[q] = lo + (hi - lo) * u(rng);
    }
    return v;
  };
  ParameterState p;
  p.psi = spec.common_dim() > 0 ? draw(truth.psi, box.psi) : Vec();
  for (std::size_t j = 0; j < spec.segments(); ++j) p.thetas.push_back(draw(truth.thetas[j], box.thetas[j]));
  return p;
}

inline ChangePointConfig random_config(std::size_t n, std::size_t k, Engine& rng) {
  std::vector<std::size_t> pool(n - 1);
  for (std::size_t q = 0; q < pool.size(); ++q) pool[q] = q + 1;
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> b(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(b.begin(), b.end());
  return ChangePointConfig(std::move(b), n);
}

struct KlCase {
  std::string name;
  FamilyPtr family;
  std::function<std::pair<Vec, Vec>(Engine&)> draw;  // (psi, theta)
};

inline std::vector<KlCase> kl_cases() {
  auto uniform = [](Engine& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  std::vector<KlCase> cases;
  cases.push_back({"normal-known-var", std::make_shared<NormalKnownVariance>(2.0),
                   [=](Engine& r) { return std::pair{Vec(), scalar(uniform(r, -3.0, 3.0))}; }});
  cases.push_back({"normal-common-var", std::make_shared<NormalCommonVariance>(),
                   [=](Engine& r) { return std::pair{scalar(uniform(r, 0.25, 4.0)), scalar(uniform(r, -3.0, 3.0))}; }});
  cases.push_back({"exponential", std::make_shared<Exponential>(),
                   [=](Engine& r) { return std::pair{Vec(), scalar(uniform(r, 0.2, 5.0))}; }});
  cases.push_back({"poisson", std::make_shared<Poisson>(),
                   [=](Engine& r) { return std::pair{Vec(), scalar(uniform(r, 0.5, 20.0))}; }});
  return cases;
}

inline void check_kl(const VerifyOptions& o, const DivergenceFn& v, VerifyReport& report) {
  const auto cases = kl_cases();
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    Engine rng = make_stream(o.seed, {0x6b6cULL, ci});
    double worst = 0.0, max_v = -std::numeric_limits<double>::infinity();
    bool identical_zero = true;
    for (std::size_t q = 0; q < o.kl_pairs; ++q) {
      const auto [psi, theta] = c.draw(rng);
      const auto [psi0, theta0] = c.draw(rng);
      const double closed = v(*c.family, psi, theta, *c.family, psi0, theta0).value;
      const double numeric =
          expect_numerically(
              *c.family, psi0, theta0,
              [&](Observation x) { return c.family->log_density(psi, theta, x) - c.family->log_density(psi0, theta0, x); },
              ExpectationOptions{})
              .value;
      worst = std::max(worst, std::abs(closed - numeric));
      max_v = std::max(max_v, closed);
      if (v(*c.family, psi0, theta0, *c.family, psi0, theta0).value != 0.0) identical_zero = false;
    }
    report.checks.push_back({"v closed form matches numerical expectation within " + fmt(o.kl_tolerance) + " (" +
                                 c.name + ")",
                             worst <= o.kl_tolerance, "max difference " + fmt(worst) + " over " +
                                                          std::to_string(o.kl_pairs) + " pairs"});
    report.checks.push_back({"v is zero for identical densities and never positive (" + c.name + ")",
                             identical_zero && max_v <= o.kl_tolerance, "largest v " + fmt(max_v)});
  }
}

inline void check_dp(const VerifyOptions& o, VerifyReport& report) {
  std::size_t mismatches = 0;
  double worst = 0.0;
  std::string first;
  for (std::size_t q = 0; q < o.dp_instances; ++q) {
    Engine rng = make_stream(o.seed, {0x6470ULL, q});
    const std::size_t n = std::uniform_int_distribution<std::size_t>(5, 14)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, std::min<std::size_t>(2, n - 1))(rng);
    const auto truth_cps = random_config(n, k, rng);
    std::vector<double> x;
    for (std::size_t j = 0; j <= k; ++j) {
      std::poisson_distribution<int> draw(std::uniform_real_distribution<double>(0.5, 8.0)(rng));
      for (std::size_t i = truth_cps.begin(j); i < truth_cps.end(j); ++i) x.push_back(draw(rng));
    }
    if (std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; })) x.front() = 1.0;
    std::vector<FamilyPtr> families;
    for (std::size_t j = 0; j <= k; ++j) {
      switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
        case 0: families.push_back(std::make_shared<Poisson>()); break;
        case 1: families.push_back(std::make_shared<Exponential>()); break;
        default: families.push_back(std::make_shared<NormalKnownVariance>(4.0)); break;
      }
    }
    const ModelSpec spec(families);
    const Dataset data = Dataset::univariate(std::move(x));
    FitOptions fo;
    fo.compute_inference = false;
    const auto dp = fit(spec, data, fo);
    const auto bf = brute_force_fit(spec, data);
    const double diff = std::abs(dp.loglik - bf.loglik);
    worst = std::max(worst, diff);
    if (diff > 1e-9 || !(dp.change_points == bf.change_points)) {
      ++mismatches;
      if (first.empty()) first = "instance " + std::to_string(q) + " (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")";
    }
  }
  report.checks.push_back({"dynamic programming equals enumeration (log-likelihood within 1e-9, identical boundaries)",
                           mismatches == 0,
                           std::to_string(mismatches) + " of " + std::to_string(o.dp_instances) +
                               " instances differ; max log-likelihood difference " + fmt(worst) +
                               (first.empty() ? "" : "; first: " + first)});
}

inline void check_identity(const VerifyOptions& o, const DivergenceFn& v, VerifyReport& report) {
  auto models = identity_models();
  if (o.scenario) models.push_back(*o.scenario);
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    const auto& sc = models[mi];
    double worst_identity = 0.0, worst_regroup = 0.0;
    for (std::size_t q = 0; q < o.j_instances; ++q) {
      Engine rng = make_stream(o.seed, {0x6a31ULL, mi, q});
      const std::size_t n = std::uniform_int_distribution<std::size_t>(std::max<std::size_t>(20, 4 * (sc.model.k() + 1)), 80)(rng);
      ScenarioSpec local = sc;
      local.seed = o.seed + 7919 * (mi + 1);
      const Dataset data = generate(local, n, q);
      const auto truth_cps = true_config(local, n);
      const ParameterBox box = sc.model.resolve_box(data);
      const auto params = random_params_near(sc.model, sc.truth, box, rng);
      const auto cps = random_config(n, sc.model.k(), rng);
      const double lhs = j1(sc.model, cps, params, sc.truth, truth_cps, v) +
                         j2(sc.model, data, cps, params, truth_cps, sc.truth);
      const double rhs = (full_loglik(sc.model, data, cps, params) - full_loglik(sc.model, data, truth_cps, sc.truth)) /
                         static_cast<double>(n);
      worst_identity = std::max(worst_identity, std::abs(lhs - rhs));
      worst_regroup = std::max(worst_regroup, std::abs(j2(sc.model, data, cps, params, truth_cps, sc.truth) -
                                                       j2_regrouped(sc.model, data, cps, params, truth_cps, sc.truth)));
    }
    const std::string tol = fmt(o.identity_tolerance);
    report.checks.push_back({"J1 + J2 equals the scaled log-likelihood difference within " + tol + " (" + sc.name + ")",
                             worst_identity <= o.identity_tolerance, "max difference " + fmt(worst_identity)});
    report.checks.push_back({"J2 regrouped by overlap cells agrees within " + tol + " (" + sc.name + ")",
                             worst_regroup <= o.identity_tolerance, "max difference " + fmt(worst_regroup)});
  }
}

}  // namespace detail

/// Throws IdentifiabilityError when the J1-bound instance fails the Ḡ < 0 precheck.
inline VerifyReport run_verification(const VerifyOptions& o) {
  DivergenceFn v = default_divergence();
  if (o.inject_kl_sign) {
    v = [base = v](const SegmentFamily& fj, const VecIn& psi, const VecIn& theta, const SegmentFamily& fi,
                   const VecIn& psi0, const VecIn& theta0) {
      auto e = base(fj, psi, theta, fi, psi0, theta0);
      e.value = -e.value;
      return e;
    };
  }
  VerifyReport report;

  const ScenarioSpec lemma = o.scenario ? *o.scenario : detail::lemma_benchmark();
  lemma.validate();
  const std::size_t n = lemma.sizes.empty() ? 100 : lemma.sizes.front();
  const auto truth_cps = true_config(lemma, n);
  const ParameterBox box = lemma.model.resolve_box(generate(lemma, n, 0));
  report.lemma_instance = lemma.name + " (n=" + std::to_string(n) + ")";
  SearchGrid grid;
  grid.seed = o.seed;
  report.constants = lemma1_constants(lemma.model, lemma.truth, truth_cps, box, grid, v);
  LemmaCheckOptions lo;
  lo.probes = o.probes;
  lo.seed = o.seed;
  lo.throw_on_violation = false;
  report.lemma = lemma1_check(lemma.model, lemma.truth, truth_cps, box, report.constants, lo, v);
  report.checks.push_back({"J1 <= -max{C1 |lambda - lambda0|, C2 rho} + 1e-9 on " + std::to_string(o.probes) + " probes",
                           report.lemma.violations == 0,
                           std::to_string(report.lemma.violations) + " violations; worst slack " +
                               detail::fmt(report.lemma.worst_slack) + " at " + report.lemma.worst_description});

  detail::check_kl(o, v, report);
  detail::check_dp(o, report);
  detail::check_identity(o, v, report);
  return report;
}

}  // namespace cpmle
