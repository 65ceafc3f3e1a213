#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>

#include "cpmle/cpmle.hpp"

using namespace cpmle;
using Catch::Approx;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

// Profile log-likelihood of one univariate segment, written out by hand for the oracle.
double segment_profile(const std::string& kind, double known_var, const std::vector<double>& x, std::size_t s,
                       std::size_t t, const BlockBox& box) {
  double sum = 0.0;
  for (std::size_t i = s; i < t; ++i) sum += x[i];
  const double m = static_cast<double>(t - s);
  double theta = sum / m;
  if (kind == "exponential") theta = 1.0 / theta;
  theta = std::clamp(theta, box.lower[0], box.upper[0]);
  double ll = 0.0;
  for (std::size_t i = s; i < t; ++i) {
    if (kind == "normal-known-var")
      ll += -0.5 * std::log(2.0 * std::numbers::pi * known_var) - 0.5 * (x[i] - theta) * (x[i] - theta) / known_var;
    else if (kind == "exponential")
      ll += std::log(theta) - theta * x[i];
    else
      ll += x[i] * std::log(theta) - theta - std::lgamma(x[i] + 1.0);
  }
  return ll;
}

struct Enumerated {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> boundaries;
  std::size_t configurations = 0;
};

// Exhaustive search over all boundary vectors in lexicographic order; ties within 1e-11
// relative keep the first.
Enumerated enumerate(const ModelSpec& spec, const std::vector<double>& x, double known_var = 1.0) {
  const Dataset d = Dataset::univariate(x);
  const auto box = spec.resolve_box(d);
  const std::size_t n = x.size(), k = spec.k();
  Enumerated e;
  std::vector<std::size_t> b(k);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t q, std::size_t from) {
    if (q == k) {
      ++e.configurations;
      double ll = 0.0;
      for (std::size_t j = 0; j <= k; ++j)
        ll += segment_profile(spec.family(j).kind(), known_var, x, j == 0 ? 0 : b[j - 1], j == k ? n : b[j],
                              box.thetas[j]);
      if (ll > e.best + 1e-11 * (1.0 + std::abs(ll))) {
        e.best = ll;
        e.boundaries = b;
      }
      return;
    }
    for (std::size_t v = from; v + (k - q) <= n; ++v) {
      if (v >= n) break;
      b[q] = v;
      rec(q + 1, v + 1);
    }
  };
  rec(0, 1);
  return e;
}

std::vector<double> draw(std::mt19937_64& rng, const std::vector<std::pair<std::size_t, double>>& pieces,
                         const std::string& kind) {
  std::vector<double> x;
  for (auto [len, p] : pieces)
    for (std::size_t i = 0; i < len; ++i) {
      if (kind == "normal") x.push_back(std::normal_distribution<double>(p, 1.0)(rng));
      else if (kind == "poisson") x.push_back(std::poisson_distribution<int>(p)(rng));
      else x.push_back(std::exponential_distribution<double>(p)(rng));
    }
  return x;
}

FitOptions no_inference() {
  FitOptions o;
  o.compute_inference = false;
  return o;
}

}  // namespace

TEST_CASE("dynamic programming matches exhaustive search", "[estimator][dp]") {
  std::mt19937_64 rng(12);

  SECTION("strong mean shift, n = 12") {
    const auto spec = ModelSpec::homogeneous(std::make_shared<NormalKnownVariance>(1.0), 1);
    const auto x = draw(rng, {{6, 0.0}, {6, 5.0}}, "normal");
    const auto r = fit_fixed_psi(spec, Dataset::univariate(x), Vec());
    const auto e = enumerate(spec, x);
    CHECK(e.configurations == 11);
    CHECK(r.change_points.boundaries() == std::vector<std::size_t>{6});
    CHECK(std::abs(r.loglik - e.best) <= 1e-9);
  }

  SECTION("three Poisson segments, n = 20") {
    const auto spec = ModelSpec::homogeneous(std::make_shared<Poisson>(), 2);
    const auto x = draw(rng, {{7, 2.0}, {6, 9.0}, {7, 3.0}}, "poisson");
    const auto r = fit(spec, Dataset::univariate(x), no_inference());
    const auto e = enumerate(spec, x);
    CHECK(e.configurations == 171);
    CHECK(r.change_points.boundaries() == e.boundaries);
    CHECK(std::abs(r.loglik - e.best) <= 1e-9);
  }

  SECTION("mixed families on count data") {
    for (int rep = 0; rep < 30; ++rep) {
      const std::size_t n = 8 + rng() % 10;
      const std::size_t k = rng() % 3;
      std::vector<FamilyPtr> fam;
      for (std::size_t j = 0; j <= k; ++j) {
        switch (rng() % 3) {
          case 0: fam.push_back(std::make_shared<Poisson>()); break;
          case 1: fam.push_back(std::make_shared<Exponential>()); break;
          default: fam.push_back(std::make_shared<NormalKnownVariance>(3.0)); break;
        }
      }
      const ModelSpec spec(fam);
      auto x = draw(rng, {{n, 1.0 + rep % 5}}, "poisson");
      x[0] += 1.0;
      const auto r = fit(spec, Dataset::univariate(x), no_inference());
      const auto e = enumerate(spec, x, 3.0);
      INFO("rep " << rep << " n " << n << " k " << k);
      CHECK(r.change_points.boundaries() == e.boundaries);
      CHECK(std::abs(r.loglik - e.best) <= 1e-9);
    }
  }

  SECTION("no change points") {
    const auto spec = ModelSpec::homogeneous(std::make_shared<Exponential>(), 0);
    const Dataset d = Dataset::univariate({0.5, 1.5, 1.0});
    const auto r = fit(spec, d);
    CHECK(r.change_points.k() == 0);
    CHECK(r.params.thetas[0][0] == Approx(1.0));
  }
}

TEST_CASE("ties resolve to the lexicographically smallest boundaries", "[estimator][ties]") {
  const auto spec = ModelSpec::homogeneous(std::make_shared<NormalKnownVariance>(1.0), 2);
  const Dataset d = Dataset::univariate(std::vector<double>(8, 1.5));
  const auto r = fit(spec, d, no_inference());
  const auto b = brute_force_fit(spec, d);
  CHECK(r.change_points.boundaries() == std::vector<std::size_t>{1, 2});
  CHECK(b.change_points.boundaries() == std::vector<std::size_t>{1, 2});
}

TEST_CASE("brute force reference", "[estimator][brute]") {
  std::mt19937_64 rng(5);
  SECTION("exponential segments, n = 15") {
    const auto spec = ModelSpec::homogeneous(std::make_shared<Exponential>(), 1);
    const Dataset d = Dataset::univariate(draw(rng, {{7, 1.0}, {8, 6.0}}, "exponential"));
    const auto r = fit(spec, d, no_inference());
    const auto b = brute_force_fit(spec, d);
    CHECK(r.change_points == b.change_points);
    CHECK(r.loglik == Approx(b.loglik).epsilon(1e-14));
  }
  SECTION("common parameter on a grid") {
    const auto spec = ModelSpec::homogeneous(std::make_shared<NormalCommonVariance>(), 1);
    const Dataset d = Dataset::univariate(draw(rng, {{6, 0.0}, {6, 3.0}}, "normal"));
    const auto r = fit(spec, d, no_inference());
    std::vector<Vec> grid;
    for (double s = 0.2; s <= 3.0; s += 0.1) grid.push_back(v1(s));
    CHECK(brute_force_fit(spec, d, grid).loglik <= r.loglik + 1e-9);
    grid.push_back(r.params.psi);
    const auto b = brute_force_fit(spec, d, grid);
    CHECK(std::abs(b.loglik - r.loglik) <= 1e-9);
    CHECK(b.change_points == r.change_points);
    CHECK_THROWS_AS(brute_force_fit(spec, d), ArgumentError);
  }
  SECTION("size guard") {
    const auto spec = ModelSpec::homogeneous(std::make_shared<NormalKnownVariance>(1.0), 4);
    const Dataset d = Dataset::univariate(draw(rng, {{200, 0.0}}, "normal"));
    CHECK_THROWS_AS(brute_force_fit(spec, d), SizeError);
    CHECK(configuration_count(20, 2) == 171.0);
  }
}

TEST_CASE("segment costs dominate any fixed parameter", "[estimator][cost]") {
  std::mt19937_64 rng(9);
  const auto spec = ModelSpec::homogeneous(std::make_shared<Poisson>(), 1);
  const Dataset d = Dataset::univariate(draw(rng, {{30, 4.0}}, "poisson"));
  const auto box = spec.resolve_box(d);
  const SegmentCostTable table(spec, d, Vec(), box);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t s = rng() % 29, t = s + 1 + rng() % (30 - s - 1 + 1);
    const double th = box.thetas[0].lower[0] + u(rng) * (box.thetas[0].upper[0] - box.thetas[0].lower[0]);
    CHECK(table.cost(0, s, std::min<std::size_t>(t, 30)) >=
          segment_loglik(spec.family(0), Vec(), v1(th), d, s, std::min<std::size_t>(t, 30)) - 1e-9);
  }
  CHECK_THROWS_AS(table.cost(0, 5, 5), ArgumentError);
}

TEST_CASE("joint fit with a common variance", "[estimator][fit]") {
  ScenarioSpec s = builtin_scenario("normal-shift");
  const Dataset d = generate(s, 200, 3);
  const auto r = fit(s.model, d);
  CHECK(r.diagnostics.converged);
  CHECK(std::abs(r.change_points.fractions()[0] - 0.5) <= 0.05);
  REQUIRE(r.std_errors.size() == 3);
  CHECK(std::abs(r.params.psi[0] - 1.0) <= 5.0 * r.std_errors[0]);
  CHECK(std::abs(r.loglik - full_loglik(s.model, d, r.change_points, r.params)) <= 1e-10);

  SECTION("stationarity at the reported estimate") {
    // The profile in ψ is flat at ψ̂: nudging ψ and re-optimizing cannot gain.
    for (double f : {0.98, 1.02}) {
      const auto nudged = fit_fixed_psi(s.model, d, Vec(r.params.psi * f));
      CHECK(nudged.loglik <= r.loglik + 1e-9);
    }
    // For fixed change points the variance MLE is the pooled residual variance.
    double rss = 0.0;
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t t = r.change_points.begin(j); t < r.change_points.end(j); ++t)
        rss += std::pow(d(t, 0) - r.params.thetas[j][0], 2);
    CHECK(r.params.psi[0] == Approx(rss / 200.0).epsilon(1e-8));
  }

  SECTION("information matrix is symmetric positive semidefinite") {
    const Mat& i = r.info.full;
    CHECK((i - i.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * i.cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Mat> es(i);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }

  SECTION("extra starting values do not change a clean optimum") {
    FitOptions o;
    o.psi_starts = {v1(0.5), v1(3.0)};
    const auto m = fit(s.model, d, o);
    CHECK(m.diagnostics.starts.size() == 3);
    CHECK(m.change_points == r.change_points);
    CHECK(m.loglik == Approx(r.loglik).epsilon(1e-12));
    CHECK(m.diagnostics.alternative_maxima == 0);
  }

  SECTION("bad starting values") {
    FitOptions o;
    o.psi_starts = {v1(1e12)};
    CHECK_THROWS_AS(fit(s.model, d, o), ArgumentError);
    o.psi_starts = {Vec::Constant(2, 1.0)};
    CHECK_THROWS_AS(fit(s.model, d, o), ArgumentError);
  }
}

TEST_CASE("reversal mirrors the change points", "[estimator][symmetry]") {
  std::mt19937_64 rng(31);
  auto po = std::make_shared<Poisson>();
  auto ex = std::make_shared<Exponential>();
  const ModelSpec spec({po, po, ex});
  const ModelSpec mirrored({ex, po, po});
  auto x = draw(rng, {{20, 2.0}, {15, 8.0}, {25, 4.0}}, "poisson");
  const Dataset d = Dataset::univariate(x);
  const auto a = fit(spec, d, no_inference());
  const auto b = fit(mirrored, d.reversed(), no_inference());
  CHECK(a.loglik == Approx(b.loglik).epsilon(1e-12));
  const auto& ba = a.change_points.boundaries();
  const auto& bb = b.change_points.boundaries();
  REQUIRE(ba.size() == 2);
  CHECK(bb[0] == 60 - ba[1]);
  CHECK(bb[1] == 60 - ba[0]);
}

TEST_CASE("multivariate normal fit locates a mean shift", "[estimator][mvn]") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  std::vector<double> x;
  for (int i = 0; i < 80; ++i) {
    const double shift = i < 30 ? 0.0 : 3.0;
    const double a = z(rng), b = z(rng);
    x.push_back(shift + a);
    x.push_back(-shift + 0.5 * a + b);
  }
  const Dataset d(std::move(x), 2);
  const auto spec = ModelSpec::homogeneous(std::make_shared<MultivariateNormalCommonCovariance>(2), 1);
  const auto r = fit(spec, d);
  CHECK(r.change_points.boundaries() == std::vector<std::size_t>{30});
  CHECK(r.params.psi.size() == 3);
  CHECK(r.diagnostics.converged);
  CHECK(std::abs(r.loglik - full_loglik(spec, d, r.change_points, r.params)) <= 1e-10);
}

TEST_CASE("minimum segment length and input checks", "[estimator][errors]") {
  const auto spec = ModelSpec::homogeneous(std::make_shared<NormalKnownVariance>(1.0), 2);
  const Dataset d = Dataset::univariate({0, 0, 0, 9, 9, 9, 0, 0, 0, 0});
  FitOptions o = no_inference();
  o.min_segment_length = 4;
  CHECK_THROWS_AS(fit(spec, d, o), ArgumentError);
  o.min_segment_length = 3;
  const auto r = fit(spec, d, o);
  for (std::size_t j = 0; j < 3; ++j) CHECK(r.change_points.length(j) >= 3);
  CHECK(r.change_points.boundaries() == std::vector<std::size_t>{3, 6});
  CHECK_THROWS_AS(fit(spec, Dataset::univariate({1, 2}), no_inference()), ArgumentError);
  CHECK_THROWS_AS(fit(spec, Dataset({1, 2, 3, 4}, 2), no_inference()), ArgumentError);
}
