#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <random>

#include "cpmle/cpmle.hpp"

using namespace cpmle;
using Catch::Approx;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

double rel_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff() / (1.0 + b.cwiseAbs().maxCoeff()); }

std::vector<double> normals(std::mt19937_64& rng, std::size_t n, double mean, double sd) {
  std::normal_distribution<double> z(mean, sd);
  std::vector<double> x(n);
  for (auto& v : x) v = z(rng);
  return x;
}

}  // namespace

TEST_CASE("outer-product information matches a plain loop", "[inference][opg]") {
  std::mt19937_64 rng(1);
  auto x = normals(rng, 40, 0.0, 1.3);
  const auto tail = normals(rng, 35, 2.0, 1.3);
  x.insert(x.end(), tail.begin(), tail.end());
  const Dataset d = Dataset::univariate(x);
  const auto spec = ModelSpec::homogeneous(std::make_shared<NormalCommonVariance>(), 1);
  const ChangePointConfig cps({40}, 75);
  const ParameterState p{v1(1.6), {v1(0.1), v1(1.9)}};

  // Hand-written scores for N(θ, σ²) in (σ², θ_1, θ_2).
  Mat naive = Mat::Zero(3, 3);
  for (std::size_t t = 0; t < 75; ++t) {
    const std::size_t j = t < 40 ? 0 : 1;
    const double r = x[t] - p.thetas[j][0], s2 = p.psi[0];
    Vec s = Vec::Zero(3);
    s[0] = -0.5 / s2 + 0.5 * r * r / (s2 * s2);
    s[1 + j] = r / s2;
    naive += s * s.transpose();
  }
  const auto info = plugin_info(spec, d, cps, p);
  CHECK(rel_diff(info.full, naive) <= 1e-10);
  CHECK(info.theta_block(0, 1)(0, 0) == 0.0);
  CHECK(info.theta_block(1, 0)(0, 0) == 0.0);
  CHECK(info.psi_block()(0, 0) == Approx(naive(0, 0)).epsilon(1e-12));
  CHECK(info.psi_theta_block(1)(0, 0) == Approx(naive(0, 2)).epsilon(1e-12));
}

TEST_CASE("cross-segment blocks vanish", "[inference][opg]") {
  const auto spec = ModelSpec::homogeneous(std::make_shared<MultivariateNormalCommonCovariance>(2), 2);
  Vec chol(3);
  chol << 1.2, 0.3, 0.9;
  const auto data = sample(MultivariateNormalCommonCovariance(2), chol, Vec::Zero(2), 60, 3);
  const ParameterState p{chol, {Vec::Constant(2, 0.1), Vec::Constant(2, -0.2), Vec::Constant(2, 0.3)}};
  const auto info = plugin_info(spec, data, ChangePointConfig({20, 40}, 60), p);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t q = 0; q < 3; ++q)
      if (j != q) CHECK(info.theta_block(j, q).cwiseAbs().maxCoeff() == 0.0);
  CHECK(info.psi_theta_block(0).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("duplicating every observation doubles the information exactly", "[inference][opg]") {
  std::mt19937_64 rng(4);
  const auto spec = ModelSpec::homogeneous(std::make_shared<NormalCommonVariance>(), 2);
  auto x = normals(rng, 97, 0.5, 2.0);
  const Dataset d = Dataset::univariate(x);
  const ParameterState p{v1(3.7), {v1(0.3), v1(0.6), v1(0.2)}};
  const auto once = plugin_info(spec, d, ChangePointConfig({31, 64}, 97), p);
  const auto twice = plugin_info(spec, d.duplicated(), ChangePointConfig({62, 128}, 194), p);
  CHECK(twice.full == Mat(2.0 * once.full));
}

TEST_CASE("information entries for single-parameter families", "[inference][opg]") {
  std::mt19937_64 rng(5);
  SECTION("unit normal: entry is the residual sum of squares, about n") {
    const std::size_t n = 5000;
    const auto x = normals(rng, n, 0.0, 1.0);
    const auto spec = ModelSpec::homogeneous(std::make_shared<NormalKnownVariance>(1.0), 0);
    const Dataset d = Dataset::univariate(x);
    const auto r = fit(spec, d);
    double rss = 0.0;
    for (double v : x) rss += (v - r.params.thetas[0][0]) * (v - r.params.thetas[0][0]);
    CHECK(r.info.full(0, 0) == Approx(rss).epsilon(1e-12));
    // Var of a chi-square(1) draw is 2.
    CHECK(std::abs(r.info.full(0, 0) - n) <= 5.0 * std::sqrt(2.0 * n));
    CHECK(r.std_errors[0] == Approx(1.0 / std::sqrt(rss)).epsilon(1e-12));
  }
  SECTION("exponential: entry is the sum of (1/theta - x)^2") {
    const std::size_t n = 4000;
    const double rate = 2.5;
    std::exponential_distribution<double> e(rate);
    std::vector<double> x(n);
    for (auto& v : x) v = e(rng);
    const auto spec = ModelSpec::homogeneous(std::make_shared<Exponential>(), 0);
    const auto r = fit(spec, Dataset::univariate(x));
    const double th = r.params.thetas[0][0];
    double s = 0.0, s_true = 0.0, s2_true = 0.0;
    for (double v : x) {
      s += (1.0 / th - v) * (1.0 / th - v);
      const double q = (1.0 / rate - v) * (1.0 / rate - v);
      s_true += q;
      s2_true += q * q;
    }
    CHECK(r.info.full(0, 0) == Approx(s).epsilon(1e-12));
    // Expectation 1/θ² per observation; SE from the empirical second moment.
    const double mean = s_true / n, se = std::sqrt((s2_true / n - mean * mean) / n);
    CHECK(std::abs(mean - 1.0 / (rate * rate)) <= 5.0 * se);
    CHECK(std::abs(r.info.full(0, 0) / n - 1.0 / (rate * rate)) <= 5.0 * se + 0.02 / (rate * rate));
  }
}

TEST_CASE("per-observation information settles as n grows", "[inference][trend]") {
  // Two-segment common-variance normal at the truth; the population information per observation
  // is diag(1/(2σ⁴), λ/σ², (1−λ)/σ²) = diag(0.5, 0.5, 0.5) for σ² = 1, λ = 0.5.
  const auto spec = ModelSpec::homogeneous(std::make_shared<NormalCommonVariance>(), 1);
  const ParameterState truth{v1(1.0), {v1(0.0), v1(2.0)}};
  Mat target = Mat::Zero(3, 3);
  target.diagonal() << 0.5, 0.5, 0.5;
  std::vector<double> spread;
  for (std::size_t n : {500u, 2000u, 8000u}) {
    const int reps = 40;
    std::vector<Mat> draws;
    Mat mean = Mat::Zero(3, 3);
    for (int rep = 0; rep < reps; ++rep) {
      std::mt19937_64 rng(1000 * n + rep);
      auto x = normals(rng, n / 2, 0.0, 1.0);
      const auto y = normals(rng, n / 2, 2.0, 1.0);
      x.insert(x.end(), y.begin(), y.end());
      const Dataset d = Dataset::univariate(x);
      const auto f = fit(spec, d);
      const Mat per = f.info.full / static_cast<double>(n);
      draws.push_back(per);
      mean += per / reps;
    }
    double ss = 0.0;
    for (const auto& m : draws) ss += (m - target).squaredNorm();
    spread.push_back(std::sqrt(ss / reps));
    INFO("n = " << n << ", mean per-observation information\n" << mean);
    CHECK((mean - target).cwiseAbs().maxCoeff() <= 0.1);
  }
  INFO("rms deviation along n: " << spread[0] << ", " << spread[1] << ", " << spread[2]);
  CHECK(spread[1] < spread[0]);
  CHECK(spread[2] < spread[1]);
  CHECK(spread[2] < 0.75 * spread[0] / 2.0);
}

TEST_CASE("observed information is the negative Hessian", "[inference][observed]") {
  std::mt19937_64 rng(6);
  auto x = normals(rng, 30, 0.0, 1.0);
  const auto y = normals(rng, 30, 1.5, 1.0);
  x.insert(x.end(), y.begin(), y.end());
  const Dataset d = Dataset::univariate(x);
  const auto spec = ModelSpec::homogeneous(std::make_shared<NormalCommonVariance>(), 1);
  const ChangePointConfig cps({30}, 60);
  const ParameterState p{v1(1.1), {v1(0.2), v1(1.4)}};
  const auto obs = observed_info(spec, d, cps, p);
  const Vec z = p.packed();
  for (Eigen::Index a = 0; a < 3; ++a)
    for (Eigen::Index b = 0; b < 3; ++b) {
      const double h = 1e-4;
      auto ll = [&](double da, double db) {
        Vec w = z;
        w[a] += da;
        w[b] += db;
        return full_loglik(spec, d, cps, spec.unpack(w));
      };
      const double fd = (ll(h, h) - ll(h, -h) - ll(-h, h) + ll(-h, -h)) / (4.0 * h * h);
      CHECK(std::abs(-fd - obs.full(a, b)) <= 1e-4 * (1.0 + std::abs(fd)));
    }
}

TEST_CASE("Wald intervals", "[inference][wald]") {
  CHECK(normal_critical_value(0.95) == Approx(1.959963984540054).epsilon(1e-14));
  CHECK(normal_critical_value(0.9) == Approx(1.6448536269514722).epsilon(1e-14));
  CHECK_THROWS_AS(normal_critical_value(1.0), ArgumentError);
  CHECK_THROWS_AS(normal_critical_value(0.0), ArgumentError);

  InfoMatrix info;
  info.full = Mat::Identity(1, 1) * 400.0;
  const auto w = wald_intervals(v1(3.0), info, 0.95);
  CHECK(w.intervals[0].std_error == Approx(0.05));
  CHECK(w.intervals[0].upper - w.intervals[0].estimate == Approx(0.0979982).epsilon(1e-6));
  CHECK(w.intervals[0].estimate - w.intervals[0].lower == Approx(0.0979982).epsilon(1e-6));
  CHECK_FALSE(w.jittered);
  CHECK(w.condition_number == Approx(1.0));
  CHECK_THROWS_AS(wald_intervals(Vec::Zero(2), info, 0.95), ArgumentError);
}

TEST_CASE("singular information", "[inference][errors]") {
  InfoMatrix info;
  info.full = Mat::Zero(2, 2);
  info.full(0, 0) = 1.0;
  const auto inv = invert_info(info);
  CHECK(inv.jittered);
  CHECK(std::isinf(inv.condition_number));
  info.full(1, 1) = -1.0;
  CHECK_THROWS_AS(invert_info(info), InferenceError);
  CHECK_THROWS_AS(wald_intervals(Vec::Zero(2), info, 0.95), InferenceError);
}
