#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "cpmle/cpmle.hpp"

using namespace cpmle;
using Catch::Approx;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

ScenarioSpec small_shift(double shift, std::size_t reps = 100) {
  ScenarioSpec s = builtin_scenario("normal-shift-small");
  s.truth.thetas[1] = v1(shift);
  s.reps = reps;
  return s;
}

}  // namespace

TEST_CASE("data generation", "[simulation][generate]") {
  ScenarioSpec s = builtin_scenario("normal-shift");
  const std::size_t n = 20'000;
  const Dataset d = generate(s, n, 0);
  REQUIRE(d.size() == n);
  CHECK(true_config(s, n).boundaries() == std::vector<std::size_t>{10'000});

  double a = 0.0, b = 0.0;
  for (std::size_t t = 0; t < n / 2; ++t) a += d(t, 0);
  for (std::size_t t = n / 2; t < n; ++t) b += d(t, 0);
  const double band = 5.0 / std::sqrt(n / 2.0);
  CHECK(std::abs(a / (n / 2.0) - 0.0) <= band);
  CHECK(std::abs(b / (n / 2.0) - 2.0) <= band);

  CHECK(generate(s, 100, 7) == generate(s, 100, 7));
  CHECK_FALSE(generate(s, 100, 7) == generate(s, 100, 8));
  s.seed += 1;
  CHECK_FALSE(generate(s, 100, 7) == generate(builtin_scenario("normal-shift"), 100, 7));
}

TEST_CASE("uneven fractions round down", "[simulation][generate]") {
  ScenarioSpec s = builtin_scenario("normal-shift");
  s.model = ModelSpec::homogeneous(std::make_shared<NormalCommonVariance>(), 2);
  s.truth.thetas.push_back(v1(-1.0));
  s.fractions = {1.0 / 3.0, 0.7};
  CHECK(true_config(s, 100).boundaries() == std::vector<std::size_t>{33, 70});
  CHECK(generate(s, 100, 0).size() == 100);
  CHECK_THROWS_AS(true_config(s, 2), ArgumentError);
}

TEST_CASE("replication records", "[simulation][replicate]") {
  const ScenarioSpec s = builtin_scenario("normal-shift");
  for (std::size_t rep = 0; rep < 10; ++rep) {
    const auto r = detail::replicate(s, 200, rep, 1.96);
    REQUIRE_FALSE(r.failed);
    REQUIRE(r.boundaries.size() == 1);
    const auto diff = static_cast<long>(r.boundaries[0]) - 100;
    CHECK(r.scaled_error == static_cast<std::size_t>(std::abs(diff)));
    CHECK(r.lambda_error == Approx(std::abs(diff) / 200.0));
    CHECK(r.z.size() == 3);
    for (std::size_t c = 0; c < 3; ++c) CHECK(r.covered[c] == (std::abs(r.z[c]) <= 1.96));
  }
}

TEST_CASE("scenario validation", "[simulation][errors]") {
  ScenarioSpec s = builtin_scenario("normal-shift");
  s.fractions = {0.5, 0.7};
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  s = builtin_scenario("normal-shift");
  s.sizes = {400, 100};
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  s = builtin_scenario("normal-shift");
  s.reps = 0;
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  s = builtin_scenario("normal-shift");
  s.truth.psi = v1(-1.0);
  CHECK_THROWS_AS(s.validate(), ParameterError);
  CHECK_THROWS_AS(builtin_scenario("nope"), ArgumentError);
}

TEST_CASE("equal neighbouring segments are rejected", "[simulation][identifiability]") {
  const ScenarioSpec s = small_shift(0.0, 5);
  CHECK_THROWS_AS(scenario_constants(s), IdentifiabilityError);
  CHECK_THROWS_AS(run_consistency(s), IdentifiabilityError);
  CHECK(scenario_constants(small_shift(2.0)).G_bar < 0.0);
}

TEST_CASE("Monte Carlo summaries", "[simulation][suites]") {
  SECTION("a larger shift shrinks the boundary tails") {
    ScenarioSpec weak = small_shift(1.0), strong = small_shift(2.0);
    weak.deltas = strong.deltas = {2.0, 5.0};
    const auto w = run_rate(weak), st = run_rate(strong);
    for (std::size_t q = 0; q < 2; ++q) CHECK(st.sizes.back().tail_probability[q] <= w.sizes.back().tail_probability[q]);
    CHECK(w.sizes.back().tail_probability[0] > 0.0);
  }

  SECTION("reports do not depend on the thread count") {
    ScenarioSpec a = small_shift(2.0, 30), b = a;
    a.threads = 1;
    b.threads = 4;
    const auto ra = run_normality(a), rb = run_normality(b);
    REQUIRE(ra.sizes.size() == rb.sizes.size());
    for (std::size_t q = 0; q < ra.sizes.size(); ++q) {
      for (std::size_t r = 0; r < 30; ++r) {
        CHECK(ra.sizes[q].records[r].boundaries == rb.sizes[q].records[r].boundaries);
        CHECK(ra.sizes[q].records[r].estimate == rb.sizes[q].records[r].estimate);
      }
      CHECK(ra.sizes[q].coverage == rb.sizes[q].coverage);
    }
    CHECK(to_json(ra).dump() == to_json(rb).dump());
  }

  SECTION("consistency suite reports medians along n") {
    const auto r = run_consistency(small_shift(2.0, 60));
    REQUIRE(r.sizes.size() == 2);
    CHECK(r.sizes[1].median_theta_error[0] < r.sizes[0].median_theta_error[0]);
    CHECK(r.sizes[1].median_psi_error < r.sizes[0].median_psi_error);
    CHECK(r.sizes[0].failures == 0);
  }
}

TEST_CASE("helpers", "[simulation][helpers]") {
  CHECK(detail::median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(detail::median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(std::isnan(detail::median({})));
  std::vector<double> q;
  const boost::math::normal_distribution<double> z;
  for (int i = 0; i < 1000; ++i) q.push_back(boost::math::quantile(z, (i + 0.5) / 1000.0));
  CHECK(detail::ks_to_normal(q) == Approx(0.0005).margin(1e-9));
  CHECK(detail::ks_to_normal(std::vector<double>(10, 5.0)) > 0.99);
}

TEST_CASE("half chi-square demonstration", "[simulation][hinkley]") {
  const auto r = hinkley_demo({10, 100, 1000}, 0.7, 99, 4000, 0);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.passed());
  for (const auto& row : r.rows) {
    CHECK(row.min_statistic >= 0.0);
    CHECK(std::abs(row.mean - 0.5) <= 5.0 * row.std_error);
    // SE of a half chi-square(1) mean is sqrt(1/2)/sqrt(reps).
    CHECK(row.std_error == Approx(std::sqrt(0.5 / 4000.0)).epsilon(0.1));
  }
  // Statistics recomputed from the same streams.
  double expected = 0.0;
  for (std::uint64_t rep = 0; rep < 2; ++rep) {
    Engine rng = make_stream(99, {10, rep});
    std::vector<double> x;
    NormalKnownVariance(1.0).sample(Vec(), v1(0.7), 10, rng, x);
    double mean = 0.0;
    for (double v : x) mean += v / 10.0;
    expected += 0.5 * 0.5 * 10.0 * (mean - 0.7) * (mean - 0.7);
  }
  CHECK(hinkley_demo({10}, 0.7, 99, 2, 1).rows[0].mean == Approx(expected).epsilon(1e-12));
  CHECK(hinkley_demo({10}, 0.7, 99, 50, 1).rows[0].mean == hinkley_demo({10}, 0.7, 99, 50, 3).rows[0].mean);
  CHECK_THROWS_AS(hinkley_demo({100, 10}, 0.0, 1, 10), ArgumentError);
  CHECK_THROWS_AS(hinkley_demo({10}, 0.0, 1, 1), ArgumentError);
}
