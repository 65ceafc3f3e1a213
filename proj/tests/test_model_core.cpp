#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "cpmle/cpmle.hpp"

using namespace cpmle;
using Catch::Approx;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

struct Point {
  Vec psi, theta;
  std::vector<double> x;
};

// Random in-domain parameters and an in-support observation for each family.
Point random_point(const SegmentFamily& f, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Point p;
  const auto kind = f.kind();
  if (kind == "normal-known-var") {
    p.theta = v1(-3.0 + 6.0 * u(rng));
    p.x = {-4.0 + 8.0 * u(rng)};
  } else if (kind == "normal-common-var") {
    p.psi = v1(0.3 + 3.0 * u(rng));
    p.theta = v1(-3.0 + 6.0 * u(rng));
    p.x = {-4.0 + 8.0 * u(rng)};
  } else if (kind == "exponential") {
    p.theta = v1(0.2 + 4.0 * u(rng));
    p.x = {5.0 * u(rng)};
  } else if (kind == "poisson") {
    p.theta = v1(0.5 + 10.0 * u(rng));
    p.x = {std::floor(15.0 * u(rng))};
  } else {
    const auto dim = f.observation_dim();
    p.psi = Vec(static_cast<Eigen::Index>(dim * (dim + 1) / 2));
    Eigen::Index at = 0;
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b <= a; ++b) p.psi[at++] = a == b ? 0.7 + u(rng) : -0.5 + u(rng);
    p.theta = Vec(static_cast<Eigen::Index>(dim));
    for (std::size_t a = 0; a < dim; ++a) {
      p.theta[static_cast<Eigen::Index>(a)] = -2.0 + 4.0 * u(rng);
      p.x.push_back(-3.0 + 6.0 * u(rng));
    }
  }
  return p;
}

std::vector<FamilyPtr> all_families() {
  return {std::make_shared<NormalKnownVariance>(2.5), std::make_shared<NormalCommonVariance>(),
          std::make_shared<Exponential>(), std::make_shared<Poisson>(),
          std::make_shared<MultivariateNormalCommonCovariance>(2),
          std::make_shared<MultivariateNormalCommonCovariance>(3)};
}

}  // namespace

TEST_CASE("log densities at reference points", "[family][density]") {
  const Vec none;
  double zero = 0.0, one = 1.0;
  CHECK(log_density(NormalKnownVariance(1.0), none, v1(0.0), Observation(&zero, 1)) ==
        Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
  CHECK(log_density(Exponential(), none, v1(1.0), Observation(&zero, 1)) == 0.0);
  const std::vector<double> origin{0.0, 0.0};
  CHECK(log_density(MultivariateNormalCommonCovariance(2), vec({1.0, 0.0, 1.0}), vec({0.0, 0.0}), origin) ==
        Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
  CHECK(log_density(Poisson(), none, v1(2.0), Observation(&one, 1)) == Approx(std::log(2.0) - 2.0).epsilon(1e-15));
}

TEST_CASE("scores at reference points", "[family][gradient]") {
  const Vec none;
  double one = 1.0;
  CHECK(grad_log_density(NormalKnownVariance(1.0), none, v1(0.0), Observation(&one, 1))[0] == Approx(1.0));
  CHECK(grad_log_density(Exponential(), none, v1(2.0), Observation(&one, 1))[0] == Approx(-0.5));
}

TEST_CASE("multivariate normal density matches the textbook formula", "[family][mvn]") {
  std::mt19937_64 rng(11);
  const MultivariateNormalCommonCovariance f(3);
  for (int rep = 0; rep < 5; ++rep) {
    const auto p = random_point(f, rng);
    Mat l = Mat::Zero(3, 3);
    Eigen::Index at = 0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b <= a; ++b) l(a, b) = p.psi[at++];
    const Mat sigma = l * l.transpose();
    const Eigen::Map<const Vec> x(p.x.data(), 3);
    const Vec r = x - p.theta;
    const double expected = -1.5 * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(sigma.determinant()) -
                            0.5 * r.dot(sigma.inverse() * r);
    CHECK(f.log_density(p.psi, p.theta, p.x) == Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("gradients and Hessians agree with central differences", "[family][gradient]") {
  std::mt19937_64 rng(2024);
  for (const auto& f : all_families()) {
    INFO(f->descriptor());
    for (int rep = 0; rep < 5; ++rep) {
      const auto p = random_point(*f, rng);
      const auto dp = p.psi.size(), dt = p.theta.size();
      Vec packed(dp + dt);
      packed << p.psi, p.theta;
      auto value = [&](const Vec& z) { return f->log_density(z.head(dp), z.tail(dt), p.x); };
      auto grad = [&](const Vec& z) {
        Vec g(dp + dt);
        f->gradient(z.head(dp), z.tail(dt), p.x, g);
        return g;
      };
      const Vec g = grad(packed);
      Mat h(dp + dt, dp + dt);
      f->hessian(p.psi, p.theta, p.x, h);
      for (Eigen::Index c = 0; c < packed.size(); ++c) {
        const double step = 1e-5 * (1.0 + std::abs(packed[c]));
        Vec up = packed, dn = packed;
        up[c] += step;
        dn[c] -= step;
        const double fd = (value(up) - value(dn)) / (2.0 * step);
        CHECK(std::abs(g[c] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
        const Vec fd_col = (grad(up) - grad(dn)) / (2.0 * step);
        for (Eigen::Index r = 0; r < packed.size(); ++r)
          CHECK(std::abs(h(r, c) - fd_col[r]) <= 1e-5 * std::max(1.0, std::abs(fd_col[r])));
      }
    }
  }
}

TEST_CASE("univariate densities integrate to one", "[family][normalization]") {
  const Vec none;
  boost::math::quadrature::tanh_sinh<double> real_line;
  boost::math::quadrature::exp_sinh<double> half_line;
  const NormalKnownVariance nk(2.5);
  CHECK(real_line.integrate([&](double x) { return std::exp(nk.log_density(none, v1(0.7), Observation(&x, 1))); },
                            -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()) ==
        Approx(1.0).epsilon(1e-10));
  const NormalCommonVariance nc;
  CHECK(real_line.integrate([&](double x) { return std::exp(nc.log_density(v1(0.4), v1(-1.0), Observation(&x, 1))); },
                            -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()) ==
        Approx(1.0).epsilon(1e-10));
  const Exponential ex;
  CHECK(half_line.integrate([&](double x) { return std::exp(ex.log_density(none, v1(3.0), Observation(&x, 1))); }, 0.0,
                            std::numeric_limits<double>::infinity()) == Approx(1.0).epsilon(1e-10));
  const Poisson po;
  long double mass = 0.0L;
  for (double k = 0.0; k < 200.0; k += 1.0) mass += std::exp(po.log_density(none, v1(7.5), Observation(&k, 1)));
  CHECK(static_cast<double>(mass) == Approx(1.0).epsilon(1e-13));
}

TEST_CASE("segment MLEs", "[family][mle]") {
  const Dataset two = Dataset::univariate({1.0, 3.0});
  const BlockBox wide(v1(-100.0), v1(100.0));
  CHECK(segment_mle_theta(NormalCommonVariance(), v1(1.0), two, wide).theta[0] == Approx(2.0));
  const Dataset ex = Dataset::univariate({0.5, 1.5});
  CHECK(segment_mle_theta(Exponential(), Vec(), ex, BlockBox(v1(1e-3), v1(1e3))).theta[0] == Approx(1.0));

  SECTION("Poisson estimate beats a dense grid search") {
    const Poisson f;
    const Dataset data = sample(f, Vec(), v1(4.0), 10, 77);
    const BlockBox box(v1(0.1), v1(20.0));
    const auto fit = segment_mle_theta(f, Vec(), data, box);
    double best = -std::numeric_limits<double>::infinity();
    for (double t = 0.1; t <= 20.0; t += 1e-4) best = std::max(best, segment_loglik(f, Vec(), v1(t), data, 0, 10));
    CHECK(std::abs(fit.loglik - best) <= 1e-6);
    CHECK(fit.loglik >= best - 1e-9);
  }

  SECTION("closed form and Newton agree") {
    for (const auto& f : all_families()) {
      INFO(f->descriptor());
      std::mt19937_64 rng(5);
      const auto p = random_point(*f, rng);
      const Dataset data = sample(*f, p.psi, p.theta, 40, 9);
      const auto box = f->default_theta_box(data);
      const auto closed = segment_mle_theta(*f, p.psi, data, 0, 40, box);
      const auto newton = segment_mle_theta_newton(*f, p.psi, data, 0, 40, box);
      CHECK(closed.loglik == Approx(newton.loglik).epsilon(1e-10));
      CHECK((closed.theta - newton.theta).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + closed.theta.norm()));
    }
  }
}

TEST_CASE("sampling", "[family][sample]") {
  const std::size_t m = 100'000;
  const auto normal = sample(NormalKnownVariance(1.0), Vec(), v1(0.0), m, 1);
  double s = 0.0;
  for (double x : normal.values()) s += x;
  CHECK(std::abs(s / m) <= 4.0 / std::sqrt(static_cast<double>(m)));
  const auto ex = sample(Exponential(), Vec(), v1(1.0), m, 2);
  s = 0.0;
  for (double x : ex.values()) s += x;
  CHECK(s / m >= 0.99);
  CHECK(s / m <= 1.01);

  for (const auto& f : all_families()) {
    std::mt19937_64 rng(3);
    const auto p = random_point(*f, rng);
    CHECK(sample(*f, p.psi, p.theta, 50, 42) == sample(*f, p.psi, p.theta, 50, 42));
    CHECK_FALSE(sample(*f, p.psi, p.theta, 50, 42) == sample(*f, p.psi, p.theta, 50, 43));
  }
}

TEST_CASE("multivariate sample covariance approaches the Cholesky product", "[family][mvn]") {
  const MultivariateNormalCommonCovariance f(2);
  const Vec psi = vec({2.0, 0.5, 1.0});
  const auto d = sample(f, psi, vec({1.0, -1.0}), 200'000, 8);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>> x(d.values().data(), 200'000, 2);
  const Mat c = x.rowwise() - x.colwise().mean();
  const Mat cov = c.transpose() * c / 200'000.0;
  CHECK(cov(0, 0) == Approx(4.0).epsilon(0.02));
  CHECK(cov(1, 0) == Approx(1.0).epsilon(0.03));
  CHECK(cov(1, 1) == Approx(1.25).epsilon(0.02));
}

TEST_CASE("parameter and support checks", "[family][errors]") {
  double neg = -1.0, half = 0.5;
  CHECK_THROWS_AS(log_density(Exponential(), Vec(), v1(1.0), Observation(&neg, 1)), DomainError);
  CHECK_THROWS_AS(log_density(Poisson(), Vec(), v1(1.0), Observation(&half, 1)), DomainError);
  CHECK_THROWS_AS(log_density(Exponential(), Vec(), v1(-1.0), Observation(&half, 1)), ParameterError);
  CHECK_THROWS_AS(log_density(NormalCommonVariance(), v1(0.0), v1(0.0), Observation(&half, 1)), ParameterError);
  CHECK_THROWS_AS(BlockBox(v1(1.0), v1(1.0)), ArgumentError);
  CHECK_THROWS_AS(BlockBox(v1(0.0), v1(std::numeric_limits<double>::infinity())), ArgumentError);
}

TEST_CASE("family descriptors", "[family][parse]") {
  CHECK(make_family("normal-known-var(variance=2)")->descriptor() == make_family(" normal-known-var( variance = 2 ) ")->descriptor());
  CHECK(make_family("mvn-common-cov(dim=5)")->observation_dim() == 5);
  CHECK(make_family("mvn-common-cov(dim=5)")->psi_dim() == 15);
  CHECK(make_family("poisson")->kind() == "poisson");
  CHECK_THROWS_AS(make_family("gamma"), ArgumentError);
  CHECK_THROWS_AS(make_family("normal-known-var(sd=2)"), ArgumentError);
  CHECK_THROWS_AS(make_family("mvn-common-cov"), ArgumentError);
}

TEST_CASE("datasets and change-point configurations", "[dataset]") {
  const Dataset d = Dataset::univariate({1, 2, 3, 4});
  CHECK(d.slice(1, 3) == Dataset::univariate({2, 3}));
  CHECK(d.reversed() == Dataset::univariate({4, 3, 2, 1}));
  CHECK(d.duplicated() == Dataset::univariate({1, 1, 2, 2, 3, 3, 4, 4}));
  CHECK_THROWS_AS(Dataset({1.0, std::nan("")}, 1), ArgumentError);
  CHECK_THROWS_AS(Dataset({1.0, 2.0, 3.0}, 2), ArgumentError);

  const ChangePointConfig c({3, 7}, 10);
  CHECK(c.fractions() == std::vector<double>{0.3, 0.7});
  CHECK(c.length(0) == 3);
  CHECK(c.length(2) == 3);
  CHECK(c.segment_of(3) == 1);
  CHECK_THROWS_AS(ChangePointConfig({3, 3}, 10), ArgumentError);
  CHECK_THROWS_AS(ChangePointConfig({0}, 10), ArgumentError);
  CHECK_THROWS_AS(ChangePointConfig({10}, 10), ArgumentError);
  CHECK(ChangePointConfig::from_fractions({0.5}, 100).boundaries() == std::vector<std::size_t>{50});
  CHECK(max_boundary_error(ChangePointConfig({48}, 100), ChangePointConfig({50}, 100)) == 2);
}

TEST_CASE("model specifications", "[model]") {
  auto nc = std::make_shared<NormalCommonVariance>();
  auto nk = std::make_shared<NormalKnownVariance>(1.0);
  auto ex = std::make_shared<Exponential>();
  const ModelSpec mixed({nc, nk, nc});
  CHECK(mixed.common_dim() == 1);
  CHECK(mixed.packed_dim() == 4);
  CHECK(mixed.psi_role() == "variance");
  CHECK(mixed.theta_offset(2) == 3);
  CHECK(ModelSpec({ex, nk}).common_dim() == 0);
  CHECK_THROWS_AS(ModelSpec({nc, std::make_shared<MultivariateNormalCommonCovariance>(1)}), ArgumentError);
  CHECK_THROWS_AS(ModelSpec({nk, std::make_shared<MultivariateNormalCommonCovariance>(2)}), ArgumentError);

  const ParameterState ok{v1(1.0), {v1(0.0), v1(1.0), v1(2.0)}};
  CHECK_NOTHROW(mixed.validate(ok));
  CHECK_THROWS_AS(mixed.validate(ParameterState{v1(1.0), {v1(0.0), v1(1.0)}}), ParameterError);
  CHECK(ok.packed() == vec({1.0, 0.0, 1.0, 2.0}));
  CHECK(mixed.unpack(ok.packed()) == ok);
}
