#pragma once

// Built-in segment families. All are exponential families: normal mean with known
// variance, normal mean with a common variance ψ, exponential rate, Poisson mean, and a
// p-variate normal mean with a common covariance whose lower Cholesky factor is ψ.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "cpmle/family.hpp"

namespace cpmle {

namespace detail {

inline constexpr double log_two_pi = 1.8378770664093454835606594728112;

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct ColumnSummary {
  double min = 0.0, max = 0.0, mean = 0.0, variance = 0.0;
};

inline ColumnSummary summarize_column(const Dataset& data, std::size_t c) {
  ColumnSummary s;
  const std::size_t n = data.size();
  if (n == 0) {
    s.max = 1.0;
    s.variance = 1.0;
    return s;
  }
  s.min = s.max = data(0, c);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = data(i, c);
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    sum += v;
  }
  s.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (data(i, c) - s.mean) * (data(i, c) - s.mean);
  s.variance = n > 1 ? ss / static_cast<double>(n - 1) : 0.0;
  return s;
}

/// [min − 10·range, max + 10·range]; a zero range counts as 1.
inline std::pair<double, double> location_bounds(const ColumnSummary& s) {
  double range = s.max - s.min;
  if (!(range > 0.0)) range = 1.0;
  return {s.min - 10.0 * range, s.max + 10.0 * range};
}

inline double positive_or_one(double v) { return v > 0.0 && std::isfinite(v) ? v : 1.0; }

inline double mean_of(const Dataset& data, std::size_t begin, std::size_t end, std::size_t c = 0) {
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) sum += data(i, c);
  return sum / static_cast<double>(end - begin);
}

}  // namespace detail

/// Normal with unknown mean θ and a variance fixed as model data.
class NormalKnownVariance final : public SegmentFamily {
 public:
  explicit NormalKnownVariance(double variance = 1.0) : variance_(variance) {
    if (!(variance > 0.0) || !std::isfinite(variance))
      throw ArgumentError("normal-known-var needs a positive finite variance");
  }

  double variance() const { return variance_; }

  std::string kind() const override { return "normal-known-var"; }
  std::string descriptor() const override {
    return kind() + "(variance=" + detail::format_number(variance_) + ")";
  }
  std::size_t theta_dim() const override { return 1; }
  Support support() const override { return Support::real; }
  bool valid_parameters(const VecIn&, const VecIn& theta) const override { return std::isfinite(theta[0]); }

  double log_density(const VecIn&, const VecIn& theta, Observation x) const override {
    const double r = x[0] - theta[0];
    return -0.5 * (detail::log_two_pi + std::log(variance_)) - 0.5 * r * r / variance_;
  }
  void gradient(const VecIn&, const VecIn& theta, Observation x, VecOut out) const override {
    out[0] = (x[0] - theta[0]) / variance_;
  }
  void hessian(const VecIn&, const VecIn&, Observation, MatOut out) const override {
    out(0, 0) = -1.0 / variance_;
  }

  void sample(const VecIn&, const VecIn& theta, std::size_t count, Engine& rng,
              std::vector<double>& out) const override {
    std::normal_distribution<double> dist(theta[0], std::sqrt(variance_));
    for (std::size_t i = 0; i < count; ++i) out.push_back(dist(rng));
  }

  std::size_t statistic_dim() const override { return 2; }
  void add_statistics(Observation x, std::span<long double> acc) const override {
    acc[0] += x[0];
    acc[1] += static_cast<long double>(x[0]) * x[0];
  }
  std::optional<SegmentFit> fit_from_statistics(const VecIn&, std::span<const long double> s,
                                                std::size_t count,
                                                const BlockBox& box) const override {
    const auto m = static_cast<long double>(count);
    const double mu = std::clamp(static_cast<double>(s[0] / m), box.lower[0], box.upper[0]);
    const long double rss = s[1] - 2.0L * mu * s[0] + m * mu * mu;
    const double ll = -0.5 * static_cast<double>(m) * (detail::log_two_pi + std::log(variance_)) -
                      static_cast<double>(rss) / (2.0 * variance_);
    return SegmentFit{Vec::Constant(1, mu), ll};
  }
  Vec initial_theta(const VecIn&, const Dataset& data, std::size_t begin, std::size_t end,
                    const BlockBox&) const override {
    return Vec::Constant(1, detail::mean_of(data, begin, end));
  }

  std::optional<Moments> moments(const VecIn&, const VecIn& theta) const override {
    return Moments{Vec::Constant(1, theta[0]), Mat::Constant(1, 1, variance_)};
  }
  std::optional<double> expected_log_density(const VecIn&, const VecIn& theta,
                                             const Moments& truth) const override {
    const double d = truth.mean[0] - theta[0];
    return -0.5 * (detail::log_two_pi + std::log(variance_)) -
           (truth.covariance(0, 0) + d * d) / (2.0 * variance_);
  }
  std::optional<double> negative_entropy(const VecIn&, const VecIn&) const override {
    return -0.5 * (detail::log_two_pi + std::log(variance_)) - 0.5;
  }
  std::pair<double, double> integration_range(const VecIn&, const VecIn& theta) const override {
    const double sd = std::sqrt(variance_);
    return {theta[0] - 40.0 * sd, theta[0] + 40.0 * sd};
  }

  BlockBox default_theta_box(const Dataset& data) const override {
    auto [lo, hi] = detail::location_bounds(detail::summarize_column(data, 0));
    return {Vec::Constant(1, lo), Vec::Constant(1, hi)};
  }

 private:
  double variance_;
};

/// Normal with unknown mean θ and a variance ψ shared by every segment using it.
class NormalCommonVariance final : public SegmentFamily {
 public:
  std::string kind() const override { return "normal-common-var"; }
  std::size_t theta_dim() const override { return 1; }
  std::size_t psi_dim() const override { return 1; }
  std::string psi_role() const override { return "variance"; }
  Support support() const override { return Support::real; }
  bool valid_parameters(const VecIn& psi, const VecIn& theta) const override {
    return psi[0] > 0.0 && std::isfinite(theta[0]);
  }

  double log_density(const VecIn& psi, const VecIn& theta, Observation x) const override {
    const double r = x[0] - theta[0];
    return -0.5 * (detail::log_two_pi + std::log(psi[0])) - 0.5 * r * r / psi[0];
  }
  void gradient(const VecIn& psi, const VecIn& theta, Observation x, VecOut out) const override {
    const double v = psi[0], r = x[0] - theta[0];
    out[0] = -0.5 / v + 0.5 * r * r / (v * v);
    out[1] = r / v;
  }
  void hessian(const VecIn& psi, const VecIn& theta, Observation x, MatOut out) const override {
    const double v = psi[0], r = x[0] - theta[0];
    out(0, 0) = 0.5 / (v * v) - r * r / (v * v * v);
    out(0, 1) = out(1, 0) = -r / (v * v);
    out(1, 1) = -1.0 / v;
  }

  void sample(const VecIn& psi, const VecIn& theta, std::size_t count, Engine& rng,
              std::vector<double>& out) const override {
    std::normal_distribution<double> dist(theta[0], std::sqrt(psi[0]));
    for (std::size_t i = 0; i < count; ++i) out.push_back(dist(rng));
  }

  std::size_t statistic_dim() const override { return 2; }
  void add_statistics(Observation x, std::span<long double> acc) const override {
    acc[0] += x[0];
    acc[1] += static_cast<long double>(x[0]) * x[0];
  }
  std::optional<SegmentFit> fit_from_statistics(const VecIn& psi, std::span<const long double> s,
                                                std::size_t count,
                                                const BlockBox& box) const override {
    const auto m = static_cast<long double>(count);
    const double mu = std::clamp(static_cast<double>(s[0] / m), box.lower[0], box.upper[0]);
    const long double rss = s[1] - 2.0L * mu * s[0] + m * mu * mu;
    const double ll = -0.5 * static_cast<double>(m) * (detail::log_two_pi + std::log(psi[0])) -
                      static_cast<double>(rss) / (2.0 * psi[0]);
    return SegmentFit{Vec::Constant(1, mu), ll};
  }
  Vec initial_theta(const VecIn&, const Dataset& data, std::size_t begin, std::size_t end,
                    const BlockBox&) const override {
    return Vec::Constant(1, detail::mean_of(data, begin, end));
  }

  std::optional<Moments> moments(const VecIn& psi, const VecIn& theta) const override {
    return Moments{Vec::Constant(1, theta[0]), Mat::Constant(1, 1, psi[0])};
  }
  std::optional<double> expected_log_density(const VecIn& psi, const VecIn& theta,
                                             const Moments& truth) const override {
    const double d = truth.mean[0] - theta[0];
    return -0.5 * (detail::log_two_pi + std::log(psi[0])) -
           (truth.covariance(0, 0) + d * d) / (2.0 * psi[0]);
  }
  std::optional<double> negative_entropy(const VecIn& psi, const VecIn&) const override {
    return -0.5 * (detail::log_two_pi + std::log(psi[0])) - 0.5;
  }
  std::pair<double, double> integration_range(const VecIn& psi, const VecIn& theta) const override {
    const double sd = std::sqrt(psi[0]);
    return {theta[0] - 40.0 * sd, theta[0] + 40.0 * sd};
  }

  BlockBox default_theta_box(const Dataset& data) const override {
    auto [lo, hi] = detail::location_bounds(detail::summarize_column(data, 0));
    return {Vec::Constant(1, lo), Vec::Constant(1, hi)};
  }
  /// [1e-6·s², 1e6·s²] around the whole-sample variance.
  BlockBox default_psi_box(const Dataset& data) const override {
    const double s2 = detail::positive_or_one(detail::summarize_column(data, 0).variance);
    return {Vec::Constant(1, 1e-6 * s2), Vec::Constant(1, 1e6 * s2)};
  }
  /// Whole-sample variance MLE.
  Vec initial_psi(const Dataset& data, const BlockBox& box) const override {
    const auto s = detail::summarize_column(data, 0);
    const double n = static_cast<double>(data.size());
    const double mle = n > 1 ? s.variance * (n - 1.0) / n : 0.0;
    return box.clamp(Vec::Constant(1, mle > 0.0 ? mle : box.midpoint()[0]));
  }
};

/// Exponential with rate θ.
class Exponential final : public SegmentFamily {
 public:
  std::string kind() const override { return "exponential"; }
  std::size_t theta_dim() const override { return 1; }
  Support support() const override { return Support::nonnegative_real; }
  bool valid_parameters(const VecIn&, const VecIn& theta) const override {
    return theta[0] > 0.0 && std::isfinite(theta[0]);
  }

  double log_density(const VecIn&, const VecIn& theta, Observation x) const override {
    return std::log(theta[0]) - theta[0] * x[0];
  }
  void gradient(const VecIn&, const VecIn& theta, Observation x, VecOut out) const override {
    out[0] = 1.0 / theta[0] - x[0];
  }
  void hessian(const VecIn&, const VecIn& theta, Observation, MatOut out) const override {
    out(0, 0) = -1.0 / (theta[0] * theta[0]);
  }

  void sample(const VecIn&, const VecIn& theta, std::size_t count, Engine& rng,
              std::vector<double>& out) const override {
    std::exponential_distribution<double> dist(theta[0]);
    for (std::size_t i = 0; i < count; ++i) out.push_back(dist(rng));
  }

  std::size_t statistic_dim() const override { return 1; }
  void add_statistics(Observation x, std::span<long double> acc) const override { acc[0] += x[0]; }
  std::optional<SegmentFit> fit_from_statistics(const VecIn&, std::span<const long double> s,
                                                std::size_t count,
                                                const BlockBox& box) const override {
    const auto m = static_cast<double>(count);
    const double sum = static_cast<double>(s[0]);
    const double raw = sum > 0.0 ? m / sum : box.upper[0];
    const double rate = std::clamp(raw, box.lower[0], box.upper[0]);
    return SegmentFit{Vec::Constant(1, rate), m * std::log(rate) - rate * sum};
  }
  Vec initial_theta(const VecIn&, const Dataset& data, std::size_t begin, std::size_t end,
                    const BlockBox& box) const override {
    const double mean = detail::mean_of(data, begin, end);
    return Vec::Constant(1, mean > 0.0 ? 1.0 / mean : box.upper[0]);
  }

  std::optional<Moments> moments(const VecIn&, const VecIn& theta) const override {
    return Moments{Vec::Constant(1, 1.0 / theta[0]), Mat::Constant(1, 1, 1.0 / (theta[0] * theta[0]))};
  }
  std::optional<double> expected_log_density(const VecIn&, const VecIn& theta,
                                             const Moments& truth) const override {
    return std::log(theta[0]) - theta[0] * truth.mean[0];
  }
  std::optional<double> negative_entropy(const VecIn&, const VecIn& theta) const override {
    return std::log(theta[0]) - 1.0;
  }
  std::pair<double, double> integration_range(const VecIn&, const VecIn& theta) const override {
    return {0.0, 80.0 / theta[0]};
  }

  BlockBox default_theta_box(const Dataset& data) const override {
    const double mean = detail::positive_or_one(detail::summarize_column(data, 0).mean);
    return {Vec::Constant(1, 1e-6 / mean), Vec::Constant(1, 1e6 / mean)};
  }
};

/// Poisson with mean θ.
class Poisson final : public SegmentFamily {
 public:
  std::string kind() const override { return "poisson"; }
  std::size_t theta_dim() const override { return 1; }
  Support support() const override { return Support::nonnegative_integer; }
  bool valid_parameters(const VecIn&, const VecIn& theta) const override {
    return theta[0] > 0.0 && std::isfinite(theta[0]);
  }

  double log_density(const VecIn&, const VecIn& theta, Observation x) const override {
    return x[0] * std::log(theta[0]) - theta[0] - std::lgamma(x[0] + 1.0);
  }
  void gradient(const VecIn&, const VecIn& theta, Observation x, VecOut out) const override {
    out[0] = x[0] / theta[0] - 1.0;
  }
  void hessian(const VecIn&, const VecIn& theta, Observation x, MatOut out) const override {
    out(0, 0) = -x[0] / (theta[0] * theta[0]);
  }

  void sample(const VecIn&, const VecIn& theta, std::size_t count, Engine& rng,
              std::vector<double>& out) const override {
    std::poisson_distribution<long long> dist(theta[0]);
    for (std::size_t i = 0; i < count; ++i) out.push_back(static_cast<double>(dist(rng)));
  }

  std::size_t statistic_dim() const override { return 2; }
  void add_statistics(Observation x, std::span<long double> acc) const override {
    acc[0] += x[0];
    acc[1] += std::lgamma(x[0] + 1.0);
  }
  std::optional<SegmentFit> fit_from_statistics(const VecIn&, std::span<const long double> s,
                                                std::size_t count,
                                                const BlockBox& box) const override {
    const auto m = static_cast<double>(count);
    const double sum = static_cast<double>(s[0]);
    const double mean = std::clamp(sum / m, box.lower[0], box.upper[0]);
    const double ll = sum * std::log(mean) - m * mean - static_cast<double>(s[1]);
    return SegmentFit{Vec::Constant(1, mean), ll};
  }
  Vec initial_theta(const VecIn&, const Dataset& data, std::size_t begin, std::size_t end,
                    const BlockBox& box) const override {
    return Vec::Constant(1, std::max(detail::mean_of(data, begin, end), box.lower[0]));
  }

  std::optional<Moments> moments(const VecIn&, const VecIn& theta) const override {
    return Moments{Vec::Constant(1, theta[0]), Mat::Constant(1, 1, theta[0])};
  }
  std::optional<double> divergence_from(const VecIn&, const VecIn& theta, const SegmentFamily& truth,
                                        const VecIn&, const VecIn& theta0) const override {
    if (truth.kind() != kind()) return std::nullopt;
    const double m0 = theta0[0];
    return m0 * std::log(theta[0] / m0) - theta[0] + m0;
  }
  std::pair<double, double> integration_range(const VecIn&, const VecIn& theta) const override {
    return {0.0, std::ceil(theta[0] + 40.0 * std::sqrt(theta[0]) + 40.0)};
  }

  BlockBox default_theta_box(const Dataset& data) const override {
    const auto s = detail::summarize_column(data, 0);
    const double lo = 1e-6 * std::max(s.mean, 1.0);
    const double hi = s.max + 10.0 * std::max(s.max - s.min, 1.0) + 1.0;
    return {Vec::Constant(1, lo), Vec::Constant(1, hi)};
  }
};

/// Packed lower-triangular Cholesky factor, row by row: L00, L10, L11, L20, ...
inline Mat cholesky_from_packed(const VecIn& packed, std::size_t p) {
  Mat l = Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  Eigen::Index idx = 0;
  for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(p); ++a)
    for (Eigen::Index b = 0; b <= a; ++b) l(a, b) = packed[idx++];
  return l;
}

inline Vec packed_from_cholesky(const Mat& l) {
  const Eigen::Index p = l.rows();
  Vec out(p * (p + 1) / 2);
  Eigen::Index idx = 0;
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b <= a; ++b) out[idx++] = l(a, b);
  return out;
}

/// Packed Cholesky factor of a symmetric positive-definite matrix.
inline Vec packed_cholesky_of(const Mat& sigma) {
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success) throw ParameterError("covariance is not positive definite");
  return packed_from_cholesky(llt.matrixL());
}

/// p-variate normal with mean vector θ and common covariance Σ = L Lᵀ, ψ = packed L.
class MultivariateNormalCommonCovariance final : public SegmentFamily {
 public:
  explicit MultivariateNormalCommonCovariance(std::size_t dim) : p_(dim) {
    if (dim == 0) throw ArgumentError("mvn-common-cov needs dim >= 1");
  }

  std::size_t dim() const { return p_; }

  std::string kind() const override { return "mvn-common-cov"; }
  std::string descriptor() const override { return kind() + "(dim=" + std::to_string(p_) + ")"; }
  std::size_t theta_dim() const override { return p_; }
  std::size_t psi_dim() const override { return p_ * (p_ + 1) / 2; }
  std::string psi_role() const override { return "cholesky-covariance(dim=" + std::to_string(p_) + ")"; }
  std::size_t observation_dim() const override { return p_; }
  Support support() const override { return Support::real_vector; }

  bool valid_parameters(const VecIn& psi, const VecIn& theta) const override {
    if (!theta.allFinite() || !psi.allFinite()) return false;
    Eigen::Index idx = 0;
    for (std::size_t a = 0; a < p_; ++a) {
      idx += static_cast<Eigen::Index>(a);
      if (!(psi[idx] > 0.0)) return false;
      ++idx;
    }
    return true;
  }

  double log_density(const VecIn& psi, const VecIn& theta, Observation x) const override {
    const Mat l = cholesky_from_packed(psi, p_);
    Vec z = Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(p_)) - theta;
    l.triangularView<Eigen::Lower>().solveInPlace(z);
    return -0.5 * static_cast<double>(p_) * detail::log_two_pi - l.diagonal().array().log().sum() -
           0.5 * z.squaredNorm();
  }

  // ∂/∂L_ab = w_a z_b − δ_ab / L_aa with z = L⁻¹(x − μ), w = L⁻ᵀz = Σ⁻¹(x − μ); ∂/∂μ = w.
  void gradient(const VecIn& psi, const VecIn& theta, Observation x, VecOut out) const override {
    const Mat l = cholesky_from_packed(psi, p_);
    Vec z = Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(p_)) - theta;
    l.triangularView<Eigen::Lower>().solveInPlace(z);
    Vec w = z;
    l.transpose().triangularView<Eigen::Upper>().solveInPlace(w);
    Eigen::Index idx = 0;
    for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(p_); ++a)
      for (Eigen::Index b = 0; b <= a; ++b)
        out[idx++] = w[a] * z[b] - (a == b ? 1.0 / l(a, a) : 0.0);
    out.tail(static_cast<Eigen::Index>(p_)) = w;
  }

  void sample(const VecIn& psi, const VecIn& theta, std::size_t count, Engine& rng,
              std::vector<double>& out) const override {
    const Mat l = cholesky_from_packed(psi, p_);
    std::normal_distribution<double> dist(0.0, 1.0);
    Vec e(static_cast<Eigen::Index>(p_));
    for (std::size_t i = 0; i < count; ++i) {
      for (auto& v : e) v = dist(rng);
      const Vec draw = theta + l * e;
      out.insert(out.end(), draw.begin(), draw.end());
    }
  }

  // Statistics: Σx (p entries) then the lower triangle of Σxxᵀ, row by row.
  std::size_t statistic_dim() const override { return p_ + p_ * (p_ + 1) / 2; }
  void add_statistics(Observation x, std::span<long double> acc) const override {
    std::size_t idx = p_;
    for (std::size_t a = 0; a < p_; ++a) {
      acc[a] += x[a];
      for (std::size_t b = 0; b <= a; ++b) acc[idx++] += static_cast<long double>(x[a]) * x[b];
    }
  }
  std::optional<SegmentFit> fit_from_statistics(const VecIn& psi, std::span<const long double> s,
                                                std::size_t count,
                                                const BlockBox& box) const override {
    const auto m = static_cast<long double>(count);
    Vec mu(static_cast<Eigen::Index>(p_));
    std::vector<long double> mean(p_);
    for (std::size_t a = 0; a < p_; ++a) {
      mean[a] = s[a] / m;
      mu[static_cast<Eigen::Index>(a)] = static_cast<double>(mean[a]);
    }
    if (!box.contains(mu)) return std::nullopt;

    const Mat l = cholesky_from_packed(psi, p_);
    Mat linv = Mat::Identity(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_));
    l.triangularView<Eigen::Lower>().solveInPlace(linv);
    const Mat precision = linv.transpose() * linv;

    long double quad = 0.0L;
    std::size_t idx = p_;
    for (std::size_t a = 0; a < p_; ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        const long double scatter = s[idx++] - m * mean[a] * mean[b];
        const long double weight = a == b ? 1.0L : 2.0L;
        quad += weight * precision(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * scatter;
      }
    }
    const double per_obs = -0.5 * static_cast<double>(p_) * detail::log_two_pi -
                           l.diagonal().array().log().sum();
    return SegmentFit{mu, static_cast<double>(m) * per_obs - 0.5 * static_cast<double>(quad)};
  }
  Vec initial_theta(const VecIn&, const Dataset& data, std::size_t begin, std::size_t end,
                    const BlockBox&) const override {
    Vec mu(static_cast<Eigen::Index>(p_));
    for (std::size_t a = 0; a < p_; ++a) mu[static_cast<Eigen::Index>(a)] = detail::mean_of(data, begin, end, a);
    return mu;
  }

  std::optional<Moments> moments(const VecIn& psi, const VecIn& theta) const override {
    const Mat l = cholesky_from_packed(psi, p_);
    return Moments{theta, l * l.transpose()};
  }
  std::optional<double> expected_log_density(const VecIn& psi, const VecIn& theta,
                                             const Moments& truth) const override {
    const Mat l = cholesky_from_packed(psi, p_);
    Mat c = truth.covariance;
    l.triangularView<Eigen::Lower>().solveInPlace(c);
    Mat ct = c.transpose();
    l.triangularView<Eigen::Lower>().solveInPlace(ct);  // L⁻¹ C L⁻ᵀ
    Vec d = truth.mean - theta;
    l.triangularView<Eigen::Lower>().solveInPlace(d);
    return -0.5 * static_cast<double>(p_) * detail::log_two_pi - l.diagonal().array().log().sum() -
           0.5 * (ct.trace() + d.squaredNorm());
  }
  std::optional<double> negative_entropy(const VecIn& psi, const VecIn&) const override {
    const Mat l = cholesky_from_packed(psi, p_);
    return -0.5 * static_cast<double>(p_) * (detail::log_two_pi + 1.0) - l.diagonal().array().log().sum();
  }

  BlockBox default_theta_box(const Dataset& data) const override {
    Vec lo(static_cast<Eigen::Index>(p_)), hi(static_cast<Eigen::Index>(p_));
    for (std::size_t a = 0; a < p_; ++a) {
      auto [l, h] = detail::location_bounds(detail::summarize_column(data, a));
      lo[static_cast<Eigen::Index>(a)] = l;
      hi[static_cast<Eigen::Index>(a)] = h;
    }
    return {lo, hi};
  }
  /// Diagonal of L in [1e-3·s_a, 1e3·s_a], off-diagonal in ±1e3·s_a (variances within
  /// [1e-6·s², 1e6·s²]).
  BlockBox default_psi_box(const Dataset& data) const override {
    Vec lo(static_cast<Eigen::Index>(psi_dim())), hi(static_cast<Eigen::Index>(psi_dim()));
    Eigen::Index idx = 0;
    for (std::size_t a = 0; a < p_; ++a) {
      const double sd = std::sqrt(detail::positive_or_one(detail::summarize_column(data, a).variance));
      for (std::size_t b = 0; b <= a; ++b, ++idx) {
        lo[idx] = a == b ? 1e-3 * sd : -1e3 * sd;
        hi[idx] = 1e3 * sd;
      }
    }
    return {lo, hi};
  }
  /// Packed Cholesky factor of the whole-sample covariance MLE.
  Vec initial_psi(const Dataset& data, const BlockBox& box) const override {
    const auto n = static_cast<Eigen::Index>(data.size());
    const auto p = static_cast<Eigen::Index>(p_);
    Mat x(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index a = 0; a < p; ++a) x(i, a) = data(static_cast<std::size_t>(i), static_cast<std::size_t>(a));
    const Mat centered = x.rowwise() - x.colwise().mean();
    const Mat cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(n, 1));
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success) return box.midpoint();
    return box.clamp(packed_from_cholesky(llt.matrixL()));
  }

 private:
  std::size_t p_;
};

/// Builds a family from "name" or "name(key=value, ...)":
///   normal-known-var(variance=1), normal-common-var, exponential, poisson, mvn-common-cov(dim=5).
inline FamilyPtr make_family(std::string_view text) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  };
  text = trim(text);
  std::string name(text);
  std::map<std::string, double, std::less<>> args;
  if (auto open = text.find('('); open != std::string_view::npos) {
    if (text.back() != ')') throw ArgumentError("family descriptor '" + std::string(text) + "' lacks ')'");
    name = std::string(trim(text.substr(0, open)));
    std::string_view inner = text.substr(open + 1, text.size() - open - 2);
    while (!inner.empty()) {
      const auto comma = inner.find(',');
      std::string_view item = trim(inner.substr(0, comma));
      inner = comma == std::string_view::npos ? std::string_view{} : inner.substr(comma + 1);
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) throw ArgumentError("family argument '" + std::string(item) + "' lacks '='");
      std::string key(trim(item.substr(0, eq)));
      std::string_view val = trim(item.substr(eq + 1));
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
      if (ec != std::errc() || ptr != val.data() + val.size())
        throw ArgumentError("family argument '" + key + "' is not a number");
      args[key] = v;
    }
  }
  auto take = [&](const std::string& key, double fallback) {
    auto it = args.find(key);
    if (it == args.end()) return fallback;
    double v = it->second;
    args.erase(it);
    return v;
  };
  FamilyPtr family;
  if (name == "normal-known-var") {
    family = std::make_shared<NormalKnownVariance>(take("variance", 1.0));
  } else if (name == "normal-common-var") {
    family = std::make_shared<NormalCommonVariance>();
  } else if (name == "exponential") {
    family = std::make_shared<Exponential>();
  } else if (name == "poisson") {
    family = std::make_shared<Poisson>();
  } else if (name == "mvn-common-cov") {
    const double dim = take("dim", 0.0);
    if (!(dim >= 1.0) || dim != std::floor(dim)) throw ArgumentError("mvn-common-cov needs an integer dim >= 1");
    family = std::make_shared<MultivariateNormalCommonCovariance>(static_cast<std::size_t>(dim));
  } else {
    throw ArgumentError("unknown family '" + name +
                        "' (known: normal-known-var, normal-common-var, exponential, poisson, mvn-common-cov)");
  }
  if (!args.empty()) throw ArgumentError("unknown argument '" + args.begin()->first + "' for family " + name);
  return family;
}

}  // namespace cpmle
