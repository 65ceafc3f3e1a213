#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cpmle/dataset.hpp"
#include "cpmle/error.hpp"
#include "cpmle/optimize.hpp"
#include "cpmle/rng.hpp"

namespace cpmle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecIn = Eigen::Ref<const Eigen::VectorXd>;
using VecOut = Eigen::Ref<Eigen::VectorXd>;
using MatOut = Eigen::Ref<Eigen::MatrixXd>;

enum class Support { real, nonnegative_real, nonnegative_integer, real_vector };

inline const char* to_string(Support s) {
  switch (s) {
    case Support::real: return "real";
    case Support::nonnegative_real: return "nonnegative-real";
    case Support::nonnegative_integer: return "nonnegative-integer";
    case Support::real_vector: return "real-vector";
  }
  return "unknown";
}

/// True when every point of `inner` lies in `outer`.
inline bool support_contains(Support outer, std::size_t outer_dim, Support inner, std::size_t inner_dim) {
  if (outer_dim != inner_dim) return false;
  auto rank = [dim = outer_dim](Support s) {
    switch (s) {
      case Support::nonnegative_integer: return 0;
      case Support::nonnegative_real: return 1;
      case Support::real: return 2;
      case Support::real_vector: return dim == 1 ? 2 : 3;
    }
    return 3;
  };
  const int a = rank(outer), b = rank(inner);
  if (a == 3 || b == 3) return a == b;
  return b <= a;
}

/// Componentwise closed box [lower, upper] with lower < upper.
struct BlockBox {
  Vec lower;
  Vec upper;

  BlockBox() = default;
  BlockBox(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) throw ArgumentError("box bounds have different dimensions");
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
      if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]))
        throw ArgumentError("box bounds must be finite");
      if (!(lower[i] < upper[i]))
        throw ArgumentError("box lower bound must be below upper bound in coordinate " +
                            std::to_string(i + 1));
    }
  }

  Eigen::Index size() const { return lower.size(); }
  bool contains(const VecIn& v) const {
    if (v.size() != lower.size()) return false;
    return (v.array() >= lower.array()).all() && (v.array() <= upper.array()).all();
  }
  Vec clamp(const VecIn& v) const { return v.cwiseMax(lower).cwiseMin(upper); }
  Vec midpoint() const { return 0.5 * (lower + upper); }
};

/// First two moments of a distribution: E[X] and Cov[X].
struct Moments {
  Vec mean;
  Mat covariance;
};

struct SegmentFit {
  Vec theta;
  double loglik = 0.0;
};

/// A parametric density f(ψ, θ; x) usable as the law of one segment.
///
/// Parameters are passed as ψ (the common block, empty when psi_dim() == 0) and θ.
/// Gradients and Hessians are in packed (ψ, θ) coordinates, ψ first. The unchecked
/// evaluators assume parameters in the natural domain and x in the support; the free
/// functions below add the checks.
class SegmentFamily {
 public:
  virtual ~SegmentFamily() = default;

  virtual std::string kind() const = 0;
  /// Kind plus fixed constants, e.g. "normal-known-var(variance=2)".
  virtual std::string descriptor() const { return kind(); }
  virtual std::size_t theta_dim() const = 0;
  virtual std::size_t psi_dim() const { return 0; }
  /// Meaning of ψ; families sharing ψ in one model must agree on it.
  virtual std::string psi_role() const { return {}; }
  virtual std::size_t observation_dim() const { return 1; }
  virtual Support support() const = 0;

  virtual bool in_support(Observation x) const {
    if (x.size() != observation_dim()) return false;
    for (double v : x) {
      if (!std::isfinite(v)) return false;
      switch (support()) {
        case Support::nonnegative_real:
          if (v < 0.0) return false;
          break;
        case Support::nonnegative_integer:
          if (v < 0.0 || v != std::floor(v)) return false;
          break;
        default: break;
      }
    }
    return true;
  }

  virtual bool valid_parameters(const VecIn& psi, const VecIn& theta) const = 0;

  virtual double log_density(const VecIn& psi, const VecIn& theta, Observation x) const = 0;
  virtual void gradient(const VecIn& psi, const VecIn& theta, Observation x, VecOut out) const = 0;

  /// Central differences of the analytic gradient unless overridden.
  virtual void hessian(const VecIn& psi, const VecIn& theta, Observation x, MatOut out) const {
    const auto dp = static_cast<Eigen::Index>(psi_dim());
    const auto dim = dp + static_cast<Eigen::Index>(theta_dim());
    Vec p(psi), t(theta), gp(dim), gm(dim);
    for (Eigen::Index c = 0; c < dim; ++c) {
      double& slot = c < dp ? p[c] : t[c - dp];
      const double orig = slot;
      const double h = 1e-5 * (1.0 + std::abs(orig));
      slot = orig + h;
      gradient(p, t, x, gp);
      slot = orig - h;
      gradient(p, t, x, gm);
      slot = orig;
      out.col(c) = (gp - gm) / (2.0 * h);
    }
    Mat sym = 0.5 * (out + out.transpose());
    out = sym;
  }

  /// Appends count·observation_dim() values drawn i.i.d. from f(ψ, θ; ·).
  virtual void sample(const VecIn& psi, const VecIn& theta, std::size_t count, Engine& rng,
                      std::vector<double>& out) const = 0;

  // Sufficient statistics. When statistic_dim() > 0 the per-interval θ-maximization can be
  // computed from sums of add_statistics() over the interval.
  virtual std::size_t statistic_dim() const { return 0; }
  virtual void add_statistics(Observation /*x*/, std::span<long double> /*acc*/) const {}
  /// Maximizer over the box from interval statistics, or nullopt when the closed form does
  /// not apply (the caller then falls back to Newton on the data).
  virtual std::optional<SegmentFit> fit_from_statistics(const VecIn& /*psi*/,
                                                        std::span<const long double> /*stats*/,
                                                        std::size_t /*count*/,
                                                        const BlockBox& /*theta_box*/) const {
    return std::nullopt;
  }

  /// Starting point for Newton on rows [begin, end).
  virtual Vec initial_theta(const VecIn& /*psi*/, const Dataset& /*data*/, std::size_t /*begin*/,
                            std::size_t /*end*/, const BlockBox& box) const {
    return box.midpoint();
  }

  // Expectation machinery used by the divergence v and the J decomposition.
  virtual std::optional<Moments> moments(const VecIn& /*psi*/, const VecIn& /*theta*/) const {
    return std::nullopt;
  }
  /// E[log f(ψ, θ; X)] when it depends on the law of X only through its first two moments.
  virtual std::optional<double> expected_log_density(const VecIn& /*psi*/, const VecIn& /*theta*/,
                                                     const Moments& /*truth*/) const {
    return std::nullopt;
  }
  /// E[log f(ψ, θ; X)] for X drawn from f itself.
  virtual std::optional<double> negative_entropy(const VecIn& /*psi*/, const VecIn& /*theta*/) const {
    return std::nullopt;
  }
  /// Closed-form v(ψ, θ; ψ⁰, θ⁰) = E⁰[log f(ψ,θ;X) − log f⁰(ψ⁰,θ⁰;X)] against `truth`.
  virtual std::optional<double> divergence_from(const VecIn& /*psi*/, const VecIn& /*theta*/,
                                                const SegmentFamily& /*truth*/,
                                                const VecIn& /*psi0*/,
                                                const VecIn& /*theta0*/) const {
    return std::nullopt;
  }
  /// Finite interval carrying all but a negligible fraction of the mass (univariate only;
  /// for integer support the summation range).
  virtual std::pair<double, double> integration_range(const VecIn& /*psi*/, const VecIn& /*theta*/) const {
    throw ArgumentError(descriptor() + " does not define an integration range");
  }

  virtual BlockBox default_theta_box(const Dataset& data) const = 0;
  virtual BlockBox default_psi_box(const Dataset& /*data*/) const { return {}; }
  /// Starting ψ for a single-segment fit of the whole sample.
  virtual Vec initial_psi(const Dataset& /*data*/, const BlockBox& box) const { return box.midpoint(); }
};

using FamilyPtr = std::shared_ptr<const SegmentFamily>;

namespace detail {

inline void check_parameters(const SegmentFamily& family, const VecIn& psi, const VecIn& theta) {
  if (static_cast<std::size_t>(psi.size()) != family.psi_dim() ||
      static_cast<std::size_t>(theta.size()) != family.theta_dim())
    throw ParameterError(family.descriptor() + ": parameter dimensions (" +
                         std::to_string(psi.size()) + ", " + std::to_string(theta.size()) +
                         ") do not match (" + std::to_string(family.psi_dim()) + ", " +
                         std::to_string(family.theta_dim()) + ")");
  if (!psi.allFinite() || !theta.allFinite() || !family.valid_parameters(psi, theta))
    throw ParameterError(family.descriptor() + ": parameters outside the natural domain");
}

inline void check_observation(const SegmentFamily& family, Observation x, std::size_t index) {
  if (!family.in_support(x))
    throw DomainError(family.descriptor() + ": observation " + std::to_string(index + 1) +
                      " is outside the support (" + to_string(family.support()) + ")");
}

}  // namespace detail

/// log f(ψ, θ; x) with parameter and support checks. `index` only labels errors.
inline double log_density(const SegmentFamily& family, const VecIn& psi, const VecIn& theta,
                          Observation x, std::size_t index = 0) {
  detail::check_parameters(family, psi, theta);
  detail::check_observation(family, x, index);
  return family.log_density(psi, theta, x);
}

/// Gradient of log f in packed (ψ, θ) order.
inline Vec grad_log_density(const SegmentFamily& family, const VecIn& psi, const VecIn& theta,
                            Observation x, std::size_t index = 0) {
  detail::check_parameters(family, psi, theta);
  detail::check_observation(family, x, index);
  Vec g(static_cast<Eigen::Index>(family.psi_dim() + family.theta_dim()));
  family.gradient(psi, theta, x, g);
  return g;
}

inline Mat hessian_log_density(const SegmentFamily& family, const VecIn& psi, const VecIn& theta,
                               Observation x, std::size_t index = 0) {
  detail::check_parameters(family, psi, theta);
  detail::check_observation(family, x, index);
  const auto dim = static_cast<Eigen::Index>(family.psi_dim() + family.theta_dim());
  Mat h(dim, dim);
  family.hessian(psi, theta, x, h);
  return h;
}

/// Σ_{i ∈ [begin, end)} log f(ψ, θ; x_i).
inline double segment_loglik(const SegmentFamily& family, const VecIn& psi, const VecIn& theta,
                             const Dataset& data, std::size_t begin, std::size_t end) {
  detail::check_parameters(family, psi, theta);
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    detail::check_observation(family, data.row(i), i);
    sum += family.log_density(psi, theta, data.row(i));
  }
  return sum;
}

/// Newton maximization of the segment log-likelihood over θ ∈ box, ψ fixed.
inline SegmentFit segment_mle_theta_newton(const SegmentFamily& family, const VecIn& psi,
                                           const Dataset& data, std::size_t begin, std::size_t end,
                                           const BlockBox& box, const NewtonOptions& options = {}) {
  if (begin >= end) throw ArgumentError("segment must be nonempty");
  for (std::size_t i = begin; i < end; ++i) detail::check_observation(family, data.row(i), i);
  const auto dp = static_cast<Eigen::Index>(family.psi_dim());
  const auto dt = static_cast<Eigen::Index>(family.theta_dim());
  Vec g(dp + dt);
  Mat h(dp + dt, dp + dt);
  auto objective = [&](const Vec& theta, Vec* grad, Mat* hess) {
    double value = 0.0;
    if (grad) grad->setZero();
    if (hess) hess->setZero();
    for (std::size_t i = begin; i < end; ++i) {
      const auto x = data.row(i);
      value += family.log_density(psi, theta, x);
      if (grad) {
        family.gradient(psi, theta, x, g);
        *grad += g.tail(dt);
      }
      if (hess) {
        family.hessian(psi, theta, x, h);
        *hess += h.bottomRightCorner(dt, dt);
      }
    }
    return value;
  };
  Vec start = box.clamp(family.initial_theta(psi, data, begin, end, box));
  auto result = maximize_box_newton(objective, std::move(start), box.lower, box.upper, options);
  return {std::move(result.x), result.value};
}

/// θ̂ maximizing Σ_{i ∈ [begin, end)} log f(ψ, θ; x_i) over the box: closed form through the
/// sufficient statistics when the family has one, Newton otherwise.
inline SegmentFit segment_mle_theta(const SegmentFamily& family, const VecIn& psi,
                                    const Dataset& data, std::size_t begin, std::size_t end,
                                    const BlockBox& box, const NewtonOptions& options = {}) {
  if (begin >= end || end > data.size()) throw ArgumentError("segment must be nonempty and inside the data");
  detail::check_parameters(family, psi, box.midpoint());
  if (family.statistic_dim() > 0) {
    std::vector<long double> stats(family.statistic_dim(), 0.0L);
    for (std::size_t i = begin; i < end; ++i) {
      detail::check_observation(family, data.row(i), i);
      family.add_statistics(data.row(i), stats);
    }
    if (auto fit = family.fit_from_statistics(psi, stats, end - begin, box)) return *std::move(fit);
  }
  return segment_mle_theta_newton(family, psi, data, begin, end, box, options);
}

inline SegmentFit segment_mle_theta(const SegmentFamily& family, const VecIn& psi,
                                    const Dataset& slice, const BlockBox& box) {
  return segment_mle_theta(family, psi, slice, 0, slice.size(), box);
}

/// `count` i.i.d. draws, deterministic in `seed`.
inline Dataset sample(const SegmentFamily& family, const VecIn& psi, const VecIn& theta,
                      std::size_t count, std::uint64_t seed) {
  detail::check_parameters(family, psi, theta);
  if (count == 0) throw ArgumentError("sample count must be at least 1");
  Engine rng = make_stream(seed, {});
  std::vector<double> out;
  out.reserve(count * family.observation_dim());
  family.sample(psi, theta, count, rng, out);
  return Dataset(std::move(out), family.observation_dim());
}

}  // namespace cpmle
