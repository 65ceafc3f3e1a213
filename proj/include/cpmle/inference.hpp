#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>

#include "cpmle/likelihood.hpp"

namespace cpmle {

/// Information matrix in packed (ψ, θ_1, ..., θ_{k+1}) coordinates with block accessors.
struct InfoMatrix {
  Mat full;
  std::size_t psi_dim = 0;
  std::vector<std::size_t> theta_offsets;
  std::vector<std::size_t> theta_dims;

  Eigen::Index dim() const { return full.rows(); }
  Mat psi_block() const {
    const auto d = static_cast<Eigen::Index>(psi_dim);
    return full.topLeftCorner(d, d);
  }
  Mat psi_theta_block(std::size_t j) const {
    return full.block(0, static_cast<Eigen::Index>(theta_offsets[j]), static_cast<Eigen::Index>(psi_dim),
                      static_cast<Eigen::Index>(theta_dims[j]));
  }
  Mat theta_block(std::size_t j, std::size_t q) const {
    return full.block(static_cast<Eigen::Index>(theta_offsets[j]), static_cast<Eigen::Index>(theta_offsets[q]),
                      static_cast<Eigen::Index>(theta_dims[j]), static_cast<Eigen::Index>(theta_dims[q]));
  }
  Mat theta_block(std::size_t j) const { return theta_block(j, j); }
};

namespace detail {

/// Bottom-up pairwise summation: adjacent terms are added first, then adjacent partial sums,
/// and so on. Kept as a stack of completed power-of-two subtrees.
class PairwiseAccumulator {
 public:
  explicit PairwiseAccumulator(Eigen::Index rows, Eigen::Index cols) : rows_(rows), cols_(cols) {}

  void add(Mat term) {
    std::size_t size = 1;
    while (!stack_.empty() && stack_.back().second == size) {
      term = stack_.back().first + term;
      stack_.pop_back();
      size *= 2;
    }
    stack_.emplace_back(std::move(term), size);
  }

  Mat total() const {
    if (stack_.empty()) return Mat::Zero(rows_, cols_);
    Mat acc = stack_.back().first;
    for (std::size_t q = stack_.size() - 1; q-- > 0;) acc = stack_[q].first + acc;
    return acc;
  }

 private:
  Eigen::Index rows_, cols_;
  std::vector<std::pair<Mat, std::size_t>> stack_;
};

inline InfoMatrix empty_info(const ModelSpec& spec) {
  InfoMatrix info;
  info.psi_dim = spec.common_dim();
  for (std::size_t j = 0; j < spec.segments(); ++j) {
    info.theta_offsets.push_back(spec.theta_offset(j));
    info.theta_dims.push_back(spec.theta_dim(j));
  }
  const auto d = static_cast<Eigen::Index>(spec.packed_dim());
  info.full = Mat::Zero(d, d);
  return info;
}

/// Packed score of observation t in segment j; θ blocks of other segments are zero.
inline Vec packed_score(const ModelSpec& spec, std::size_t j, const Vec& psi_j, const Vec& theta_j, Observation x,
                        std::size_t t) {
  const auto& f = spec.family(j);
  const auto dp = static_cast<Eigen::Index>(f.psi_dim());
  const auto dt = static_cast<Eigen::Index>(f.theta_dim());
  Vec g(dp + dt);
  f.gradient(psi_j, theta_j, x, g);
  if (!g.allFinite())
    throw NumericError("score is not finite at observation " + std::to_string(t + 1) + " (segment " +
                       std::to_string(j + 1) + ")");
  Vec packed = Vec::Zero(static_cast<Eigen::Index>(spec.packed_dim()));
  if (dp > 0) packed.head(dp) = g.head(dp);
  packed.segment(static_cast<Eigen::Index>(spec.theta_offset(j)), dt) = g.tail(dt);
  return packed;
}

}  // namespace detail

/// Outer-product plug-in information
///   î = Σ_j Σ_{i in segment j} s_ji s_jiᵀ,  s_ji = ∂ log f_j(ψ̂, θ̂_j; x_i)/∂(ψ, θ_j),
/// over the fitted segments. Scores are taken on the log scale (f_ψ/f = ∂ log f/∂ψ).
inline InfoMatrix plugin_info(const ModelSpec& spec, const Dataset& data, const ChangePointConfig& cps,
                              const ParameterState& params) {
  if (cps.n() != data.size() || cps.k() != spec.k()) throw ArgumentError("configuration does not match data/model");
  spec.validate(params);
  InfoMatrix info = detail::empty_info(spec);
  detail::PairwiseAccumulator acc(info.dim(), info.dim());
  for (std::size_t j = 0; j < cps.segments(); ++j) {
    const Vec psi = spec.psi_for(j, params.psi);
    for (std::size_t t = cps.begin(j); t < cps.end(j); ++t) {
      detail::check_observation(spec.family(j), data.row(t), t);
      const Vec s = detail::packed_score(spec, j, psi, params.thetas[j], data.row(t), t);
      acc.add(s * s.transpose());
    }
  }
  info.full = acc.total();
  return info;
}

/// Negative Hessian of ℓ at the estimate, for comparison with the outer-product form.
inline InfoMatrix observed_info(const ModelSpec& spec, const Dataset& data, const ChangePointConfig& cps,
                                const ParameterState& params) {
  if (cps.n() != data.size() || cps.k() != spec.k()) throw ArgumentError("configuration does not match data/model");
  spec.validate(params);
  InfoMatrix info = detail::empty_info(spec);
  const auto dc = static_cast<Eigen::Index>(spec.common_dim());
  for (std::size_t j = 0; j < cps.segments(); ++j) {
    const auto& f = spec.family(j);
    const Vec psi = spec.psi_for(j, params.psi);
    const auto dp = static_cast<Eigen::Index>(f.psi_dim());
    const auto dt = static_cast<Eigen::Index>(f.theta_dim());
    const auto off = static_cast<Eigen::Index>(spec.theta_offset(j));
    Mat h(dp + dt, dp + dt);
    for (std::size_t t = cps.begin(j); t < cps.end(j); ++t) {
      detail::check_observation(f, data.row(t), t);
      f.hessian(psi, params.thetas[j], data.row(t), h);
      if (dp > 0) {
        info.full.topLeftCorner(dc, dc) -= h.topLeftCorner(dp, dp);
        info.full.block(0, off, dc, dt) -= h.topRightCorner(dp, dt);
        info.full.block(off, 0, dt, dc) -= h.bottomLeftCorner(dt, dp);
      }
      info.full.block(off, off, dt, dt) -= h.bottomRightCorner(dt, dt);
    }
  }
  return info;
}

struct InverseInfo {
  Mat covariance;
  double condition_number = 0.0;
  bool jittered = false;
};

/// î⁻¹ by Cholesky, retried once with a 1e-10 diagonal jitter.
inline InverseInfo invert_info(const InfoMatrix& info) {
  InverseInfo r;
  const Eigen::Index d = info.dim();
  if (d == 0) return r;
  Eigen::SelfAdjointEigenSolver<Mat> eig(info.full, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  r.condition_number = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();

  Eigen::LLT<Mat> llt(info.full);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-10 * std::max(1.0, info.full.diagonal().cwiseAbs().maxCoeff());
    llt.compute(info.full + jitter * Mat::Identity(d, d));
    r.jittered = true;
    if (llt.info() != Eigen::Success)
      throw InferenceError("information matrix is singular (condition number " + std::to_string(r.condition_number) +
                           "); check the boundary flags and neighbor-distinctness diagnostics");
  }
  r.covariance = llt.solve(Mat::Identity(d, d));
  return r;
}

struct WaldInterval {
  double estimate = 0.0;
  double std_error = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct WaldResult {
  double level = 0.0;
  double z = 0.0;
  double condition_number = 0.0;
  bool jittered = false;
  std::vector<WaldInterval> intervals;
};

/// z with P(|Z| ≤ z) = level.
inline double normal_critical_value(double level) {
  if (!(level > 0.0 && level < 1.0)) throw ArgumentError("confidence level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + level / 2.0);
}

/// φ̂_c ± z·sqrt([î⁻¹]_cc) for every packed coordinate c.
inline WaldResult wald_intervals(const VecIn& estimate, const InfoMatrix& info, double level) {
  if (estimate.size() != info.dim()) throw ArgumentError("estimate and information matrix dimensions differ");
  WaldResult w;
  w.level = level;
  w.z = normal_critical_value(level);
  const auto inv = invert_info(info);
  w.condition_number = inv.condition_number;
  w.jittered = inv.jittered;
  for (Eigen::Index c = 0; c < estimate.size(); ++c) {
    const double var = inv.covariance(c, c);
    if (!(var > 0.0)) throw InferenceError("nonpositive variance for coordinate " + std::to_string(c + 1));
    const double se = std::sqrt(var);
    w.intervals.push_back({estimate[c], se, estimate[c] - w.z * se, estimate[c] + w.z * se});
  }
  return w;
}

}  // namespace cpmle
