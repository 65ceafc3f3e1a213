#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpmle/error.hpp"

namespace cpmle {

using Observation = std::span<const double>;

/// Ordered n×p observations, stored row-major. Row i is observation i+1.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<double> values, std::size_t dim) : values_(std::move(values)), dim_(dim) {
    if (dim_ == 0) throw ArgumentError("dataset dimension must be at least 1");
    if (values_.size() % dim_ != 0)
      throw ArgumentError("dataset value count " + std::to_string(values_.size()) +
                          " is not a multiple of dimension " + std::to_string(dim_));
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i]))
        throw ArgumentError("non-finite value at observation " + std::to_string(i / dim_ + 1) +
                            ", column " + std::to_string(i % dim_ + 1));
    }
  }

  static Dataset univariate(std::vector<double> values) { return Dataset(std::move(values), 1); }

  std::size_t size() const { return dim_ == 0 ? 0 : values_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return values_.empty(); }

  Observation row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  double operator()(std::size_t i, std::size_t c) const { return values_[i * dim_ + c]; }
  std::span<const double> values() const { return values_; }

  /// Rows [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw ArgumentError("slice out of range");
    return Dataset(std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(begin * dim_),
                                       values_.begin() + static_cast<std::ptrdiff_t>(end * dim_)),
                   dim_);
  }

  Dataset reversed() const {
    std::vector<double> out;
    out.reserve(values_.size());
    for (std::size_t i = size(); i-- > 0;) {
      auto r = row(i);
      out.insert(out.end(), r.begin(), r.end());
    }
    return Dataset(std::move(out), dim_);
  }

  /// Every observation repeated twice in place: x1 x1 x2 x2 ...
  Dataset duplicated() const {
    std::vector<double> out;
    out.reserve(2 * values_.size());
    for (std::size_t i = 0; i < size(); ++i) {
      auto r = row(i);
      out.insert(out.end(), r.begin(), r.end());
      out.insert(out.end(), r.begin(), r.end());
    }
    return Dataset(std::move(out), dim_);
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::vector<double> values_;
  std::size_t dim_ = 1;
};

/// Interior boundaries 0 < n_1 < ... < n_k < n. Segment j (0-based) covers rows
/// [begin(j), end(j)).
class ChangePointConfig {
 public:
  ChangePointConfig() = default;

  ChangePointConfig(std::vector<std::size_t> boundaries, std::size_t n)
      : boundaries_(std::move(boundaries)), n_(n) {
    std::size_t prev = 0;
    for (std::size_t j = 0; j < boundaries_.size(); ++j) {
      if (boundaries_[j] <= prev || boundaries_[j] >= n_)
        throw ArgumentError("change points must satisfy 0 < n_1 < ... < n_k < n; got n_" +
                            std::to_string(j + 1) + " = " + std::to_string(boundaries_[j]) +
                            " with n = " + std::to_string(n_));
      prev = boundaries_[j];
    }
    if (n_ == 0) throw ArgumentError("change-point configuration needs n >= 1");
  }

  /// n_j = floor(n * lambda_j).
  static ChangePointConfig from_fractions(const std::vector<double>& fractions, std::size_t n) {
    std::vector<std::size_t> b;
    b.reserve(fractions.size());
    for (double f : fractions) {
      if (!(f > 0.0 && f < 1.0)) throw ArgumentError("change-point fractions must lie in (0, 1)");
      b.push_back(static_cast<std::size_t>(std::floor(static_cast<double>(n) * f)));
    }
    return ChangePointConfig(std::move(b), n);
  }

  const std::vector<std::size_t>& boundaries() const { return boundaries_; }
  std::size_t n() const { return n_; }
  std::size_t k() const { return boundaries_.size(); }
  std::size_t segments() const { return boundaries_.size() + 1; }

  std::size_t begin(std::size_t j) const { return j == 0 ? 0 : boundaries_[j - 1]; }
  std::size_t end(std::size_t j) const { return j == boundaries_.size() ? n_ : boundaries_[j]; }
  std::size_t length(std::size_t j) const { return end(j) - begin(j); }

  std::vector<double> fractions() const {
    std::vector<double> f;
    f.reserve(boundaries_.size());
    for (auto b : boundaries_) f.push_back(static_cast<double>(b) / static_cast<double>(n_));
    return f;
  }

  /// Segment index owning row i.
  std::size_t segment_of(std::size_t i) const {
    std::size_t j = 0;
    while (j < boundaries_.size() && i >= boundaries_[j]) ++j;
    return j;
  }

  friend bool operator==(const ChangePointConfig&, const ChangePointConfig&) = default;

 private:
  std::vector<std::size_t> boundaries_;
  std::size_t n_ = 1;
};

/// max_j |n̂_j − n⁰_j| = n‖λ̂ − λ⁰‖∞.
inline std::size_t max_boundary_error(const ChangePointConfig& a, const ChangePointConfig& b) {
  if (a.k() != b.k()) throw ArgumentError("configurations have different numbers of change points");
  std::size_t worst = 0;
  for (std::size_t j = 0; j < a.k(); ++j) {
    auto x = a.boundaries()[j], y = b.boundaries()[j];
    worst = std::max(worst, x > y ? x - y : y - x);
  }
  return worst;
}

inline double sup_norm_fraction_error(const ChangePointConfig& a, const ChangePointConfig& b) {
  if (a.n() != b.n()) throw ArgumentError("configurations have different n");
  return static_cast<double>(max_boundary_error(a, b)) / static_cast<double>(a.n());
}

}  // namespace cpmle
