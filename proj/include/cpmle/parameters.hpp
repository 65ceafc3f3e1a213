#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpmle/family.hpp"

namespace cpmle {

/// Compact parameter space: one box for ψ and one per θ_j.
struct ParameterBox {
  BlockBox psi;
  std::vector<BlockBox> thetas;
};

/// User-supplied box blocks; missing blocks fall back to the families' data-driven defaults.
struct BoxOverrides {
  std::optional<BlockBox> psi;
  std::map<std::size_t, BlockBox> thetas;  // keyed by 0-based segment
};

/// φ = (ψ, θ_1, ..., θ_{k+1}).
struct ParameterState {
  Vec psi;
  std::vector<Vec> thetas;

  std::size_t packed_dim() const {
    auto d = static_cast<std::size_t>(psi.size());
    for (const auto& t : thetas) d += static_cast<std::size_t>(t.size());
    return d;
  }

  /// (ψ, θ_1, ..., θ_{k+1}) stacked into one vector.
  Vec packed() const {
    Vec out(static_cast<Eigen::Index>(packed_dim()));
    Eigen::Index at = 0;
    out.segment(at, psi.size()) = psi;
    at += psi.size();
    for (const auto& t : thetas) {
      out.segment(at, t.size()) = t;
      at += t.size();
    }
    return out;
  }

  friend bool operator==(const ParameterState& a, const ParameterState& b) {
    if (a.psi.size() != b.psi.size() || a.thetas.size() != b.thetas.size() || a.psi != b.psi) return false;
    for (std::size_t j = 0; j < a.thetas.size(); ++j)
      if (a.thetas[j].size() != b.thetas[j].size() || a.thetas[j] != b.thetas[j]) return false;
    return true;
  }
};

/// k change points and the ordered families f_1, ..., f_{k+1}. Families with psi_dim() > 0
/// share one ψ and must agree on its dimension and role; the others ignore it.
class ModelSpec {
 public:
  ModelSpec() = default;

  explicit ModelSpec(std::vector<FamilyPtr> families, BoxOverrides box = {})
      : families_(std::move(families)), box_(std::move(box)) {
    if (families_.empty()) throw ArgumentError("a model needs at least one segment family");
    obs_dim_ = families_.front() ? families_.front()->observation_dim() : 0;
    for (std::size_t j = 0; j < families_.size(); ++j) {
      const auto& f = families_[j];
      if (!f) throw ArgumentError("segment " + std::to_string(j + 1) + " has no family");
      if (f->observation_dim() != obs_dim_)
        throw ArgumentError("segment " + std::to_string(j + 1) + " family " + f->descriptor() +
                            " has observation dimension " + std::to_string(f->observation_dim()) +
                            ", expected " + std::to_string(obs_dim_));
      if (f->psi_dim() == 0) continue;
      if (common_dim_ == 0) {
        common_dim_ = f->psi_dim();
        psi_role_ = f->psi_role();
        psi_owner_ = j;
      } else if (f->psi_dim() != common_dim_ || f->psi_role() != psi_role_) {
        throw ArgumentError("segment " + std::to_string(j + 1) + " family " + f->descriptor() +
                            " declares common parameter '" + f->psi_role() + "' of dimension " +
                            std::to_string(f->psi_dim()) + ", but the model's is '" + psi_role_ +
                            "' of dimension " + std::to_string(common_dim_));
      }
    }
    if (box_.psi && static_cast<std::size_t>(box_.psi->size()) != common_dim_)
      throw ArgumentError("psi box has dimension " + std::to_string(box_.psi->size()) +
                          ", the model's common parameter has " + std::to_string(common_dim_));
    for (const auto& [j, b] : box_.thetas) {
      if (j >= families_.size()) throw ArgumentError("theta box given for segment " + std::to_string(j + 1) + " beyond k+1");
      if (static_cast<std::size_t>(b.size()) != families_[j]->theta_dim())
        throw ArgumentError("theta box for segment " + std::to_string(j + 1) + " has the wrong dimension");
    }
  }

  /// Same family for all k+1 segments.
  static ModelSpec homogeneous(FamilyPtr family, std::size_t k, BoxOverrides box = {}) {
    return ModelSpec(std::vector<FamilyPtr>(k + 1, std::move(family)), std::move(box));
  }

  std::size_t k() const { return families_.size() - 1; }
  std::size_t segments() const { return families_.size(); }
  const SegmentFamily& family(std::size_t j) const { return *families_.at(j); }
  const FamilyPtr& family_ptr(std::size_t j) const { return families_.at(j); }
  const std::vector<FamilyPtr>& families() const { return families_; }
  const BoxOverrides& box_overrides() const { return box_; }

  std::size_t common_dim() const { return common_dim_; }
  const std::string& psi_role() const { return psi_role_; }
  std::size_t observation_dim() const { return obs_dim_; }
  bool uses_psi(std::size_t j) const { return family(j).psi_dim() > 0; }
  /// First segment whose family carries ψ (meaningful only when common_dim() > 0).
  std::size_t psi_owner() const { return psi_owner_; }

  std::size_t theta_dim(std::size_t j) const { return family(j).theta_dim(); }
  std::size_t packed_dim() const {
    std::size_t d = common_dim_;
    for (const auto& f : families_) d += f->theta_dim();
    return d;
  }
  /// Offset of θ_j inside the packed (ψ, θ_1, ..., θ_{k+1}) vector.
  std::size_t theta_offset(std::size_t j) const {
    std::size_t at = common_dim_;
    for (std::size_t q = 0; q < j; ++q) at += families_[q]->theta_dim();
    return at;
  }

  /// ψ as seen by segment j's family: the common block, or empty.
  Vec psi_for(std::size_t j, const VecIn& psi) const { return uses_psi(j) ? Vec(psi) : Vec(); }

  ParameterBox resolve_box(const Dataset& data) const {
    ParameterBox box;
    if (common_dim_ > 0) box.psi = box_.psi ? *box_.psi : family(psi_owner_).default_psi_box(data);
    box.thetas.reserve(families_.size());
    for (std::size_t j = 0; j < families_.size(); ++j) {
      auto it = box_.thetas.find(j);
      box.thetas.push_back(it != box_.thetas.end() ? it->second : family(j).default_theta_box(data));
    }
    return box;
  }

  ParameterState unpack(const VecIn& packed) const {
    if (static_cast<std::size_t>(packed.size()) != packed_dim())
      throw ArgumentError("packed parameter has dimension " + std::to_string(packed.size()) +
                          ", expected " + std::to_string(packed_dim()));
    ParameterState s;
    s.psi = packed.head(static_cast<Eigen::Index>(common_dim_));
    for (std::size_t j = 0; j < families_.size(); ++j)
      s.thetas.push_back(packed.segment(static_cast<Eigen::Index>(theta_offset(j)),
                                        static_cast<Eigen::Index>(theta_dim(j))));
    return s;
  }

  /// Dimensions and natural-domain checks on φ; with a box also containment.
  void validate(const ParameterState& params, const ParameterBox* box = nullptr) const {
    if (static_cast<std::size_t>(params.psi.size()) != common_dim_)
      throw ParameterError("psi has dimension " + std::to_string(params.psi.size()) + ", expected " +
                           std::to_string(common_dim_));
    if (params.thetas.size() != families_.size())
      throw ParameterError("expected " + std::to_string(families_.size()) + " theta blocks, got " +
                           std::to_string(params.thetas.size()));
    for (std::size_t j = 0; j < families_.size(); ++j) {
      try {
        detail::check_parameters(family(j), psi_for(j, params.psi), params.thetas[j]);
      } catch (const ParameterError& e) {
        throw ParameterError(std::string(e.what()) + " (segment " + std::to_string(j + 1) + ")");
      }
      if (box && !box->thetas[j].contains(params.thetas[j]))
        throw ParameterError("theta for segment " + std::to_string(j + 1) + " lies outside its box");
    }
    if (box && common_dim_ > 0 && !box->psi.contains(params.psi))
      throw ParameterError("psi lies outside its box");
  }

 private:
  std::vector<FamilyPtr> families_;
  BoxOverrides box_;
  std::size_t common_dim_ = 0;
  std::string psi_role_;
  std::size_t obs_dim_ = 0;
  std::size_t psi_owner_ = 0;
};

}  // namespace cpmle
