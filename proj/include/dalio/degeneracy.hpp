#pragma once

#include <array>
#include <span>
#include <string_view>

#include <Eigen/Core>

#include "dalio/manifold.hpp"
#include "dalio/registration.hpp"

namespace dalio {

enum class LocalizabilityCategory { None, Partial, Full };

std::string_view to_string(LocalizabilityCategory c);

/// How directions categorized Partial enter the constraint system.
enum class PartialMode { Constrain, Free };

/// Normalized strengths are per-pair averages, so thresholds do not depend on scan size.
struct LocalizabilityThresholds {
  double full = 0.08;
  double partial = 0.02;
  double contribution_floor = 0.1;  // kappa, subtracted from each |projection|
  bool normalized = true;
  PartialMode partial_mode = PartialMode::Constrain;

  void validate() const;
};

/// Eigen-decomposition of the rotation and translation diagonal blocks of the registration Hessian.
/// Columns are unit eigenvectors with eigenvalues in descending order.
struct EigenBlocks {
  Mat3 translation_vectors = Mat3::Identity();
  Vec3 translation_values = Vec3::Zero();
  Mat3 rotation_vectors = Mat3::Identity();
  Vec3 rotation_values = Vec3::Zero();
};

/// Six per-direction quantities ordered [r1 r2 r3 t1 t2 t3], matching the [dr; dt] pose increment.
using DirectionStrengths = Vec6;
using Categories = std::array<LocalizabilityCategory, 6>;

struct ConstraintSystem {
  Eigen::Matrix<double, Eigen::Dynamic, 6> matrix;  // C, one unit row per constrained direction
  Eigen::VectorXd values;                           // d
  int rotation_rows = 0;
  int translation_rows = 0;

  bool empty() const { return matrix.rows() == 0; }
};

struct LocalizabilityReport {
  EigenBlocks eigen;
  DirectionStrengths strengths = DirectionStrengths::Zero();
  Categories categories{};
  ConstraintSystem constraints;
  std::size_t pair_count = 0;

  bool degenerate() const;
  int full_count() const;
};

/// Eigenvector sign is fixed so the largest-magnitude component is positive.
EigenBlocks eigen_blocks(const Mat6& hessian);

/// Translation strength along v: sum_i max(|u_i . v| - kappa, 0). Rotation strength along v:
/// sum_i max(|(p_i x u_i) . v| / max(|p_i x u_i|, eps) - kappa, 0).
DirectionStrengths direction_strengths(std::span<const InfoPair> pairs, const EigenBlocks& eigen, double kappa,
                                       double eps = 1e-9);

/// Closed lower bounds: s >= full -> Full, s >= partial -> Partial, otherwise None.
Categories categorize(const DirectionStrengths& strengths, const LocalizabilityThresholds& thresholds);

/// Rows are emitted for None directions, and for Partial ones under PartialMode::Constrain.
/// Rotation rows use columns 0-2 with d = v . anchor_rotation, translation rows columns 3-5 with
/// d = v . anchor_translation.
ConstraintSystem build_constraints(const Categories& categories, const EigenBlocks& eigen,
                                   const Vec3& anchor_rotation, const Vec3& anchor_translation,
                                   PartialMode mode = PartialMode::Constrain);

/// Hessian, eigen-analysis, strengths, categories and zero-anchored constraints, all in the body frame.
LocalizabilityReport analyze_localizability(std::span<const InfoPair> pairs, const LocalizabilityThresholds& thresholds);

/// Report used when no correspondence survives: every direction None, constraints empty.
LocalizabilityReport total_degeneration_report();

}  // namespace dalio
