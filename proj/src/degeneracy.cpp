#include "dalio/degeneracy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace dalio {

std::string_view to_string(LocalizabilityCategory c) {
  switch (c) {
    case LocalizabilityCategory::None: return "none";
    case LocalizabilityCategory::Partial: return "partial";
    case LocalizabilityCategory::Full: return "full";
  }
  return "none";
}

void LocalizabilityThresholds::validate() const {
  if (!(full > partial && partial > 0.0)) throw std::invalid_argument("thresholds must satisfy full > partial > 0");
  if (!(contribution_floor >= 0.0 && contribution_floor < 1.0)) {
    throw std::invalid_argument("contribution floor must lie in [0, 1)");
  }
}

bool LocalizabilityReport::degenerate() const { return full_count() < 6; }

int LocalizabilityReport::full_count() const {
  return static_cast<int>(std::count(categories.begin(), categories.end(), LocalizabilityCategory::Full));
}

namespace {

void sorted_eigen(const Mat3& block, Mat3& vectors, Vec3& values) {
  Eigen::SelfAdjointEigenSolver<Mat3> eig(0.5 * (block + block.transpose()));
  for (int i = 0; i < 3; ++i) {
    values(i) = eig.eigenvalues()(2 - i);
    Vec3 v = eig.eigenvectors().col(2 - i).normalized();
    int big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v(big) < 0.0) v = -v;
    vectors.col(i) = v;
  }
}

}  // namespace

EigenBlocks eigen_blocks(const Mat6& hessian) {
  EigenBlocks out;
  sorted_eigen(hessian.block<3, 3>(0, 0), out.rotation_vectors, out.rotation_values);
  sorted_eigen(hessian.block<3, 3>(3, 3), out.translation_vectors, out.translation_values);
  return out;
}

DirectionStrengths direction_strengths(std::span<const InfoPair> pairs, const EigenBlocks& eigen, double kappa,
                                       double eps) {
  DirectionStrengths s = DirectionStrengths::Zero();
  for (const InfoPair& p : pairs) {
    const Vec3 m = p.point.cross(p.normal);
    const double m_norm = std::max(m.norm(), eps);
    for (int j = 0; j < 3; ++j) {
      s(j) += std::max(std::abs(m.dot(eigen.rotation_vectors.col(j))) / m_norm - kappa, 0.0);
      s(3 + j) += std::max(std::abs(p.normal.dot(eigen.translation_vectors.col(j))) - kappa, 0.0);
    }
  }
  return s;
}

Categories categorize(const DirectionStrengths& strengths, const LocalizabilityThresholds& thresholds) {
  Categories out{};
  for (int i = 0; i < 6; ++i) {
    const double s = strengths(i);
    out[static_cast<std::size_t>(i)] = s >= thresholds.full      ? LocalizabilityCategory::Full
                                       : s >= thresholds.partial ? LocalizabilityCategory::Partial
                                                                 : LocalizabilityCategory::None;
  }
  return out;
}

ConstraintSystem build_constraints(const Categories& categories, const EigenBlocks& eigen, const Vec3& anchor_rotation,
                                   const Vec3& anchor_translation, PartialMode mode) {
  auto constrained = [&](LocalizabilityCategory c) {
    return c == LocalizabilityCategory::None || (c == LocalizabilityCategory::Partial && mode == PartialMode::Constrain);
  };
  ConstraintSystem cs;
  for (int i = 0; i < 3; ++i) cs.rotation_rows += constrained(categories[static_cast<std::size_t>(i)]) ? 1 : 0;
  for (int i = 0; i < 3; ++i) cs.translation_rows += constrained(categories[static_cast<std::size_t>(3 + i)]) ? 1 : 0;
  const int rows = cs.rotation_rows + cs.translation_rows;
  cs.matrix = Eigen::Matrix<double, Eigen::Dynamic, 6>::Zero(rows, 6);
  cs.values = Eigen::VectorXd::Zero(rows);
  int r = 0;
  for (int i = 0; i < 3; ++i) {
    if (!constrained(categories[static_cast<std::size_t>(i)])) continue;
    const Vec3 v = eigen.rotation_vectors.col(i);
    cs.matrix.block<1, 3>(r, 0) = v.transpose();
    cs.values(r) = v.dot(anchor_rotation);
    ++r;
  }
  for (int i = 0; i < 3; ++i) {
    if (!constrained(categories[static_cast<std::size_t>(3 + i)])) continue;
    const Vec3 v = eigen.translation_vectors.col(i);
    cs.matrix.block<1, 3>(r, 3) = v.transpose();
    cs.values(r) = v.dot(anchor_translation);
    ++r;
  }
  return cs;
}

LocalizabilityReport analyze_localizability(std::span<const InfoPair> pairs, const LocalizabilityThresholds& thresholds) {
  if (pairs.empty()) return total_degeneration_report();
  LocalizabilityReport rep;
  rep.pair_count = pairs.size();
  rep.eigen = eigen_blocks(assemble_hessian(pairs));
  rep.strengths = direction_strengths(pairs, rep.eigen, thresholds.contribution_floor);
  if (thresholds.normalized) rep.strengths /= static_cast<double>(pairs.size());
  rep.categories = categorize(rep.strengths, thresholds);
  rep.constraints = build_constraints(rep.categories, rep.eigen, Vec3::Zero(), Vec3::Zero(), thresholds.partial_mode);
  return rep;
}

LocalizabilityReport total_degeneration_report() {
  LocalizabilityReport rep;
  rep.categories.fill(LocalizabilityCategory::None);
  rep.constraints.matrix.resize(0, 6);
  rep.constraints.values.resize(0);
  return rep;
}

}  // namespace dalio
