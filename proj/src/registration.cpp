#include <algorithm>
#include <cmath>

#include <omp.h>

#include <Eigen/Eigenvalues>

#include "dalio/registration.hpp"

namespace dalio {

PlaneFit fit_plane(std::span<const Vec3> neighbors, std::size_t min_points) {
  PlaneFit fit;
  if (neighbors.size() < std::max<std::size_t>(min_points, 3)) return fit;
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : neighbors) centroid += p;
  centroid /= static_cast<double>(neighbors.size());
  Mat3 scatter = Mat3::Zero();
  for (const Vec3& p : neighbors) {
    const Vec3 d = p - centroid;
    scatter += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 ev = eig.eigenvalues();  // ascending
  // Collinear or coincident neighbors leave the in-plane spread rank deficient.
  if (!(ev(1) > 1e-10 * std::max(ev(2), 1e-300)) || ev(2) <= 0.0) return fit;
  Vec3 n = eig.eigenvectors().col(0).normalized();
  int big = 0;
  n.cwiseAbs().maxCoeff(&big);
  if (n(big) < 0.0) n = -n;
  fit.normal = n;
  fit.point = centroid;
  fit.rms = std::sqrt(std::max(ev(0), 0.0) / static_cast<double>(neighbors.size()));
  fit.valid = true;
  return fit;
}

namespace {

PlaneCorrespondence associate_point(const ScanPoint& sp, const Pose& world_from_imu, const PointMap& map,
                                    const Pose& imu_from_lidar, const AssociationParams& params) {
  PlaneCorrespondence c;
  c.body_point = imu_from_lidar * sp.position;
  c.global_point = world_from_imu * c.body_point;
  const std::vector<Vec3> nn = map.nearest(c.global_point, params.neighbors, params.max_distance);
  if (nn.size() < static_cast<std::size_t>(params.neighbors)) return c;
  const PlaneFit fit = fit_plane(nn, static_cast<std::size_t>(params.neighbors));
  if (!fit.valid || fit.rms > params.max_plane_rms) return c;
  c.normal = fit.normal;
  c.plane_point = fit.point;
  c.valid = std::abs(fit.normal.dot(c.global_point - fit.point)) <= params.max_distance;
  return c;
}

}  // namespace

std::vector<PlaneCorrespondence> associate_serial(const Scan& scan, const Pose& world_from_imu, const PointMap& map,
                                                  const Pose& imu_from_lidar, const AssociationParams& params) {
  std::vector<PlaneCorrespondence> out;
  if (map.empty()) return out;
  out.reserve(scan.points.size());
  for (const ScanPoint& sp : scan.points) {
    out.push_back(associate_point(sp, world_from_imu, map, imu_from_lidar, params));
  }
  return out;
}

std::vector<PlaneCorrespondence> associate(const Scan& scan, const Pose& world_from_imu, const PointMap& map,
                                           const Pose& imu_from_lidar, const AssociationParams& params) {
  std::vector<PlaneCorrespondence> out;
  if (map.empty()) return out;
  out.resize(scan.points.size());
  const auto n = static_cast<std::ptrdiff_t>(scan.points.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] =
        associate_point(scan.points[static_cast<std::size_t>(i)], world_from_imu, map, imu_from_lidar, params);
  }
  return out;
}

double residual(const Pose& world_from_imu, const PlaneCorrespondence& corr) {
  return corr.normal.dot(world_from_imu * corr.body_point - corr.plane_point);
}

Eigen::Matrix<double, 1, 6> residual_jacobian(const Pose& world_from_imu, const PlaneCorrespondence& corr) {
  const Vec3 body_normal = world_from_imu.rotation.inverse() * corr.normal;
  Eigen::Matrix<double, 1, 6> row;
  row.head<3>() = corr.body_point.cross(body_normal).transpose();
  row.tail<3>() = corr.normal.transpose();
  return row;
}

std::vector<InfoPair> info_pairs(const std::vector<PlaneCorrespondence>& corrs, const Pose& world_from_imu) {
  std::vector<InfoPair> out;
  out.reserve(corrs.size());
  const Rotation to_body = world_from_imu.rotation.inverse();
  for (const PlaneCorrespondence& c : corrs) {
    if (c.valid) out.push_back({c.body_point, (to_body * c.normal).normalized()});
  }
  return out;
}

namespace {

inline Vec6 hessian_row(const InfoPair& p) {
  Vec6 a;
  a.head<3>() = p.point.cross(p.normal);
  a.tail<3>() = p.normal;
  return a;
}

}  // namespace

Mat6 assemble_hessian_serial(std::span<const InfoPair> pairs) {
  Mat6 h = Mat6::Zero();
  for (const InfoPair& p : pairs) {
    const Vec6 a = hessian_row(p);
    h.noalias() += a * a.transpose();
  }
  return h;
}

Mat6 assemble_hessian(std::span<const InfoPair> pairs) {
  const int threads = omp_get_max_threads();
  if (threads <= 1 || pairs.size() < 256) return assemble_hessian_serial(pairs);
  std::vector<Mat6> partial(static_cast<std::size_t>(threads), Mat6::Zero());
  const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel num_threads(threads)
  {
    Mat6& local = partial[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const Vec6 a = hessian_row(pairs[static_cast<std::size_t>(i)]);
      local.noalias() += a * a.transpose();
    }
  }
  Mat6 h = Mat6::Zero();
  for (const Mat6& m : partial) h += m;
  return 0.5 * (h + h.transpose());
}

NormalEquations normal_equations_serial(std::span<const PlaneCorrespondence> corrs, const Pose& world_from_imu) {
  NormalEquations ne;
  for (const PlaneCorrespondence& c : corrs) {
    if (!c.valid) continue;
    const Eigen::Matrix<double, 1, 6> j = residual_jacobian(world_from_imu, c);
    const double r = residual(world_from_imu, c);
    ne.hessian.noalias() += j.transpose() * j;
    ne.gradient.noalias() += j.transpose() * r;
    ne.cost += r * r;
    ++ne.count;
  }
  return ne;
}

NormalEquations normal_equations(std::span<const PlaneCorrespondence> corrs, const Pose& world_from_imu) {
  const int threads = omp_get_max_threads();
  if (threads <= 1 || corrs.size() < 256) return normal_equations_serial(corrs, world_from_imu);
  std::vector<NormalEquations> partial(static_cast<std::size_t>(threads));
  const auto n = static_cast<std::ptrdiff_t>(corrs.size());
#pragma omp parallel num_threads(threads)
  {
    NormalEquations& local = partial[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const PlaneCorrespondence& c = corrs[static_cast<std::size_t>(i)];
      if (!c.valid) continue;
      const Eigen::Matrix<double, 1, 6> j = residual_jacobian(world_from_imu, c);
      const double r = residual(world_from_imu, c);
      local.hessian.noalias() += j.transpose() * j;
      local.gradient.noalias() += j.transpose() * r;
      local.cost += r * r;
      ++local.count;
    }
  }
  NormalEquations ne;
  for (const NormalEquations& p : partial) {
    ne.hessian += p.hessian;
    ne.gradient += p.gradient;
    ne.cost += p.cost;
    ne.count += p.count;
  }
  return ne;
}

}  // namespace dalio
