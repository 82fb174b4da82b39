#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <unordered_map>
#include <vector>

#include "dalio/manifold.hpp"
#include "dalio/scan.hpp"

namespace dalio {

/// Static point store with voxel-hash neighbor search. Concurrent const queries are safe;
/// add() requires exclusive access.
class PointMap {
 public:
  explicit PointMap(double cell_size = 1.0);

  void add(std::span<const Vec3> points);
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const std::vector<Vec3>& points() const { return points_; }
  double cell_size() const { return cell_; }

  /// Up to k nearest map points no farther than `radius` (<= cell size), nearest first.
  std::vector<Vec3> nearest(const Vec3& query, int k, double radius) const;

  /// Reference implementation that scans every point.
  std::vector<Vec3> nearest_brute_force(const Vec3& query, int k, double radius) const;

  /// ASCII PLY with one "x y z" vertex per line.
  void write_ply(std::ostream& out) const;

 private:
  std::int64_t key(const Vec3& p) const;
  std::int64_t key(std::int64_t ix, std::int64_t iy, std::int64_t iz) const;

  double cell_;
  std::vector<Vec3> points_;
  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> cells_;
};

struct PlaneFit {
  Vec3 normal = Vec3::UnitZ();
  Vec3 point = Vec3::Zero();
  double rms = 0.0;
  bool valid = false;
};

/// Normal is the smallest-eigenvalue eigenvector of the neighbor scatter, point is the centroid.
/// Fewer than `min_points` neighbors or a collinear neighborhood gives an invalid fit.
PlaneFit fit_plane(std::span<const Vec3> neighbors, std::size_t min_points = 5);

struct AssociationParams {
  int neighbors = 5;
  double max_plane_rms = 0.1;      // m
  double max_distance = 1.0;       // m, gates both neighbor radius and point-to-plane distance
};

struct PlaneCorrespondence {
  Vec3 body_point = Vec3::Zero();   // IMU frame
  Vec3 global_point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();      // unit, global frame
  Vec3 plane_point = Vec3::Zero();  // in-plane point q
  bool valid = false;
};

/// Information pair in the body frame.
struct InfoPair {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

/// One correspondence per scan point, in scan order. An empty map gives an empty list.
std::vector<PlaneCorrespondence> associate(const Scan& scan, const Pose& world_from_imu, const PointMap& map,
                                           const Pose& imu_from_lidar, const AssociationParams& params);
std::vector<PlaneCorrespondence> associate_serial(const Scan& scan, const Pose& world_from_imu,
                                                  const PointMap& map, const Pose& imu_from_lidar,
                                                  const AssociationParams& params);

/// Signed point-to-plane distance u^T (T p - q).
double residual(const Pose& world_from_imu, const PlaneCorrespondence& corr);

/// [d r / d dr | d r / d dt] for the right-perturbed rotation and global translation:
/// rotation block (p x R^T u), translation block u.
Eigen::Matrix<double, 1, 6> residual_jacobian(const Pose& world_from_imu, const PlaneCorrespondence& corr);

/// Body-frame (point, normal) pairs of the valid correspondences under `world_from_imu`.
std::vector<InfoPair> info_pairs(const std::vector<PlaneCorrespondence>& corrs, const Pose& world_from_imu);

/// Sum of a a^T with a = [p x u; u]; rotation block first.
Mat6 assemble_hessian(std::span<const InfoPair> pairs);
Mat6 assemble_hessian_serial(std::span<const InfoPair> pairs);

/// Gauss-Newton system sum J^T J, sum J^T r over valid correspondences at `world_from_imu`.
struct NormalEquations {
  Mat6 hessian = Mat6::Zero();
  Vec6 gradient = Vec6::Zero();
  double cost = 0.0;  // sum r^2
  std::size_t count = 0;
};

NormalEquations normal_equations(std::span<const PlaneCorrespondence> corrs, const Pose& world_from_imu);
NormalEquations normal_equations_serial(std::span<const PlaneCorrespondence> corrs, const Pose& world_from_imu);

}  // namespace dalio
