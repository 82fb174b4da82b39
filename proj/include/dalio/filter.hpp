#pragma once

#include <cstddef>

#include "dalio/degeneracy.hpp"
#include "dalio/inertial.hpp"
#include "dalio/manifold.hpp"
#include "dalio/registration.hpp"

namespace dalio {

/// Nominal state plus error-state covariance at `timestamp`.
struct Belief {
  State state;
  Cov18 covariance = Cov18::Identity() * 1e-6;
  double timestamp = 0.0;
};

/// Optimized pose from the smoother, used as a direct observation of the pose error.
struct BackendPoseMeasurement {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  Mat3 rotation_covariance = Mat3::Identity() * 1e-4;
  Mat3 translation_covariance = Mat3::Identity() * 1e-4;
  double timestamp = 0.0;
};

/// chi-square(6) quantile at 0.999.
inline constexpr double kBackendPoseGate = 22.457744484;

struct FuseResult {
  Belief belief;
  bool accepted = false;
  double mahalanobis_squared = 0.0;
};

/// [log(R^T R_z); t_z - t].
Vec6 backend_pose_residual(const State& x, const BackendPoseMeasurement& z);

/// Observation matrix H with residual(x (+) d) ~= residual(x) - H d. Blocks are
/// [Jl^-1(e_r) 0 0] and [0 I 0]; at zero rotation residual this is [I 0 0; 0 I 0].
Eigen::Matrix<double, 6, es::kDim> backend_pose_jacobian(const State& x, const BackendPoseMeasurement& z);

/// Kalman update with the stacked rotation/translation observation. Innovations beyond `gate`
/// leave the belief unchanged and report accepted = false. Throws std::invalid_argument if the
/// measurement is more than `max_time_offset` away from the belief.
FuseResult fuse_backend_pose(const Belief& b, const BackendPoseMeasurement& z, double gate = kBackendPoseGate,
                             double max_time_offset = 5e-3);

/// Moves the pose increment onto {C x = d} along the metric of `pose_covariance`:
/// x_bar = x - S C^T (C S C^T)^-1 (C x - d). Returns the input when C is empty.
Vec6 constrained_project(const Vec6& increment, const Mat6& pose_covariance, const ConstraintSystem& constraints);

struct FilterConfig {
  AssociationParams association;
  LocalizabilityThresholds thresholds;
  double point_noise = 0.02;  // m, point-to-plane residual standard deviation
  int max_iterations = 5;
  double step_tolerance = 1e-4;
  bool constraints_enabled = true;
  bool redetect_each_iteration = false;
  bool inflate_constrained_covariance = true;  // drop registration information along constrained directions
};

struct UpdateResult {
  Belief belief;
  /// Constraint rows are in the update frame: rotation rows body frame, translation rows world frame.
  LocalizabilityReport report;
  int iterations = 0;
  bool converged = false;
  std::size_t correspondences = 0;
};

/// Iterated point-to-plane update with degeneracy-constrained increments. `scan` must already be
/// undistorted into the LiDAR frame at its end time. With no valid correspondence the prior is returned.
UpdateResult iterated_update(const Belief& prior, const Scan& scan, const PointMap& map, const Pose& imu_from_lidar,
                             const FilterConfig& config);

/// Symmetrizes and floors eigenvalues at -1e-12 * trace.
Cov18 sanitize_covariance(const Cov18& p);

}  // namespace dalio
