#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dalio/manifold.hpp"
#include "dalio/scan.hpp"

namespace dalio {

struct ImuSample {
  double timestamp = 0.0;
  Vec3 angular_velocity = Vec3::Zero();     // rad/s
  Vec3 linear_acceleration = Vec3::Zero();  // specific force, m/s^2
};

/// Continuous-time noise densities. All must be strictly positive.
struct NoiseParams {
  double gyro_noise = 1e-3;        // rad/s/sqrt(Hz)
  double accel_noise = 1e-2;       // m/s^2/sqrt(Hz)
  double gyro_bias_walk = 1e-5;    // rad/s^2/sqrt(Hz)
  double accel_bias_walk = 1e-4;   // m/s^3/sqrt(Hz)

  void validate() const;
};

struct ImuBias {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

/// Discrete process noise for one step of length dt (rotation, velocity and bias blocks).
Cov18 process_noise(const NoiseParams& noise, double dt);

/// d(next (-) nominal_next) / d(dx) for the Euler step used by propagate().
Cov18 propagation_jacobian(const State& x, const ImuSample& u, double dt);

/// One step with the sample held constant: rotation by Exp(w dt), velocity by a dt, position by
/// v dt + a dt^2 / 2. No covariance.
State propagate_state(const State& x, const ImuSample& u, double dt);

/// Euler step of the state with covariance F P F^T + Q. Throws std::invalid_argument if dt <= 0
/// or P is not symmetric positive semi-definite.
std::pair<State, Cov18> propagate(const State& x, const Cov18& cov, const ImuSample& u, double dt,
                                  const NoiseParams& noise);

/// Gravity-free relative motion between two instants, with first-order bias Jacobians.
/// Covariance is ordered [dphi, dv, dp].
struct Preintegrated {
  using Mat9 = Eigen::Matrix<double, 9, 9>;

  Rotation delta_rotation;
  Vec3 delta_velocity = Vec3::Zero();
  Vec3 delta_position = Vec3::Zero();
  double delta_time = 0.0;
  Mat9 covariance = Mat9::Zero();

  Mat3 d_rotation_d_bg = Mat3::Zero();
  Mat3 d_velocity_d_bg = Mat3::Zero();
  Mat3 d_velocity_d_ba = Mat3::Zero();
  Mat3 d_position_d_bg = Mat3::Zero();
  Mat3 d_position_d_ba = Mat3::Zero();

  ImuBias linearization_bias;

  /// Integrates one sample held constant for dt.
  void integrate(const ImuSample& u, double dt, const NoiseParams& noise);

  /// Concatenation with an interval that starts where this one ends, at the same bias.
  Preintegrated compose(const Preintegrated& next) const;

  /// Deltas with first-order correction for a bias different from the linearization bias.
  Rotation corrected_rotation(const ImuBias& bias) const;
  Vec3 corrected_velocity(const ImuBias& bias) const;
  Vec3 corrected_position(const ImuBias& bias) const;
};

/// Sample k is held over [t_k, t_{k+1}); the last sample runs to `end_time`.
/// Throws on an empty list, non-increasing timestamps or end_time <= last timestamp.
Preintegrated preintegrate(std::span<const ImuSample> samples, double end_time, const ImuBias& bias,
                           const NoiseParams& noise);

struct TimedPose {
  double timestamp = 0.0;
  Pose pose;
};

/// Uniform cumulative cubic B-spline. Rotation is blended through rot_log increments of consecutive
/// control rotations, position through the ordinary cubic basis.
///
/// With N control poses at t_0 .. t_{N-1} the valid span is [t_1, t_{N-2}]. The spline does not pass
/// through its control poses in general; it reproduces constant linear and angular velocity motion
/// exactly.
class PoseSpline {
 public:
  PoseSpline(std::vector<TimedPose> control, double knot_spacing);

  Pose evaluate(double t) const;
  double start_time() const;
  double end_time() const;
  bool contains(double t) const;
  const std::vector<TimedPose>& control_poses() const { return control_; }

 private:
  std::vector<TimedPose> control_;
  std::vector<Vec3> rot_increments_;
  double spacing_;
};

/// Throws std::invalid_argument for fewer than 4 poses or non-uniform spacing.
PoseSpline fit_spline(std::vector<TimedPose> poses);

/// Re-expresses every point in the LiDAR frame at scan end: p' = T_end^-1 T(t) p, where
/// T(t) = spline(t) * imu_from_lidar. Throws std::out_of_range if a timestamp leaves the spline span.
Scan undistort(const Scan& scan, const PoseSpline& spline, const Pose& imu_from_lidar = {});

}  // namespace dalio
