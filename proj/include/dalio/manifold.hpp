#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace dalio {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Orthonormal 3x3 rotation. Construction from an arbitrary matrix is checked.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Throws std::invalid_argument unless R*R^T = I and det(R) = +1 within `tol`.
  static Rotation from_matrix(const Mat3& m, double tol = 1e-9);
  /// Re-orthonormalizes via SVD; for matrices that are rotations up to round-off.
  static Rotation from_matrix_projected(const Mat3& m);
  static Rotation from_quaternion(const Eigen::Quaterniond& q);
  static Rotation identity() { return {}; }

  const Mat3& matrix() const { return m_; }
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(m_).normalized(); }
  Rotation inverse() const { return Rotation(m_.transpose(), Unchecked{}); }

  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_, Unchecked{}); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

 private:
  struct Unchecked {};
  Rotation(const Mat3& m, Unchecked) : m_(m) {}
  friend Rotation rot_exp(const Vec3& phi);

  Mat3 m_;
};

Mat3 skew(const Vec3& v);

/// exp([phi]x). Second-order series below 1e-8 rad.
Rotation rot_exp(const Vec3& phi);
/// Inverse of rot_exp with |result| <= pi. The half-turn case uses axis extraction.
Vec3 rot_log(const Rotation& r);

/// Right Jacobian of SO(3): exp(phi + d) ~= exp(phi) exp(Jr(phi) d).
Mat3 right_jacobian(const Vec3& phi);
Mat3 right_jacobian_inverse(const Vec3& phi);
/// Left Jacobian, Jl(phi) = Jr(-phi).
Mat3 left_jacobian(const Vec3& phi);

/// Rigid transform x -> R x + t.
struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  Pose operator*(const Pose& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const {
    const Rotation ri = rotation.inverse();
    return {ri, -(ri * translation)};
  }
};

/// Error-state block layout, shared by propagation and every measurement Jacobian.
namespace es {
inline constexpr int kRot = 0;
inline constexpr int kPos = 3;
inline constexpr int kVel = 6;
inline constexpr int kBg = 9;
inline constexpr int kBa = 12;
inline constexpr int kGrav = 15;
inline constexpr int kDim = 18;
}  // namespace es

using ErrorState = Eigen::Matrix<double, es::kDim, 1>;
using Cov18 = Eigen::Matrix<double, es::kDim, es::kDim>;

/// Full navigation state: attitude, position, velocity, biases and gravity, all in the global frame.
struct State {
  Rotation rotation;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);

  Pose pose() const { return {rotation, position}; }
  bool finite() const;
};

/// Rotation is right-perturbed (R * exp(dr)); every vector block is added.
State boxplus(const State& x, const ErrorState& dx);
/// boxminus(boxplus(x, d), x) == d for |dr| < pi.
ErrorState boxminus(const State& a, const State& b);

/// Gravity sanity band after initialization; the default band is [9.0, 10.6] m/s^2.
bool gravity_plausible(const State& x, double lo = 9.0, double hi = 10.6);

}  // namespace dalio
