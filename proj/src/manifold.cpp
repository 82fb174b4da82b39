#include "dalio/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/SVD>

namespace dalio {

namespace {
constexpr double kSmallAngle = 1e-8;
}

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
  if (!m.allFinite()) throw std::invalid_argument("rotation matrix has non-finite entries");
  const double ortho = (m * m.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > tol || std::abs(m.determinant() - 1.0) > tol) {
    throw std::invalid_argument("matrix is not a proper rotation");
  }
  return Rotation(m, Unchecked{});
}

Rotation Rotation::from_matrix_projected(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return Rotation(svd.matrixU() * d * svd.matrixV().transpose(), Unchecked{});
}

Rotation Rotation::from_quaternion(const Eigen::Quaterniond& q) {
  return Rotation(q.normalized().toRotationMatrix(), Unchecked{});
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Rotation rot_exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = skew(phi);
  if (theta < kSmallAngle) {
    return Rotation(Mat3::Identity() + k + 0.5 * k * k, Rotation::Unchecked{});
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / theta2;
  return Rotation(Mat3::Identity() + a * k + b * k * k, Rotation::Unchecked{});
}

Vec3 rot_log(const Rotation& r) {
  const Mat3& m = r.matrix();
  const double trace = m.trace();
  const double cos_theta = std::clamp(0.5 * (trace - 1.0), -1.0, 1.0);
  const Vec3 w(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));  // 2 sin(theta) * axis
  const double sin_theta = 0.5 * w.norm();
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < kSmallAngle) {
    // log(I + K + K^2/2) ~= vee(K) to second order.
    return 0.5 * w;
  }
  if (cos_theta > -0.99) {
    return (theta / (2.0 * sin_theta)) * w;
  }
  // Near the half-turn the antisymmetric part vanishes; read the axis off the symmetric part.
  const Mat3 b = 0.5 * (m + m.transpose()) - cos_theta * Mat3::Identity();
  int col = 0;
  b.diagonal().maxCoeff(&col);
  Vec3 axis = b.col(col) / std::sqrt(std::max(b(col, col), 1e-300));
  axis.normalize();
  if (axis.dot(w) < 0.0) axis = -axis;
  return theta * axis;
}

Mat3 right_jacobian(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = skew(phi);
  if (theta2 < 1e-10) return Mat3::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() - ((1.0 - std::cos(theta)) / theta2) * k +
         ((theta - std::sin(theta)) / (theta2 * theta)) * k * k;
}

Mat3 right_jacobian_inverse(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = skew(phi);
  if (theta2 < 1e-10) return Mat3::Identity() + 0.5 * k + (1.0 / 12.0) * k * k;
  const double theta = std::sqrt(theta2);
  const double c = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * k + c * k * k;
}

Mat3 left_jacobian(const Vec3& phi) { return right_jacobian(-phi); }

bool State::finite() const {
  return rotation.matrix().allFinite() && position.allFinite() && velocity.allFinite() &&
         gyro_bias.allFinite() && accel_bias.allFinite() && gravity.allFinite();
}

State boxplus(const State& x, const ErrorState& dx) {
  State out;
  out.rotation = x.rotation * rot_exp(dx.segment<3>(es::kRot));
  out.position = x.position + dx.segment<3>(es::kPos);
  out.velocity = x.velocity + dx.segment<3>(es::kVel);
  out.gyro_bias = x.gyro_bias + dx.segment<3>(es::kBg);
  out.accel_bias = x.accel_bias + dx.segment<3>(es::kBa);
  out.gravity = x.gravity + dx.segment<3>(es::kGrav);
  return out;
}

ErrorState boxminus(const State& a, const State& b) {
  ErrorState d;
  d.segment<3>(es::kRot) = rot_log(b.rotation.inverse() * a.rotation);
  d.segment<3>(es::kPos) = a.position - b.position;
  d.segment<3>(es::kVel) = a.velocity - b.velocity;
  d.segment<3>(es::kBg) = a.gyro_bias - b.gyro_bias;
  d.segment<3>(es::kBa) = a.accel_bias - b.accel_bias;
  d.segment<3>(es::kGrav) = a.gravity - b.gravity;
  return d;
}

bool gravity_plausible(const State& x, double lo, double hi) {
  const double n = x.gravity.norm();
  return n >= lo && n <= hi;
}

}  // namespace dalio
