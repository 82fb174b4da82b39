#include "dalio/inertial.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>

namespace dalio {

void NoiseParams::validate() const {
  if (!(gyro_noise > 0.0 && accel_noise > 0.0 && gyro_bias_walk > 0.0 && accel_bias_walk > 0.0)) {
    throw std::invalid_argument("IMU noise densities must be strictly positive");
  }
}

Cov18 process_noise(const NoiseParams& noise, double dt) {
  Cov18 q = Cov18::Zero();
  q.block<3, 3>(es::kRot, es::kRot).diagonal().setConstant(noise.gyro_noise * noise.gyro_noise * dt);
  q.block<3, 3>(es::kVel, es::kVel).diagonal().setConstant(noise.accel_noise * noise.accel_noise * dt);
  q.block<3, 3>(es::kBg, es::kBg).diagonal().setConstant(noise.gyro_bias_walk * noise.gyro_bias_walk * dt);
  q.block<3, 3>(es::kBa, es::kBa).diagonal().setConstant(noise.accel_bias_walk * noise.accel_bias_walk * dt);
  return q;
}

State propagate_state(const State& x, const ImuSample& u, double dt) {
  const Vec3 omega = u.angular_velocity - x.gyro_bias;
  const Vec3 accel = u.linear_acceleration - x.accel_bias;
  State out = x;
  out.rotation = x.rotation * rot_exp(omega * dt);
  const Vec3 world_accel = x.rotation * accel + x.gravity;
  out.position = x.position + x.velocity * dt + 0.5 * world_accel * dt * dt;
  out.velocity = x.velocity + world_accel * dt;
  return out;
}

Cov18 propagation_jacobian(const State& x, const ImuSample& u, double dt) {
  const Vec3 omega = u.angular_velocity - x.gyro_bias;
  const Vec3 accel = u.linear_acceleration - x.accel_bias;
  const Mat3& r = x.rotation.matrix();

  Cov18 f = Cov18::Identity();
  f.block<3, 3>(es::kRot, es::kRot) = rot_exp(omega * dt).matrix().transpose();
  f.block<3, 3>(es::kRot, es::kBg) = -right_jacobian(omega * dt) * dt;
  f.block<3, 3>(es::kPos, es::kRot) = -0.5 * r * skew(accel) * dt * dt;
  f.block<3, 3>(es::kPos, es::kVel) = Mat3::Identity() * dt;
  f.block<3, 3>(es::kPos, es::kBa) = -0.5 * r * dt * dt;
  f.block<3, 3>(es::kPos, es::kGrav) = 0.5 * Mat3::Identity() * dt * dt;
  f.block<3, 3>(es::kVel, es::kRot) = -r * skew(accel) * dt;
  f.block<3, 3>(es::kVel, es::kBa) = -r * dt;
  f.block<3, 3>(es::kVel, es::kGrav) = Mat3::Identity() * dt;
  return f;
}

namespace {

bool is_psd(const Cov18& p) {
  if (!p.allFinite()) return false;
  const double scale = std::max(p.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  if ((p - p.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) return false;
  Eigen::LLT<Cov18> llt(p + Cov18::Identity() * (1e-12 * scale));
  return llt.info() == Eigen::Success;
}

}  // namespace

std::pair<State, Cov18> propagate(const State& x, const Cov18& cov, const ImuSample& u, double dt,
                                  const NoiseParams& noise) {
  if (!(dt > 0.0)) throw std::invalid_argument("propagation step must be positive");
  if (!is_psd(cov)) throw std::invalid_argument("input covariance is not symmetric PSD");
  const Cov18 f = propagation_jacobian(x, u, dt);
  Cov18 next = f * cov * f.transpose() + process_noise(noise, dt);
  next = 0.5 * (next + next.transpose());
  return {propagate_state(x, u, dt), next};
}

void Preintegrated::integrate(const ImuSample& u, double dt, const NoiseParams& noise) {
  const Vec3 omega = u.angular_velocity - linearization_bias.gyro;
  const Vec3 accel = u.linear_acceleration - linearization_bias.accel;
  const Rotation step = rot_exp(omega * dt);
  const Mat3& dr = step.matrix();
  const Mat3 jr = right_jacobian(omega * dt);
  const Mat3& big_r = delta_rotation.matrix();
  const Mat3 r_acc_skew = big_r * skew(accel);

  Mat9 a = Mat9::Identity();
  a.block<3, 3>(0, 0) = dr.transpose();
  a.block<3, 3>(3, 0) = -r_acc_skew * dt;
  a.block<3, 3>(6, 0) = -0.5 * r_acc_skew * dt * dt;
  a.block<3, 3>(6, 3) = Mat3::Identity() * dt;

  Eigen::Matrix<double, 9, 6> b = Eigen::Matrix<double, 9, 6>::Zero();
  b.block<3, 3>(0, 0) = jr * dt;
  b.block<3, 3>(3, 3) = big_r * dt;
  b.block<3, 3>(6, 3) = 0.5 * big_r * dt * dt;

  Eigen::Matrix<double, 6, 6> n = Eigen::Matrix<double, 6, 6>::Zero();
  n.block<3, 3>(0, 0).diagonal().setConstant(noise.gyro_noise * noise.gyro_noise / dt);
  n.block<3, 3>(3, 3).diagonal().setConstant(noise.accel_noise * noise.accel_noise / dt);

  covariance = a * covariance * a.transpose() + b * n * b.transpose();
  covariance = 0.5 * (covariance + covariance.transpose());

  // Bias Jacobians use the rotation before this step.
  d_position_d_ba += d_velocity_d_ba * dt - 0.5 * big_r * dt * dt;
  d_position_d_bg += d_velocity_d_bg * dt - 0.5 * r_acc_skew * d_rotation_d_bg * dt * dt;
  d_velocity_d_ba += -big_r * dt;
  d_velocity_d_bg += -r_acc_skew * d_rotation_d_bg * dt;
  d_rotation_d_bg = dr.transpose() * d_rotation_d_bg - jr * dt;

  delta_position += delta_velocity * dt + 0.5 * big_r * accel * dt * dt;
  delta_velocity += big_r * accel * dt;
  delta_rotation = delta_rotation * step;
  delta_time += dt;
}

Preintegrated Preintegrated::compose(const Preintegrated& next) const {
  const Mat3& r1 = delta_rotation.matrix();
  const Mat3& r2 = next.delta_rotation.matrix();
  const double dt2 = next.delta_time;

  Preintegrated out;
  out.linearization_bias = linearization_bias;
  out.delta_rotation = delta_rotation * next.delta_rotation;
  out.delta_velocity = delta_velocity + r1 * next.delta_velocity;
  out.delta_position = delta_position + delta_velocity * dt2 + r1 * next.delta_position;
  out.delta_time = delta_time + dt2;

  out.d_rotation_d_bg = r2.transpose() * d_rotation_d_bg + next.d_rotation_d_bg;
  out.d_velocity_d_bg = d_velocity_d_bg - r1 * skew(next.delta_velocity) * d_rotation_d_bg + r1 * next.d_velocity_d_bg;
  out.d_velocity_d_ba = d_velocity_d_ba + r1 * next.d_velocity_d_ba;
  out.d_position_d_bg = d_position_d_bg + d_velocity_d_bg * dt2 -
                        r1 * skew(next.delta_position) * d_rotation_d_bg + r1 * next.d_position_d_bg;
  out.d_position_d_ba = d_position_d_ba + d_velocity_d_ba * dt2 + r1 * next.d_position_d_ba;

  Mat9 a = Mat9::Identity();
  a.block<3, 3>(0, 0) = r2.transpose();
  a.block<3, 3>(3, 0) = -r1 * skew(next.delta_velocity);
  a.block<3, 3>(6, 0) = -r1 * skew(next.delta_position);
  a.block<3, 3>(6, 3) = Mat3::Identity() * dt2;
  Mat9 b = Mat9::Identity();
  b.block<3, 3>(3, 3) = r1;
  b.block<3, 3>(6, 6) = r1;
  out.covariance = a * covariance * a.transpose() + b * next.covariance * b.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

Rotation Preintegrated::corrected_rotation(const ImuBias& bias) const {
  return delta_rotation * rot_exp(d_rotation_d_bg * (bias.gyro - linearization_bias.gyro));
}

Vec3 Preintegrated::corrected_velocity(const ImuBias& bias) const {
  return delta_velocity + d_velocity_d_bg * (bias.gyro - linearization_bias.gyro) +
         d_velocity_d_ba * (bias.accel - linearization_bias.accel);
}

Vec3 Preintegrated::corrected_position(const ImuBias& bias) const {
  return delta_position + d_position_d_bg * (bias.gyro - linearization_bias.gyro) +
         d_position_d_ba * (bias.accel - linearization_bias.accel);
}

Preintegrated preintegrate(std::span<const ImuSample> samples, double end_time, const ImuBias& bias,
                           const NoiseParams& noise) {
  if (samples.empty()) throw std::invalid_argument("preintegration needs at least one sample");
  Preintegrated out;
  out.linearization_bias = bias;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double t_next = k + 1 < samples.size() ? samples[k + 1].timestamp : end_time;
    const double dt = t_next - samples[k].timestamp;
    if (!(dt > 0.0)) {
      throw std::invalid_argument("IMU timestamps must be strictly increasing (index " + std::to_string(k) + ")");
    }
    out.integrate(samples[k], dt, noise);
  }
  return out;
}

}  // namespace dalio
