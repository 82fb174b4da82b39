#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dalio/inertial.hpp"

namespace dalio {

PoseSpline::PoseSpline(std::vector<TimedPose> control, double knot_spacing)
    : control_(std::move(control)), spacing_(knot_spacing) {
  if (control_.size() < 4) throw std::invalid_argument("a cubic pose spline needs at least 4 control poses");
  if (!(spacing_ > 0.0)) throw std::invalid_argument("knot spacing must be positive");
  rot_increments_.reserve(control_.size() - 1);
  for (std::size_t i = 0; i + 1 < control_.size(); ++i) {
    rot_increments_.push_back(rot_log(control_[i].pose.rotation.inverse() * control_[i + 1].pose.rotation));
  }
}

double PoseSpline::start_time() const { return control_[1].timestamp; }
double PoseSpline::end_time() const { return control_[control_.size() - 2].timestamp; }

bool PoseSpline::contains(double t) const {
  const double eps = 1e-9 * std::max(1.0, std::abs(t));
  return t >= start_time() - eps && t <= end_time() + eps;
}

Pose PoseSpline::evaluate(double t) const {
  if (!contains(t)) throw std::out_of_range("spline query outside the valid span");
  const std::size_t segments = control_.size() - 3;
  const double s = (t - start_time()) / spacing_;
  std::size_t seg = static_cast<std::size_t>(std::clamp(std::floor(s), 0.0, static_cast<double>(segments - 1)));
  const double u = std::clamp(s - static_cast<double>(seg), 0.0, 1.0);
  // Control poses seg .. seg+3 drive the segment [t_{seg+1}, t_{seg+2}].
  const double u2 = u * u;
  const double u3 = u2 * u;
  const double b1 = (5.0 + 3.0 * u - 3.0 * u2 + u3) / 6.0;
  const double b2 = (1.0 + 3.0 * u + 3.0 * u2 - 2.0 * u3) / 6.0;
  const double b3 = u3 / 6.0;

  const TimedPose& p0 = control_[seg];
  Rotation r = p0.pose.rotation * rot_exp(b1 * rot_increments_[seg]) * rot_exp(b2 * rot_increments_[seg + 1]) *
               rot_exp(b3 * rot_increments_[seg + 2]);
  const Vec3 t0 = p0.pose.translation;
  const Vec3 d1 = control_[seg + 1].pose.translation - t0;
  const Vec3 d2 = control_[seg + 2].pose.translation - control_[seg + 1].pose.translation;
  const Vec3 d3 = control_[seg + 3].pose.translation - control_[seg + 2].pose.translation;
  return {r, t0 + b1 * d1 + b2 * d2 + b3 * d3};
}

PoseSpline fit_spline(std::vector<TimedPose> poses) {
  if (poses.size() < 4) throw std::invalid_argument("fit_spline needs at least 4 poses");
  const double spacing = (poses.back().timestamp - poses.front().timestamp) / static_cast<double>(poses.size() - 1);
  if (!(spacing > 0.0)) throw std::invalid_argument("pose timestamps must increase");
  for (std::size_t i = 1; i < poses.size(); ++i) {
    const double expected = poses.front().timestamp + spacing * static_cast<double>(i);
    if (std::abs(poses[i].timestamp - expected) > 1e-9 * std::max(1.0, std::abs(expected))) {
      throw std::invalid_argument("pose timestamps must be uniformly spaced");
    }
  }
  return PoseSpline(std::move(poses), spacing);
}

Scan undistort(const Scan& scan, const PoseSpline& spline, const Pose& imu_from_lidar) {
  if (!spline.contains(scan.end_time)) throw std::out_of_range("scan end outside spline span");
  const Pose end_inv = (spline.evaluate(scan.end_time) * imu_from_lidar).inverse();
  Scan out;
  out.end_time = scan.end_time;
  out.points.resize(scan.points.size());
  for (const ScanPoint& p : scan.points) {
    if (!spline.contains(p.timestamp)) throw std::out_of_range("point timestamp outside spline span");
  }
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const ScanPoint& p = scan.points[i];
    const Pose rel = end_inv * spline.evaluate(p.timestamp) * imu_from_lidar;
    out.points[i] = {rel * p.position, p.timestamp};
  }
  return out;
}

}  // namespace dalio
