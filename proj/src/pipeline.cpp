#include "dalio/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <stdexcept>
#include <unordered_set>

#include "dalio/filter.hpp"
#include "dalio/registration.hpp"
#include "json.hpp"

namespace dalio {

namespace {

/// Inserts points, keeping at most one per voxel.
class VoxelMap {
 public:
  VoxelMap(double leaf, double cell) : leaf_(leaf), map_(cell) {}

  void insert(const std::vector<Vec3>& pts) {
    std::vector<Vec3> fresh;
    for (const Vec3& p : pts) {
      const auto ix = static_cast<std::int64_t>(std::floor(p.x() / leaf_)) + (1 << 20);
      const auto iy = static_cast<std::int64_t>(std::floor(p.y() / leaf_)) + (1 << 20);
      const auto iz = static_cast<std::int64_t>(std::floor(p.z() / leaf_)) + (1 << 20);
      if (occupied_.insert((ix << 42) | (iy << 21) | iz).second) fresh.push_back(p);
    }
    map_.add(fresh);
  }
  const PointMap& map() const { return map_; }

 private:
  double leaf_;
  PointMap map_;
  std::unordered_set<std::int64_t> occupied_;
};

Pose extrapolate(const State& x, const Vec3& omega, double dt) {
  return {x.rotation * rot_exp(omega * dt), x.position + x.velocity * dt};
}

Mat6 pose_covariance(double rot_sigma, double trans_sigma) {
  Mat6 c = Mat6::Zero();
  c.diagonal().head<3>().setConstant(rot_sigma * rot_sigma);
  c.diagonal().tail<3>().setConstant(trans_sigma * trans_sigma);
  return c;
}

}  // namespace

std::vector<StampedPose> to_stamped(const std::vector<double>& times, const std::vector<State>& states) {
  std::vector<StampedPose> out;
  out.reserve(states.size());
  for (std::size_t k = 0; k < states.size(); ++k) out.push_back({times[k], states[k].pose()});
  return out;
}

double max_along_track_error(const std::vector<StampedPose>& est, const std::vector<double>& times,
                             const std::vector<State>& truth, double max_dt) {
  double worst = 0.0;
  for (const StampedPose& e : est) {
    const auto it = std::lower_bound(times.begin(), times.end(), e.timestamp);
    std::size_t k = static_cast<std::size_t>(it - times.begin());
    if (k == times.size() || (k > 0 && e.timestamp - times[k - 1] < times[k] - e.timestamp)) k = k == 0 ? 0 : k - 1;
    if (k >= times.size() || std::abs(times[k] - e.timestamp) > max_dt) continue;
    const Vec3 v = truth[k].velocity;
    if (v.norm() < 1e-9) continue;
    worst = std::max(worst, std::abs((e.pose.translation - truth[k].position).dot(v.normalized())));
  }
  return worst;
}

RunResult run(const RunConfig& config, const RunOverrides& overrides) {
  config.validate();
  const Scenario& sc = config.scenario;
  const auto& traj = sc.trajectory;
  const sim::ImuStream imu = sim::simulate_imu(traj, sc.imu, sc.seed);
  const std::vector<Scan> scans = sim::simulate_lidar(traj, sc.environment, sc.lidar, sc.seed);
  std::vector<sim::AuxMeasurement> aux;
  if (sc.aux_enabled) aux = sim::simulate_aux_odometry(traj, sc.aux, sc.seed);
  if (overrides.drop_aux_outliers) std::erase_if(aux, [](const auto& m) { return m.outlier; });
  std::stable_sort(aux.begin(), aux.end(), [](const auto& a, const auto& b) { return a.arrival < b.arrival; });

  RunResult result;
  result.truth = imu.truth;
  for (const ImuSample& s : imu.samples) result.truth_times.push_back(s.timestamp);
  const int per_scan = traj.imu_per_scan();
  const double imu_dt = 1.0 / traj.imu_rate;
  const Pose& extrinsic = sc.lidar.imu_from_lidar;

  // Initial belief at the true pose and velocity; biases unknown.
  State x0 = imu.truth.front();
  x0.gyro_bias.setZero();
  x0.accel_bias.setZero();
  Belief belief;
  belief.state = x0;
  belief.timestamp = imu.samples.front().timestamp;
  belief.covariance.setZero();
  auto& pd = belief.covariance;
  pd.diagonal().segment<3>(es::kRot).setConstant(std::pow(config.initial_rotation_sigma, 2));
  pd.diagonal().segment<3>(es::kPos).setConstant(std::pow(config.initial_position_sigma, 2));
  pd.diagonal().segment<3>(es::kVel).setConstant(std::pow(config.initial_velocity_sigma, 2));
  pd.diagonal().segment<3>(es::kBg).setConstant(std::pow(config.initial_gyro_bias_sigma, 2));
  pd.diagonal().segment<3>(es::kBa).setConstant(std::pow(config.initial_accel_bias_sigma, 2));
  pd.diagonal().segment<3>(es::kGrav).setConstant(std::pow(config.gravity_sigma, 2));

  SmootherConfig scfg;
  scfg.window = config.window;
  scfg.imu_rate = traj.imu_rate;
  scfg.imu_noise = sc.imu.noise;
  scfg.gravity = sc.imu.gravity;
  scfg.kernel_scale = config.kernel_scale;
  scfg.gnc_enabled = config.toggles.gnc;
  FixedLagSmoother backend(scfg);
  backend.initialize(imu.samples.front(), to_nav_state(x0), pd.topLeftCorner<15, 15>());

  FilterConfig fcfg;
  fcfg.thresholds = config.thresholds;
  fcfg.point_noise = config.point_noise;
  fcfg.constraints_enabled = config.toggles.constraints;

  const Mat6 aux_cov = pose_covariance(config.aux_rotation_sigma > 0.0 ? config.aux_rotation_sigma : sc.aux.rotation_noise,
                                       config.aux_translation_sigma > 0.0 ? config.aux_translation_sigma
                                                                          : sc.aux.translation_noise);
  VoxelMap map(config.map_voxel, 1.0);
  result.estimate.push_back({belief.timestamp, belief.state.pose()});

  std::vector<State> interval{belief.state};  // filter states over the current scan, at IMU times
  std::optional<Pose> previous_scan_pose;
  std::size_t next_aux = 0;
  auto clock_start = std::chrono::steady_clock::now();

  for (std::size_t k = 1; k < imu.samples.size(); ++k) {
    const ImuSample& prev = imu.samples[k - 1];
    const ImuSample& now = imu.samples[k];
    auto [state, cov] = propagate(belief.state, belief.covariance, prev, now.timestamp - prev.timestamp, sc.imu.noise);
    belief.state = state;
    belief.covariance = cov;
    belief.timestamp = now.timestamp;
    interval.push_back(belief.state);
    backend.add_imu_node(now);

    while (next_aux < aux.size() && aux[next_aux].arrival <= now.timestamp + 1e-9) {
      const auto& m = aux[next_aux++];
      try {
        backend.attach_odometry(m.relative, m.t_a, m.t_b, aux_cov, true);
        ++result.aux_delivered;
      } catch (const StaleMeasurementError&) {
        ++result.stale_measurements;
      }
    }

    if (k % static_cast<std::size_t>(per_scan) != 0) continue;
    const std::size_t scan_index = k / per_scan - 1;
    if (scan_index >= scans.size()) break;
    const Scan& scan = scans[scan_index];

    // Spline through filter states with one extrapolated pose on either side of the sweep.
    const int stride = config.spline_stride;
    const double h = stride * imu_dt;
    std::vector<TimedPose> control;
    const State& first = interval.front();
    const Vec3 w_first = imu.samples[k - per_scan].angular_velocity - first.gyro_bias;
    control.push_back({imu.samples[k - per_scan].timestamp - h, extrapolate(first, w_first, -h)});
    for (int j = 0; j <= per_scan; j += stride) {
      control.push_back({imu.samples[k - per_scan + j].timestamp, interval[j].pose()});
    }
    if (per_scan % stride != 0) {
      control.push_back({imu.samples[k].timestamp, interval.back().pose()});
    }
    const Vec3 w_last = now.angular_velocity - belief.state.gyro_bias;
    control.push_back({now.timestamp + h, extrapolate(belief.state, w_last, h)});
    const Scan undistorted = undistort(scan, fit_spline(std::move(control)), extrinsic);

    ScanRecord rec;
    rec.timestamp = now.timestamp;
    const OptimizeResult opt = backend.optimize();
    if (opt.diverged && !result.diverged) {
      result.diverged = true;
      result.divergence_reason = "smoother did not converge at t=" + std::to_string(now.timestamp);
    }
    for (std::size_t id : backend.factor_ids()) {
      const Factor& f = backend.factor(id);
      if (f.guarded()) result.weights.push_back({now.timestamp, id, f.kind(), f.weight(), f.mu()});
    }
    if (config.toggles.backend_prior) {
      if (const auto z = backend.latest_pose()) {
        const double gate = config.backend_gate > 0.0 ? config.backend_gate : std::numeric_limits<double>::infinity();
        const FuseResult fused = fuse_backend_pose(belief, *z, gate);
        belief = fused.belief;
        rec.backend_fused = fused.accepted;
        rec.backend_mahalanobis = fused.mahalanobis_squared;
      }
    }

    if (map.map().empty()) {
      rec.categories.fill(LocalizabilityCategory::None);
    } else {
      const UpdateResult up = iterated_update(belief, undistorted, map.map(), extrinsic, fcfg);
      belief = up.belief;
      rec.categories = up.report.categories;
      rec.iterations = up.iterations;
      rec.correspondences = up.correspondences;

      if (previous_scan_pose && up.correspondences > 0) {
        const Pose now_pose = belief.state.pose();
        const Pose rel = previous_scan_pose->inverse() * now_pose;
        Mat6 cov6 = pose_covariance(config.lidar_rotation_sigma, config.lidar_translation_sigma);
        const auto& cs = up.report.constraints;
        const Mat3 ra_t = previous_scan_pose->rotation.matrix().transpose();
        for (int r = 0; r < cs.matrix.rows(); ++r) {
          if (r < cs.rotation_rows) {
            const Vec3 v = cs.matrix.block<1, 3>(r, 0).transpose();
            cov6.topLeftCorner<3, 3>() += std::pow(config.degenerate_rotation_sigma, 2) * v * v.transpose();
          } else {
            const Vec3 v = ra_t * cs.matrix.block<1, 3>(r, 3).transpose();
            cov6.bottomRightCorner<3, 3>() += std::pow(config.degenerate_translation_sigma, 2) * v * v.transpose();
          }
        }
        backend.attach_odometry(rel, result.scans.back().timestamp, now.timestamp, cov6, up.report.degenerate());
      }
    }

    std::vector<Vec3> world;
    world.reserve(undistorted.points.size());
    const Pose world_from_lidar = belief.state.pose() * extrinsic;
    for (const ScanPoint& p : undistorted.points) world.push_back(world_from_lidar * p.position);
    map.insert(world);

    backend.slide(now.timestamp);
    previous_scan_pose = belief.state.pose();

    if (!belief.state.finite() && !result.diverged) {
      result.diverged = true;
      result.divergence_reason = "filter state became non-finite at t=" + std::to_string(now.timestamp);
    }
    const auto clock_now = std::chrono::steady_clock::now();
    rec.ms = std::chrono::duration<double, std::milli>(clock_now - clock_start).count();
    clock_start = clock_now;
    rec.pose = belief.state.pose();
    result.scans.push_back(rec);
    result.estimate.push_back({now.timestamp, rec.pose});
    interval.assign(1, belief.state);
  }

  // Measurements still in flight when the IMU stream ends are delivered, then the last factors are solved.
  for (; next_aux < aux.size(); ++next_aux) {
    const auto& m = aux[next_aux];
    try {
      backend.attach_odometry(m.relative, m.t_a, m.t_b, aux_cov, true);
      ++result.aux_delivered;
    } catch (const StaleMeasurementError&) {
      ++result.stale_measurements;
    } catch (const std::invalid_argument&) {
      // Interval extends past the last node.
    }
  }
  backend.optimize();
  for (const auto& [t, x] : backend.smoothed_trajectory()) result.smoothed.push_back({t, x.pose()});
  const std::vector<StampedPose> gt = to_stamped(result.truth_times, imu.truth);
  result.eval = evaluate_ate(result.estimate, gt, 0.5 * imu_dt);
  double total = 0.0;
  for (const ScanRecord& r : result.scans) {
    total += r.ms;
    result.eval.max_scan_ms = std::max(result.eval.max_scan_ms, r.ms);
  }
  if (!result.scans.empty()) result.eval.mean_scan_ms = total / static_cast<double>(result.scans.size());
  result.max_along_track_error = max_along_track_error(result.estimate, result.truth_times, imu.truth, 0.5 * imu_dt);
  return result;
}

void write_artifacts(const RunResult& result, const RunConfig& config, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  auto open = [&](const char* name) {
    std::ofstream out(root / name);
    if (!out) throw std::runtime_error("cannot write " + (root / name).string());
    out << std::setprecision(17);
    return out;
  };
  {
    std::ofstream out = open("trajectory.tum");
    write_tum(out, result.estimate);
  }
  {
    std::ofstream out = open("smoothed.tum");
    write_tum(out, result.smoothed);
  }
  {
    std::ofstream out = open("ground_truth.tum");
    write_tum(out, to_stamped(result.truth_times, result.truth));
  }
  {
    std::ofstream out = open("localizability.csv");
    out << "timestamp,rx,ry,rz,tx,ty,tz,iterations,correspondences,backend_fused,backend_mahalanobis,ms\n";
    for (const ScanRecord& r : result.scans) {
      out << r.timestamp;
      for (LocalizabilityCategory c : r.categories) out << ',' << to_string(c);
      out << ',' << r.iterations << ',' << r.correspondences << ',' << (r.backend_fused ? 1 : 0) << ','
          << r.backend_mahalanobis << ',' << r.ms << '\n';
    }
  }
  {
    std::ofstream out = open("factor_weights.csv");
    out << "timestamp,factor,kind,weight,mu\n";
    for (const WeightRecord& w : result.weights) {
      out << w.timestamp << ',' << w.factor << ',' << to_string(w.kind) << ',' << w.weight << ',' << w.mu << '\n';
    }
  }
  nlohmann::json j;
  j["scenario"] = config.scenario.name;
  j["seed"] = config.scenario.seed;
  j["toggles"] = {{"constraints", config.toggles.constraints},
                  {"gnc", config.toggles.gnc},
                  {"backend_prior", config.toggles.backend_prior}};
  j["ate_rmse"] = result.eval.ate_rmse;
  j["axis_rmse"] = {result.eval.axis_rmse.x(), result.eval.axis_rmse.y(), result.eval.axis_rmse.z()};
  j["max_error"] = result.eval.max_error;
  j["associated"] = result.eval.associated;
  j["mean_scan_ms"] = result.eval.mean_scan_ms;
  j["max_scan_ms"] = result.eval.max_scan_ms;
  j["max_along_track_error"] = result.max_along_track_error;
  j["scans"] = result.scans.size();
  j["aux_delivered"] = result.aux_delivered;
  j["stale_measurements"] = result.stale_measurements;
  j["diverged"] = result.diverged;
  j["divergence_reason"] = result.divergence_reason;
  std::ofstream out = open("result.json");
  out << j.dump(2) << '\n';
}

}  // namespace dalio
