#include <gtest/gtest.h>

#include <set>

#include "dalio/scenario.hpp"
#include "dalio/sim.hpp"
#include "oracles.hpp"

using namespace dalio;

TEST(Environment, BoxRoomSampling) {
  const sim::Environment env = default_scenario(sim::EnvironmentKind::BoxRoom).environment;
  const auto s = sim::sample_environment(env);
  // Surface area 2 * 10 * 10 + 4 * 10 * 3 = 320 m^2 at 10 pts/m^2.
  EXPECT_NEAR(static_cast<double>(s.points.size()), 3200.0, 0.05 * 3200.0);
  std::set<std::tuple<int, int, int>> normals;
  for (const auto& p : s.points) {
    normals.insert({static_cast<int>(std::lround(p.normal.x())), static_cast<int>(std::lround(p.normal.y())),
                    static_cast<int>(std::lround(p.normal.z()))});
    EXPECT_LT(sim::surface_distance(env, p.position), 1e-10);
  }
  EXPECT_EQ(normals.size(), 6u);
  EXPECT_EQ(s.surface_count, 6);
}

TEST(Environment, PlaneAndTunnelNormals) {
  const auto plane = sim::sample_environment(default_scenario(sim::EnvironmentKind::OpenPlane).environment);
  ASSERT_FALSE(plane.points.empty());
  for (const auto& p : plane.points) EXPECT_EQ(p.normal, Vec3::UnitZ());

  sim::Environment tube = default_scenario(sim::EnvironmentKind::Tunnel).environment;
  tube.curvature = 0.0;
  const auto t = sim::sample_environment(tube);
  ASSERT_FALSE(t.points.empty());
  for (const auto& p : t.points) {
    EXPECT_NEAR(p.normal.x(), 0.0, 1e-12);
    EXPECT_NEAR(p.normal.norm(), 1.0, 1e-12);
    // Normals point inward, towards the axis.
    const Vec3 radial(0.0, p.position.y(), p.position.z());
    EXPECT_NEAR(p.normal.dot(radial.normalized()), -1.0, 1e-9);
  }
}

TEST(Environment, CastRayDistances) {
  const sim::Environment env = default_scenario(sim::EnvironmentKind::BoxRoom).environment;
  const Vec3 o(0, 0, 1);
  auto hit = sim::cast_ray(env, o, Vec3::UnitX(), 30.0);
  ASSERT_TRUE(hit.has_value());
  EXPECT_NEAR(hit->range, env.length / 2, 1e-12);
  EXPECT_EQ(hit->normal, -Vec3::UnitX());
  hit = sim::cast_ray(env, o, -Vec3::UnitZ(), 30.0);
  ASSERT_TRUE(hit.has_value());
  EXPECT_NEAR(hit->range, 1.0, 1e-12);
  EXPECT_FALSE(sim::cast_ray(env, o, Vec3::UnitX(), 2.0).has_value());
  const auto open = default_scenario(sim::EnvironmentKind::OpenPlane).environment;
  EXPECT_FALSE(sim::cast_ray(open, o, Vec3::UnitZ(), 30.0).has_value());
}

TEST(Trajectory, KinematicsAreConsistent) {
  for (auto kind : {sim::EnvironmentKind::BoxRoom, sim::EnvironmentKind::Tunnel}) {
    const sim::TrajectorySpec traj = default_scenario(kind).trajectory;
    const double h = 1e-4;
    for (double t = 0.5; t < traj.duration - 0.5; t += 0.73) {
      const auto a = sim::evaluate_trajectory(traj, t - h), b = sim::evaluate_trajectory(traj, t),
                 c = sim::evaluate_trajectory(traj, t + h);
      EXPECT_LT(((c.position - a.position) / (2 * h) - b.velocity).norm(), 1e-6);
      EXPECT_LT(((c.velocity - a.velocity) / (2 * h) - b.acceleration).norm(), 1e-6);
      const Vec3 w = rot_log(a.rotation.inverse() * c.rotation) / (2 * h);
      EXPECT_LT((w - b.angular_velocity).norm(), 1e-6);
    }
  }
}

TEST(Imu, StationaryNoiselessMeasuresGravity) {
  sim::TrajectorySpec traj;
  traj.duration = 1.0;
  traj.start_yaw = 0.7;
  sim::ImuSimParams params;
  params.noiseless = true;
  const auto imu = sim::simulate_imu(traj, params, 0);
  EXPECT_EQ(imu.samples.size(), 201u);
  const Vec3 expected = imu.truth.front().rotation.inverse() * (-params.gravity);
  for (const auto& s : imu.samples) {
    EXPECT_LT(s.angular_velocity.norm(), 1e-15);
    EXPECT_LT((s.linear_acceleration - expected).norm(), 1e-12);
  }
}

TEST(Imu, SeedDeterminism) {
  const Scenario sc = default_scenario(sim::EnvironmentKind::Corridor);
  const auto a = sim::simulate_imu(sc.trajectory, sc.imu, 3), b = sim::simulate_imu(sc.trajectory, sc.imu, 3),
             c = sim::simulate_imu(sc.trajectory, sc.imu, 4);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].linear_acceleration, b.samples[i].linear_acceleration);
    EXPECT_EQ(a.samples[i].angular_velocity, b.samples[i].angular_velocity);
    differs |= a.samples[i].angular_velocity != c.samples[i].angular_velocity;
  }
  EXPECT_TRUE(differs);
}

TEST(Lidar, StationaryNoiselessPointsLieOnSurfaces) {
  Scenario sc = default_scenario(sim::EnvironmentKind::Corridor);
  sc.trajectory.linear_velocity.setZero();
  sc.trajectory.angular_velocity.setZero();
  sc.trajectory.wobble_rotation_amplitude.setZero();
  sc.trajectory.wobble_position_amplitude.setZero();
  sc.trajectory.duration = 0.5;
  sc.lidar.range_noise = 0.0;
  const auto scans = sim::simulate_lidar(sc.trajectory, sc.environment, sc.lidar, 2);
  ASSERT_FALSE(scans.empty());
  const auto k = sim::evaluate_trajectory(sc.trajectory, 0.0);
  const Pose world_from_lidar = Pose{k.rotation, k.position} * sc.lidar.imu_from_lidar;
  for (const Scan& s : scans) {
    double last = -1.0;
    for (const ScanPoint& p : s.points) {
      EXPECT_LT(sim::surface_distance(sc.environment, world_from_lidar * p.position), 1e-10);
      EXPECT_LE(p.timestamp, s.end_time);
      EXPECT_GE(p.timestamp, last);
      last = p.timestamp;
    }
    EXPECT_EQ(s.points.back().timestamp, s.end_time);
  }
}

TEST(Lidar, SeedDeterminism) {
  const Scenario sc = default_scenario(sim::EnvironmentKind::BoxRoom);
  const auto a = sim::simulate_lidar(sc.trajectory, sc.environment, sc.lidar, 9);
  const auto b = sim::simulate_lidar(sc.trajectory, sc.environment, sc.lidar, 9);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].points.size(), b[i].points.size());
    for (std::size_t j = 0; j < a[i].points.size(); ++j) {
      EXPECT_EQ(a[i].points[j].position, b[i].points[j].position);
    }
  }
}

TEST(AuxOdometry, ExactWithoutNoise) {
  const Scenario sc = default_scenario(sim::EnvironmentKind::BoxRoom);
  sim::AuxOdometryParams p = sc.aux;
  p.translation_noise = 0.0;
  p.rotation_noise = 0.0;
  p.outliers.probability = 0.0;
  for (const auto& z : sim::simulate_aux_odometry(sc.trajectory, p, 1)) {
    const auto a = sim::evaluate_trajectory(sc.trajectory, z.t_a), b = sim::evaluate_trajectory(sc.trajectory, z.t_b);
    const Pose truth = Pose{a.rotation, a.position}.inverse() * Pose{b.rotation, b.position};
    EXPECT_LT((z.relative.translation - truth.translation).norm(), 1e-12);
    EXPECT_LT(rot_log(z.relative.rotation.inverse() * truth.rotation).norm(), 1e-12);
    EXPECT_FALSE(z.outlier);
  }
}

TEST(AuxOdometry, OutlierRateAndLatency) {
  Scenario sc = default_scenario(sim::EnvironmentKind::Tunnel);
  sim::AuxOdometryParams p = sc.aux;
  p.outliers.probability = 0.3;
  p.outliers.translation = 20.0;
  p.latency = 0.3;
  const auto zs = sim::simulate_aux_odometry(sc.trajectory, p, 5);
  ASSERT_GT(zs.size(), 300u);
  int far = 0;
  for (const auto& z : zs) {
    EXPECT_DOUBLE_EQ(z.arrival, z.t_b + 0.3);
    const auto a = sim::evaluate_trajectory(sc.trajectory, z.t_a), b = sim::evaluate_trajectory(sc.trajectory, z.t_b);
    const Pose truth = Pose{a.rotation, a.position}.inverse() * Pose{b.rotation, b.position};
    const bool is_far = (z.relative.translation - truth.translation).norm() > 10.0;
    far += is_far;
    EXPECT_EQ(is_far, z.outlier);
  }
  const double rate = static_cast<double>(far) / static_cast<double>(zs.size());
  // Binomial standard deviation at n = 600 is about 0.019.
  EXPECT_NEAR(rate, 0.3, 0.06);
}
