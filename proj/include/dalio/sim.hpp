#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dalio/inertial.hpp"
#include "dalio/manifold.hpp"
#include "dalio/scan.hpp"

namespace dalio::sim {

/// Seeded generator for one sensor stream. Gaussian draws use Box-Muller on the raw 64-bit
/// engine output so streams are reproducible across standard libraries.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);
  double uniform();  // [0, 1)
  double gaussian();
  Vec3 gaussian3();
  Vec3 unit_vector();

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

enum class EnvironmentKind { BoxRoom, Corridor, Tunnel, OpenPlane };

const char* to_string(EnvironmentKind k);
EnvironmentKind environment_kind_from_string(const std::string& s);

/// All geometry before any pose transform. Box room spans [-L/2, L/2] x [-W/2, W/2] x [0, H].
/// Corridor and tunnel run along +x from x = -start_margin; the corridor has walls at y = +-W/2,
/// floor z = 0 and ceiling z = H; the tunnel is a tube around an axis through the origin that
/// curves towards -y with the given curvature. The open plane is z = 0.
struct Environment {
  EnvironmentKind kind = EnvironmentKind::BoxRoom;
  double length = 10.0;
  double width = 10.0;
  double height = 3.0;
  double tunnel_radius = 3.0;
  double curvature = 0.0;  // 1/m
  double start_margin = 20.0;
  double density = 10.0;   // points per m^2

  void validate() const;
};

struct SurfacePoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();  // unit, pointing into free space
  int surface = 0;
};

struct SampledEnvironment {
  std::vector<SurfacePoint> points;
  int surface_count = 0;
};

/// Grid sampling at the requested density with exact normals attached.
SampledEnvironment sample_environment(const Environment& env);

struct RayHit {
  double range = 0.0;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

/// First surface hit along a unit direction, within max_range.
std::optional<RayHit> cast_ray(const Environment& env, const Vec3& origin, const Vec3& direction, double max_range);

/// Unsigned distance from a point to the nearest environment surface.
double surface_distance(const Environment& env, const Vec3& p);

/// Constant body twist composed with a sinusoidal body-frame wobble:
/// T(t) = T0 Exp(xi t) [Exp(phi(t)) | d(t)], phi_k = A_k sin(2 pi f_k t), d_k = B_k sin(2 pi g_k t).
struct TrajectorySpec {
  Vec3 start_position = Vec3::Zero();
  double start_yaw = 0.0;
  Vec3 angular_velocity = Vec3::Zero();  // rad/s, body
  Vec3 linear_velocity = Vec3::Zero();   // m/s, body
  Vec3 wobble_rotation_amplitude = Vec3::Zero();
  Vec3 wobble_rotation_frequency = Vec3::Zero();
  Vec3 wobble_position_amplitude = Vec3::Zero();
  Vec3 wobble_position_frequency = Vec3::Zero();
  double duration = 10.0;
  double imu_rate = 200.0;
  double scan_rate = 10.0;

  void validate() const;
  /// IMU samples per scan period; throws unless the rates divide evenly.
  int imu_per_scan() const;
};

struct Kinematics {
  double timestamp = 0.0;
  Rotation rotation;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();          // world
  Vec3 acceleration = Vec3::Zero();      // world
  Vec3 angular_velocity = Vec3::Zero();  // body
};

Kinematics evaluate_trajectory(const TrajectorySpec& spec, double t);

/// Time of IMU sample k, computed the same way everywhere so scan and node times coincide exactly.
inline double imu_time(const TrajectorySpec& spec, std::int64_t k) { return static_cast<double>(k) / spec.imu_rate; }

struct ImuSimParams {
  NoiseParams noise;
  Vec3 initial_gyro_bias = Vec3::Zero();
  Vec3 initial_accel_bias = Vec3::Zero();
  bool noiseless = false;
  Vec3 gravity{0.0, 0.0, -9.81};
};

struct ImuStream {
  std::vector<ImuSample> samples;
  std::vector<State> truth;  // same timestamps, with the true biases
};

ImuStream simulate_imu(const TrajectorySpec& traj, const ImuSimParams& params, std::uint64_t seed);

struct LidarSimParams {
  int points_per_scan = 1000;
  double range_noise = 0.01;  // m
  double min_range = 0.5;
  double max_range = 30.0;
  Pose imu_from_lidar;
};

/// One scan per period ending at IMU sample times; point timestamps spread over the sweep and
/// the last point at the scan end.
std::vector<Scan> simulate_lidar(const TrajectorySpec& traj, const Environment& env, const LidarSimParams& params,
                                 std::uint64_t seed);

struct OutlierSpec {
  double probability = 0.0;
  double translation = 20.0;  // m
  double rotation = 0.0;      // rad

  void validate() const;
};

struct AuxOdometryParams {
  double rate = 10.0;
  double translation_noise = 0.01;  // m per measurement
  double rotation_noise = 1e-3;     // rad per measurement
  OutlierSpec outliers;
  double latency = 0.0;  // s
};

struct AuxMeasurement {
  Pose relative;  // T_a^-1 T_b of the IMU frame
  double t_a = 0.0;
  double t_b = 0.0;
  double arrival = 0.0;
  bool outlier = false;
};

std::vector<AuxMeasurement> simulate_aux_odometry(const TrajectorySpec& traj, const AuxOdometryParams& params,
                                                  std::uint64_t seed);

}  // namespace dalio::sim
