#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "dalio/degeneracy.hpp"
#include "dalio/sim.hpp"

namespace dalio {

/// Everything the simulators need for one experiment.
struct Scenario {
  std::string name = "box";
  std::uint64_t seed = 0;
  sim::Environment environment;
  sim::TrajectorySpec trajectory;
  sim::ImuSimParams imu;
  sim::LidarSimParams lidar;
  bool aux_enabled = true;
  sim::AuxOdometryParams aux;

  void validate() const;
};

/// Built-in scenarios: box room, straight corridor, right-curving tunnel, open plane.
Scenario default_scenario(sim::EnvironmentKind kind);

/// Parses a scenario document. Missing keys take the defaults of the named environment kind;
/// unknown keys are rejected with std::invalid_argument.
Scenario parse_scenario(std::string_view json_text);
std::string scenario_to_json(const Scenario& s);

struct EstimatorToggles {
  bool constraints = true;
  bool gnc = true;
  bool backend_prior = true;
};

struct RunConfig {
  Scenario scenario;
  std::string scenario_path;  // empty when the scenario is inline
  EstimatorToggles toggles;
  LocalizabilityThresholds thresholds;
  double window = 1.0;  // s
  std::string output_dir = "out";

  // Estimator tuning with defaults matched to the built-in scenarios.
  double point_noise = 0.02;              // m
  double lidar_rotation_sigma = 2e-3;     // rad, per scan-to-scan factor
  double lidar_translation_sigma = 0.02;  // m
  double degenerate_rotation_sigma = 1.0;     // rad, added along unconstrained rotation directions
  double degenerate_translation_sigma = 10.0; // m, added along unconstrained translation directions
  double aux_rotation_sigma = 0.0;        // 0 uses the scenario noise
  double aux_translation_sigma = 0.0;
  double kernel_scale = 18.0;
  double backend_gate = 0.0;              // chi-square gate on back-end pose fusion, 0 fuses unconditionally
  double map_voxel = 0.2;                 // m
  int spline_stride = 4;                  // IMU samples between spline control poses
  double initial_rotation_sigma = 1e-3;
  double initial_position_sigma = 1e-3;
  double initial_velocity_sigma = 1e-2;
  double initial_gyro_bias_sigma = 1e-2;
  double initial_accel_bias_sigma = 0.1;
  double gravity_sigma = 1e-4;

  void validate() const;
};

/// Parses a run configuration. `scenario` may be an inline object or a path resolved against
/// `base_dir`; a missing scenario is an error.
RunConfig parse_run_config(std::string_view json_text, const std::string& base_dir = ".");

}  // namespace dalio
