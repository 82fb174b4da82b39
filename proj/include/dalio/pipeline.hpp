#pragma once

#include <string>
#include <vector>

#include "dalio/degeneracy.hpp"
#include "dalio/evaluation.hpp"
#include "dalio/graph.hpp"
#include "dalio/scenario.hpp"
#include "dalio/trajectory_io.hpp"

namespace dalio {

struct ScanRecord {
  double timestamp = 0.0;
  Pose pose;
  Categories categories{};
  int iterations = 0;
  std::size_t correspondences = 0;
  bool backend_fused = false;
  double backend_mahalanobis = 0.0;
  double ms = 0.0;  // wall clock for the scan interval, front end plus back end
};

struct WeightRecord {
  double timestamp = 0.0;
  std::size_t factor = 0;
  FactorKind kind = FactorKind::RelativePose;
  double weight = 1.0;
  double mu = 1.0;
};

struct RunResult {
  std::vector<StampedPose> estimate;  // filter posterior: initial pose, then every scan end
  std::vector<StampedPose> smoothed;  // back-end variables at their final estimates
  std::vector<State> truth;           // at IMU rate
  std::vector<double> truth_times;
  std::vector<ScanRecord> scans;
  std::vector<WeightRecord> weights;
  EvalResult eval;
  double max_along_track_error = 0.0;  // m, along the true direction of travel
  std::size_t stale_measurements = 0;
  std::size_t aux_delivered = 0;
  bool diverged = false;
  std::string divergence_reason;
};

/// Test-only variations on a run.
struct RunOverrides {
  bool drop_aux_outliers = false;  // oracle run on the inlier subset of the same stream
};

/// Simulates the scenario and runs the full filter and smoother loop.
RunResult run(const RunConfig& config, const RunOverrides& overrides = {});

std::vector<StampedPose> to_stamped(const std::vector<double>& times, const std::vector<State>& states);

/// max_k |(p_est - p_gt) . v_gt / |v_gt||, nearest-timestamp association within max_dt, no alignment.
double max_along_track_error(const std::vector<StampedPose>& est, const std::vector<double>& times,
                             const std::vector<State>& truth, double max_dt);

/// trajectory.tum, smoothed.tum, ground_truth.tum, localizability.csv, factor_weights.csv, result.json.
void write_artifacts(const RunResult& result, const RunConfig& config, const std::string& dir);

}  // namespace dalio
