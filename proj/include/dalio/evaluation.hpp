#pragma once

#include <vector>

#include "dalio/manifold.hpp"
#include "dalio/trajectory_io.hpp"

namespace dalio {

struct EvalResult {
  double ate_rmse = 0.0;                 // m
  Vec3 axis_rmse = Vec3::Zero();         // m, per world axis
  double max_error = 0.0;                // m
  std::size_t associated = 0;            // poses entering the RMSE (anchor excluded)
  double mean_scan_ms = 0.0;             // filled by the pipeline
  double max_scan_ms = 0.0;
};

/// Aligns `est` to `gt` with the rigid transform that maps the first associated estimate onto its
/// ground truth, then takes the RMSE over the remaining associated translations. Association is by
/// nearest timestamp within `max_dt`. Throws std::invalid_argument when nothing associates.
EvalResult evaluate_ate(const std::vector<StampedPose>& est, const std::vector<StampedPose>& gt, double max_dt);

/// Same alignment, returning the aligned estimates paired with their ground truth.
std::vector<std::pair<StampedPose, StampedPose>> align_first_pose(const std::vector<StampedPose>& est,
                                                                  const std::vector<StampedPose>& gt,
                                                                  double max_dt);

}  // namespace dalio
