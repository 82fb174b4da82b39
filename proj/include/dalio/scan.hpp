#pragma once

#include <vector>

#include "dalio/manifold.hpp"

namespace dalio {

/// One LiDAR return in the sensor frame at its emission time.
struct ScanPoint {
  Vec3 position = Vec3::Zero();
  double timestamp = 0.0;
};

/// A LiDAR sweep. Point timestamps never exceed `end_time`.
struct Scan {
  std::vector<ScanPoint> points;
  double end_time = 0.0;
};

}  // namespace dalio
