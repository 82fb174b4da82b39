#pragma once

#include <iosfwd>
#include <vector>

#include "dalio/manifold.hpp"

namespace dalio {

struct StampedPose {
  double timestamp = 0.0;
  Pose pose;
};

/// "timestamp tx ty tz qx qy qz qw" rows at 17 significant digits.
void write_tum(std::ostream& out, const std::vector<StampedPose>& poses);

/// Skips blank lines and '#' comments. Throws std::runtime_error with the line number on malformed rows.
std::vector<StampedPose> read_tum(std::istream& in);

}  // namespace dalio
