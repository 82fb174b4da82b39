#include "dalio/trajectory_io.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dalio {

void write_tum(std::ostream& out, const std::vector<StampedPose>& poses) {
  const auto flags = out.flags();
  const auto prec = out.precision(17);
  for (const StampedPose& s : poses) {
    const Eigen::Quaterniond q = s.pose.rotation.quaternion();
    const Vec3& t = s.pose.translation;
    out << s.timestamp << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' ' << q.y() << ' '
        << q.z() << ' ' << q.w() << '\n';
  }
  out.precision(prec);
  out.flags(flags);
}

std::vector<StampedPose> read_tum(std::istream& in) {
  std::vector<StampedPose> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    double v[8];
    for (double& x : v) {
      if (!(row >> x) || !std::isfinite(x)) {
        throw std::runtime_error("malformed TUM row at line " + std::to_string(number));
      }
    }
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > 1e-6) {
      throw std::runtime_error("non-unit quaternion at line " + std::to_string(number));
    }
    out.push_back({v[0], {Rotation::from_quaternion(q), Vec3(v[1], v[2], v[3])}});
  }
  return out;
}

}  // namespace dalio
