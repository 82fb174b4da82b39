#include "dalio/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dalio {

std::vector<std::pair<StampedPose, StampedPose>> align_first_pose(const std::vector<StampedPose>& est,
                                                                  const std::vector<StampedPose>& gt,
                                                                  double max_dt) {
  std::vector<StampedPose> sorted = gt;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  std::vector<std::pair<StampedPose, StampedPose>> pairs;
  for (const StampedPose& e : est) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), e.timestamp,
                                     [](const StampedPose& s, double t) { return s.timestamp < t; });
    const StampedPose* best = nullptr;
    if (it != sorted.end()) best = &*it;
    if (it != sorted.begin()) {
      const StampedPose* prev = &*std::prev(it);
      if (best == nullptr || e.timestamp - prev->timestamp <= best->timestamp - e.timestamp) best = prev;
    }
    if (best != nullptr && std::abs(best->timestamp - e.timestamp) <= max_dt) pairs.emplace_back(e, *best);
  }
  if (pairs.empty()) throw std::invalid_argument("no overlapping timestamps between estimate and ground truth");
  const Pose align = pairs.front().second.pose * pairs.front().first.pose.inverse();
  for (auto& p : pairs) p.first.pose = align * p.first.pose;
  return pairs;
}

EvalResult evaluate_ate(const std::vector<StampedPose>& est, const std::vector<StampedPose>& gt, double max_dt) {
  const auto pairs = align_first_pose(est, gt, max_dt);
  EvalResult r;
  Vec3 sq = Vec3::Zero();
  for (std::size_t k = 1; k < pairs.size(); ++k) {
    const Vec3 d = pairs[k].first.pose.translation - pairs[k].second.pose.translation;
    sq += d.cwiseAbs2();
    r.max_error = std::max(r.max_error, d.norm());
  }
  r.associated = pairs.size() - 1;
  if (r.associated > 0) {
    const double n = static_cast<double>(r.associated);
    r.axis_rmse = (sq / n).cwiseSqrt();
    r.ate_rmse = std::sqrt(sq.sum() / n);
  }
  return r;
}

}  // namespace dalio
