#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "dalio/registration.hpp"

namespace dalio {

namespace {

constexpr std::int64_t kBias = 1 << 20;

std::vector<Vec3> take_nearest(std::vector<std::pair<double, std::uint32_t>>& cand, const std::vector<Vec3>& pts,
                               int k) {
  const std::size_t n = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n), cand.end());
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(pts[cand[i].second]);
  return out;
}

}  // namespace

PointMap::PointMap(double cell_size) : cell_(cell_size) {
  if (!(cell_size > 0.0)) throw std::invalid_argument("map cell size must be positive");
}

std::int64_t PointMap::key(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
  return ((ix + kBias) << 42) | ((iy + kBias) << 21) | (iz + kBias);
}

std::int64_t PointMap::key(const Vec3& p) const {
  return key(static_cast<std::int64_t>(std::floor(p.x() / cell_)), static_cast<std::int64_t>(std::floor(p.y() / cell_)),
             static_cast<std::int64_t>(std::floor(p.z() / cell_)));
}

void PointMap::add(std::span<const Vec3> points) {
  points_.reserve(points_.size() + points.size());
  for (const Vec3& p : points) {
    if (!p.allFinite()) continue;
    cells_[key(p)].push_back(static_cast<std::uint32_t>(points_.size()));
    points_.push_back(p);
  }
}

std::vector<Vec3> PointMap::nearest(const Vec3& query, int k, double radius) const {
  radius = std::min(radius, cell_);
  const double r2 = radius * radius;
  const auto cx = static_cast<std::int64_t>(std::floor(query.x() / cell_));
  const auto cy = static_cast<std::int64_t>(std::floor(query.y() / cell_));
  const auto cz = static_cast<std::int64_t>(std::floor(query.z() / cell_));
  std::vector<std::pair<double, std::uint32_t>> cand;
  for (std::int64_t dx = -1; dx <= 1; ++dx) {
    for (std::int64_t dy = -1; dy <= 1; ++dy) {
      for (std::int64_t dz = -1; dz <= 1; ++dz) {
        const auto it = cells_.find(key(cx + dx, cy + dy, cz + dz));
        if (it == cells_.end()) continue;
        for (std::uint32_t idx : it->second) {
          const double d2 = (points_[idx] - query).squaredNorm();
          if (d2 <= r2) cand.emplace_back(d2, idx);
        }
      }
    }
  }
  return take_nearest(cand, points_, k);
}

std::vector<Vec3> PointMap::nearest_brute_force(const Vec3& query, int k, double radius) const {
  const double r2 = radius * radius;
  std::vector<std::pair<double, std::uint32_t>> cand;
  for (std::uint32_t i = 0; i < points_.size(); ++i) {
    const double d2 = (points_[i] - query).squaredNorm();
    if (d2 <= r2) cand.emplace_back(d2, i);
  }
  return take_nearest(cand, points_, k);
}

void PointMap::write_ply(std::ostream& out) const {
  out << "ply\nformat ascii 1.0\nelement vertex " << points_.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  out.precision(9);
  for (const Vec3& p : points_) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

}  // namespace dalio
