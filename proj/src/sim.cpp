#include "dalio/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace dalio::sim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Rect {
  Vec3 corner;
  Vec3 e1, e2;  // unit edge directions
  double a, b;  // edge lengths
  Vec3 normal;
};

std::vector<Rect> rectangles(const Environment& env) {
  const double l = env.length, w = env.width, h = env.height;
  std::vector<Rect> out;
  switch (env.kind) {
    case EnvironmentKind::BoxRoom: {
      const double x0 = -l / 2, y0 = -w / 2;
      out.push_back({{x0, y0, 0.0}, Vec3::UnitX(), Vec3::UnitY(), l, w, Vec3::UnitZ()});
      out.push_back({{x0, y0, h}, Vec3::UnitX(), Vec3::UnitY(), l, w, -Vec3::UnitZ()});
      out.push_back({{x0, y0, 0.0}, Vec3::UnitY(), Vec3::UnitZ(), w, h, Vec3::UnitX()});
      out.push_back({{-x0, y0, 0.0}, Vec3::UnitY(), Vec3::UnitZ(), w, h, -Vec3::UnitX()});
      out.push_back({{x0, y0, 0.0}, Vec3::UnitX(), Vec3::UnitZ(), l, h, Vec3::UnitY()});
      out.push_back({{x0, -y0, 0.0}, Vec3::UnitX(), Vec3::UnitZ(), l, h, -Vec3::UnitY()});
      break;
    }
    case EnvironmentKind::Corridor: {
      const double x0 = -env.start_margin, span = l + env.start_margin;
      out.push_back({{x0, -w / 2, 0.0}, Vec3::UnitX(), Vec3::UnitY(), span, w, Vec3::UnitZ()});
      out.push_back({{x0, -w / 2, h}, Vec3::UnitX(), Vec3::UnitY(), span, w, -Vec3::UnitZ()});
      out.push_back({{x0, -w / 2, 0.0}, Vec3::UnitX(), Vec3::UnitZ(), span, h, Vec3::UnitY()});
      out.push_back({{x0, w / 2, 0.0}, Vec3::UnitX(), Vec3::UnitZ(), span, h, -Vec3::UnitY()});
      break;
    }
    case EnvironmentKind::OpenPlane: {
      const double x0 = -env.start_margin, span = l + env.start_margin;
      out.push_back({{x0, -w / 2, 0.0}, Vec3::UnitX(), Vec3::UnitY(), span, w, Vec3::UnitZ()});
      break;
    }
    case EnvironmentKind::Tunnel:
      break;
  }
  return out;
}

int cells(double extent, double density) {
  return std::max(1, static_cast<int>(std::lround(extent * std::sqrt(density))));
}

// Tube geometry: axis point, in-plane outward direction and arc parameter of the axis foot of q.
struct AxisFoot {
  Vec3 point;
  double s;
};

AxisFoot axis_foot(const Environment& env, const Vec3& q) {
  if (env.curvature == 0.0) return {{q.x(), 0.0, 0.0}, q.x()};
  const double r = 1.0 / env.curvature;
  const Vec3 c(0.0, -r, 0.0);
  Vec3 w(q.x() - c.x(), q.y() - c.y(), 0.0);
  const double n = w.norm();
  if (n < 1e-12) w = Vec3::UnitY();
  else w /= n;
  return {c + r * w, r * std::atan2(w.x(), w.y())};
}

Vec3 axis_point(const Environment& env, double s, Vec3* outward) {
  if (env.curvature == 0.0) {
    *outward = Vec3::UnitY();
    return {s, 0.0, 0.0};
  }
  const double r = 1.0 / env.curvature;
  const double a = s / r;
  *outward = Vec3(std::sin(a), std::cos(a), 0.0);
  return Vec3(0.0, -r, 0.0) + r * *outward;
}

double tube_rho(const Environment& env, const Vec3& q) { return (q - axis_foot(env, q).point).norm(); }

bool tube_in_span(const Environment& env, double s) { return s >= -env.start_margin && s <= env.length; }

std::optional<RayHit> cast_tube(const Environment& env, const Vec3& o, const Vec3& d, double max_range) {
  const double radius = env.tunnel_radius;
  if (tube_rho(env, o) >= radius) return std::nullopt;
  double t = 0.0;
  if (env.curvature == 0.0) {
    const double a = d.y() * d.y() + d.z() * d.z();
    if (a < 1e-15) return std::nullopt;
    const double b = 2.0 * (o.y() * d.y() + o.z() * d.z());
    const double c = o.y() * o.y() + o.z() * o.z() - radius * radius;
    t = (-b + std::sqrt(b * b - 4.0 * a * c)) / (2.0 * a);
  } else {
    // Sphere tracing is exact from inside: r - rho is the distance to the tube wall.
    int it = 0;
    for (; it < 2000; ++it) {
      const double step = radius - tube_rho(env, o + t * d);
      if (step < 1e-11) break;
      t += step;
      if (t > max_range + radius) return std::nullopt;
    }
  }
  if (!(t > 0.0) || t > max_range) return std::nullopt;
  const Vec3 q = o + t * d;
  const AxisFoot foot = axis_foot(env, q);
  if (!tube_in_span(env, foot.s)) return std::nullopt;
  return RayHit{t, q, (foot.point - q).normalized()};
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  engine_.seed(seq);
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::gaussian() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double mag = std::sqrt(-2.0 * std::log(u1));
  spare_ = mag * std::sin(kTwoPi * u2);
  return mag * std::cos(kTwoPi * u2);
}

Vec3 Rng::gaussian3() {
  const double x = gaussian();
  const double y = gaussian();
  const double z = gaussian();
  return {x, y, z};
}

Vec3 Rng::unit_vector() {
  const double z = 2.0 * uniform() - 1.0;
  const double phi = kTwoPi * uniform();
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {s * std::cos(phi), s * std::sin(phi), z};
}

const char* to_string(EnvironmentKind k) {
  switch (k) {
    case EnvironmentKind::BoxRoom: return "box";
    case EnvironmentKind::Corridor: return "corridor";
    case EnvironmentKind::Tunnel: return "tunnel";
    case EnvironmentKind::OpenPlane: return "plane";
  }
  return "unknown";
}

EnvironmentKind environment_kind_from_string(const std::string& s) {
  if (s == "box") return EnvironmentKind::BoxRoom;
  if (s == "corridor") return EnvironmentKind::Corridor;
  if (s == "tunnel") return EnvironmentKind::Tunnel;
  if (s == "plane") return EnvironmentKind::OpenPlane;
  throw std::invalid_argument("unknown environment kind '" + s + "'");
}

void Environment::validate() const {
  if (!(length > 0.0 && width > 0.0 && height > 0.0 && density > 0.0 && start_margin >= 0.0)) {
    throw std::invalid_argument("environment dimensions and density must be positive");
  }
  if (kind == EnvironmentKind::Tunnel) {
    if (!(tunnel_radius > 0.0)) throw std::invalid_argument("tunnel radius must be positive");
    if (curvature < 0.0 || curvature * tunnel_radius >= 1.0) {
      throw std::invalid_argument("tunnel curvature must be in [0, 1/radius)");
    }
  }
}

SampledEnvironment sample_environment(const Environment& env) {
  env.validate();
  SampledEnvironment out;
  if (env.kind == EnvironmentKind::Tunnel) {
    const double span = env.length + env.start_margin;
    const int ns = cells(span, env.density);
    const int na = cells(kTwoPi * env.tunnel_radius, env.density);
    for (int i = 0; i < ns; ++i) {
      const double s = -env.start_margin + (i + 0.5) * span / ns;
      Vec3 outward;
      const Vec3 a = axis_point(env, s, &outward);
      for (int j = 0; j < na; ++j) {
        const double phi = (j + 0.5) * kTwoPi / na;
        const Vec3 radial = std::cos(phi) * outward + std::sin(phi) * Vec3::UnitZ();
        out.points.push_back({a + env.tunnel_radius * radial, -radial, 0});
      }
    }
    out.surface_count = 1;
    return out;
  }
  const auto rects = rectangles(env);
  for (std::size_t k = 0; k < rects.size(); ++k) {
    const Rect& r = rects[k];
    const int n1 = cells(r.a, env.density), n2 = cells(r.b, env.density);
    for (int i = 0; i < n1; ++i) {
      for (int j = 0; j < n2; ++j) {
        const Vec3 p = r.corner + (i + 0.5) * r.a / n1 * r.e1 + (j + 0.5) * r.b / n2 * r.e2;
        out.points.push_back({p, r.normal, static_cast<int>(k)});
      }
    }
  }
  out.surface_count = static_cast<int>(rects.size());
  return out;
}

std::optional<RayHit> cast_ray(const Environment& env, const Vec3& origin, const Vec3& direction, double max_range) {
  if (env.kind == EnvironmentKind::Tunnel) return cast_tube(env, origin, direction, max_range);
  std::optional<RayHit> best;
  for (const Rect& r : rectangles(env)) {
    const double denom = r.normal.dot(direction);
    if (std::abs(denom) < 1e-12) continue;
    const double t = r.normal.dot(r.corner - origin) / denom;
    if (!(t > 1e-9) || t > max_range || (best && t >= best->range)) continue;
    const Vec3 q = origin + t * direction;
    const double s1 = (q - r.corner).dot(r.e1), s2 = (q - r.corner).dot(r.e2);
    if (s1 < 0.0 || s1 > r.a || s2 < 0.0 || s2 > r.b) continue;
    // Snap the in-plane coordinate so the hit lies on the plane to rounding.
    Vec3 on = q - r.normal * r.normal.dot(q - r.corner);
    best = RayHit{t, on, r.normal};
  }
  return best;
}

double surface_distance(const Environment& env, const Vec3& p) {
  if (env.kind == EnvironmentKind::Tunnel) return std::abs(tube_rho(env, p) - env.tunnel_radius);
  double best = std::numeric_limits<double>::infinity();
  for (const Rect& r : rectangles(env)) {
    const Vec3 d = p - r.corner;
    const double s1 = std::clamp(d.dot(r.e1), 0.0, r.a), s2 = std::clamp(d.dot(r.e2), 0.0, r.b);
    best = std::min(best, (d - s1 * r.e1 - s2 * r.e2).norm());
  }
  return best;
}

void TrajectorySpec::validate() const {
  if (!(duration > 0.0 && imu_rate > 0.0 && scan_rate > 0.0)) {
    throw std::invalid_argument("trajectory duration and rates must be positive");
  }
  imu_per_scan();
}

int TrajectorySpec::imu_per_scan() const {
  const double ratio = imu_rate / scan_rate;
  const long n = std::lround(ratio);
  if (n < 1 || std::abs(ratio - static_cast<double>(n)) > 1e-9) {
    throw std::invalid_argument("IMU rate must be an integer multiple of the scan rate");
  }
  return static_cast<int>(n);
}

Kinematics evaluate_trajectory(const TrajectorySpec& spec, double t) {
  const Mat3 r0 = rot_exp(Vec3(0.0, 0.0, spec.start_yaw)).matrix();
  const Vec3& w = spec.angular_velocity;
  const Vec3& v = spec.linear_velocity;
  const Mat3 r1 = r0 * rot_exp(w * t).matrix();
  const Vec3 p1 = spec.start_position + r0 * (left_jacobian(w * t) * (v * t));

  Vec3 phi, dphi, p2, dp2, ddp2;
  for (int k = 0; k < 3; ++k) {
    const double fr = kTwoPi * spec.wobble_rotation_frequency(k);
    const double ar = spec.wobble_rotation_amplitude(k);
    phi(k) = ar * std::sin(fr * t);
    dphi(k) = ar * fr * std::cos(fr * t);
    const double fp = kTwoPi * spec.wobble_position_frequency(k);
    const double ap = spec.wobble_position_amplitude(k);
    p2(k) = ap * std::sin(fp * t);
    dp2(k) = ap * fp * std::cos(fp * t);
    ddp2(k) = -ap * fp * fp * std::sin(fp * t);
  }
  const Mat3 r2 = rot_exp(phi).matrix();

  Kinematics k;
  k.timestamp = t;
  k.rotation = Rotation::from_matrix_projected(r1 * r2);
  k.position = p1 + r1 * p2;
  k.velocity = r1 * (v + w.cross(p2) + dp2);
  k.acceleration = r1 * (w.cross(v) + w.cross(w.cross(p2)) + 2.0 * w.cross(dp2) + ddp2);
  k.angular_velocity = r2.transpose() * w + right_jacobian(phi) * dphi;
  return k;
}

ImuStream simulate_imu(const TrajectorySpec& traj, const ImuSimParams& params, std::uint64_t seed) {
  traj.validate();
  params.noise.validate();
  Rng rng(seed, 1);
  const auto count = static_cast<std::int64_t>(std::llround(traj.duration * traj.imu_rate));
  const double dt = 1.0 / traj.imu_rate;
  ImuStream out;
  out.samples.reserve(count + 1);
  out.truth.reserve(count + 1);
  Vec3 bg = params.initial_gyro_bias, ba = params.initial_accel_bias;
  const double sg = params.noise.gyro_noise / std::sqrt(dt), sa = params.noise.accel_noise / std::sqrt(dt);
  const double wg = params.noise.gyro_bias_walk * std::sqrt(dt), wa = params.noise.accel_bias_walk * std::sqrt(dt);
  for (std::int64_t k = 0; k <= count; ++k) {
    const double t = imu_time(traj, k);
    const Kinematics kin = evaluate_trajectory(traj, t);
    ImuSample s;
    s.timestamp = t;
    s.angular_velocity = kin.angular_velocity + bg;
    s.linear_acceleration = kin.rotation.inverse() * (kin.acceleration - params.gravity) + ba;
    if (!params.noiseless) {
      s.angular_velocity += sg * rng.gaussian3();
      s.linear_acceleration += sa * rng.gaussian3();
    }
    out.samples.push_back(s);

    State x;
    x.rotation = kin.rotation;
    x.position = kin.position;
    x.velocity = kin.velocity;
    x.gyro_bias = bg;
    x.accel_bias = ba;
    x.gravity = params.gravity;
    out.truth.push_back(x);

    if (!params.noiseless) {
      bg += wg * rng.gaussian3();
      ba += wa * rng.gaussian3();
    }
  }
  return out;
}

std::vector<Scan> simulate_lidar(const TrajectorySpec& traj, const Environment& env, const LidarSimParams& params,
                                 std::uint64_t seed) {
  traj.validate();
  env.validate();
  if (params.points_per_scan < 1) throw std::invalid_argument("points per scan must be positive");
  Rng rng(seed, 2);
  const int per_scan = traj.imu_per_scan();
  const auto imu_count = static_cast<std::int64_t>(std::llround(traj.duration * traj.imu_rate));
  std::vector<Scan> scans;
  for (std::int64_t end = per_scan; end <= imu_count; end += per_scan) {
    const double t0 = imu_time(traj, end - per_scan), t1 = imu_time(traj, end);
    Scan scan;
    scan.end_time = t1;
    scan.points.reserve(params.points_per_scan);
    for (int i = 0; i < params.points_per_scan; ++i) {
      const double t = i + 1 == params.points_per_scan ? t1 : t0 + (i + 1) * (t1 - t0) / params.points_per_scan;
      const Vec3 dir = rng.unit_vector();
      const double noise = rng.gaussian();
      const Kinematics kin = evaluate_trajectory(traj, t);
      const Pose world_from_lidar = Pose{kin.rotation, kin.position} * params.imu_from_lidar;
      const auto hit = cast_ray(env, world_from_lidar.translation, world_from_lidar.rotation * dir, params.max_range);
      if (!hit) continue;
      const double range = hit->range + params.range_noise * noise;
      if (range < params.min_range || range > params.max_range) continue;
      scan.points.push_back({dir * range, t});
    }
    scans.push_back(std::move(scan));
  }
  return scans;
}

void OutlierSpec::validate() const {
  if (!(probability >= 0.0 && probability < 1.0)) throw std::invalid_argument("outlier probability must be in [0, 1)");
  if (translation < 0.0 || rotation < 0.0) throw std::invalid_argument("outlier magnitudes must be non-negative");
}

std::vector<AuxMeasurement> simulate_aux_odometry(const TrajectorySpec& traj, const AuxOdometryParams& params,
                                                  std::uint64_t seed) {
  traj.validate();
  params.outliers.validate();
  if (!(params.rate > 0.0) || params.latency < 0.0) throw std::invalid_argument("invalid auxiliary odometry timing");
  const double ratio = traj.imu_rate / params.rate;
  const long step = std::lround(ratio);
  if (step < 1 || std::abs(ratio - static_cast<double>(step)) > 1e-9) {
    throw std::invalid_argument("IMU rate must be an integer multiple of the odometry rate");
  }
  Rng noise(seed, 3), gross(seed, 4);
  const auto imu_count = static_cast<std::int64_t>(std::llround(traj.duration * traj.imu_rate));
  std::vector<AuxMeasurement> out;
  for (std::int64_t b = step; b <= imu_count; b += step) {
    AuxMeasurement m;
    m.t_a = imu_time(traj, b - step);
    m.t_b = imu_time(traj, b);
    const Kinematics ka = evaluate_trajectory(traj, m.t_a), kb = evaluate_trajectory(traj, m.t_b);
    Pose rel = Pose{ka.rotation, ka.position}.inverse() * Pose{kb.rotation, kb.position};
    rel.rotation = rel.rotation * rot_exp(params.rotation_noise * noise.gaussian3());
    rel.translation += params.translation_noise * noise.gaussian3();
    const double u = gross.uniform();
    const Vec3 dir_t = gross.unit_vector(), dir_r = gross.unit_vector();
    if (u < params.outliers.probability) {
      m.outlier = true;
      rel.translation += params.outliers.translation * dir_t;
      rel.rotation = rel.rotation * rot_exp(params.outliers.rotation * dir_r);
    }
    m.relative = rel;
    m.arrival = m.t_b + params.latency;
    out.push_back(m);
  }
  return out;
}

}  // namespace dalio::sim
