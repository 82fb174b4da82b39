#include "dalio/scenario.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dalio {

using nlohmann::json;

namespace {

void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw std::invalid_argument(std::string(where) + " must be an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (std::string_view a : allowed) ok = ok || item.key() == a;
    if (!ok) throw std::invalid_argument("unknown key '" + item.key() + "' in " + std::string(where));
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad value for '") + key + "': " + e.what());
  }
}

void read_vec(const json& obj, const char* key, Vec3& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_array() || v.size() != 3) throw std::invalid_argument(std::string("'") + key + "' must be a 3-array");
  for (int k = 0; k < 3; ++k) out(k) = v.at(k).get<double>();
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Pose read_pose(const json& obj, Pose base) {
  check_keys(obj, "extrinsic", {"translation", "rotation_vector"});
  Vec3 rv = rot_log(base.rotation);
  read_vec(obj, "translation", base.translation);
  read_vec(obj, "rotation_vector", rv);
  base.rotation = rot_exp(rv);
  return base;
}

}  // namespace

void Scenario::validate() const {
  environment.validate();
  trajectory.validate();
  imu.noise.validate();
  aux.outliers.validate();
  if (lidar.points_per_scan < 1) throw std::invalid_argument("points_per_scan must be positive");
  if (!(lidar.max_range > lidar.min_range && lidar.min_range >= 0.0)) throw std::invalid_argument("bad LiDAR range");
  if (lidar.range_noise < 0.0) throw std::invalid_argument("range noise must be non-negative");
  if (aux_enabled && !(aux.rate > 0.0)) throw std::invalid_argument("auxiliary odometry rate must be positive");
}

Scenario default_scenario(sim::EnvironmentKind kind) {
  Scenario s;
  s.name = sim::to_string(kind);
  s.environment.kind = kind;
  s.imu.initial_gyro_bias = Vec3(2e-3, -1e-3, 1.5e-3);
  s.imu.initial_accel_bias = Vec3(0.02, -0.015, 0.01);
  s.lidar.imu_from_lidar.translation = Vec3(0.1, 0.0, 0.05);
  auto& t = s.trajectory;
  switch (kind) {
    case sim::EnvironmentKind::BoxRoom:
      s.environment.length = 10.0;
      s.environment.width = 10.0;
      s.environment.height = 3.0;
      t.start_position = Vec3(0.0, -2.0, 1.5);
      t.angular_velocity = Vec3(0.0, 0.0, 0.5);
      t.linear_velocity = Vec3(1.0, 0.0, 0.0);
      t.wobble_rotation_amplitude = Vec3(0.05, 0.05, 0.0);
      t.wobble_rotation_frequency = Vec3(0.3, 0.4, 0.0);
      t.wobble_position_amplitude = Vec3(0.0, 0.0, 0.2);
      t.wobble_position_frequency = Vec3(0.0, 0.0, 0.25);
      t.duration = 20.0;
      break;
    case sim::EnvironmentKind::Corridor:
      s.environment.length = 100.0;
      s.environment.width = 3.0;
      s.environment.height = 3.0;
      t.start_position = Vec3(0.0, 0.0, 1.5);
      t.linear_velocity = Vec3(1.0, 0.0, 0.0);
      t.wobble_rotation_amplitude = Vec3(0.02, 0.02, 0.03);
      t.wobble_rotation_frequency = Vec3(0.3, 0.4, 0.2);
      t.wobble_position_amplitude = Vec3(0.0, 0.2, 0.1);
      t.wobble_position_frequency = Vec3(0.0, 0.15, 0.25);
      t.duration = 30.0;
      break;
    case sim::EnvironmentKind::Tunnel:
      s.environment.length = 200.0;
      s.environment.tunnel_radius = 3.0;
      s.environment.curvature = 0.01;
      t.start_position = Vec3(0.0, 0.0, -1.0);
      t.linear_velocity = Vec3(2.0, 0.0, 0.0);
      t.angular_velocity = Vec3(0.0, 0.0, -2.0 * 0.01);
      t.wobble_rotation_amplitude = Vec3(0.02, 0.02, 0.02);
      t.wobble_rotation_frequency = Vec3(0.3, 0.4, 0.2);
      t.wobble_position_amplitude = Vec3(0.0, 0.2, 0.1);
      t.wobble_position_frequency = Vec3(0.0, 0.15, 0.25);
      t.duration = 60.0;
      break;
    case sim::EnvironmentKind::OpenPlane:
      s.environment.length = 100.0;
      s.environment.width = 100.0;
      t.start_position = Vec3(0.0, 0.0, 1.5);
      t.linear_velocity = Vec3(1.0, 0.0, 0.0);
      t.angular_velocity = Vec3(0.0, 0.0, 0.05);
      t.wobble_rotation_amplitude = Vec3(0.03, 0.03, 0.0);
      t.wobble_rotation_frequency = Vec3(0.3, 0.4, 0.0);
      t.duration = 20.0;
      break;
  }
  return s;
}

Scenario parse_scenario(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario is not valid JSON: ") + e.what());
  }
  check_keys(doc, "scenario", {"name", "seed", "environment", "trajectory", "imu", "lidar", "aux_odometry"});
  std::string kind = "box";
  if (doc.contains("environment")) read(doc.at("environment"), "kind", kind);
  Scenario s = default_scenario(sim::environment_kind_from_string(kind));
  read(doc, "name", s.name);
  read(doc, "seed", s.seed);

  if (doc.contains("environment")) {
    const json& e = doc.at("environment");
    check_keys(e, "environment",
               {"kind", "length", "width", "height", "radius", "curvature", "start_margin", "density"});
    read(e, "length", s.environment.length);
    read(e, "width", s.environment.width);
    read(e, "height", s.environment.height);
    read(e, "radius", s.environment.tunnel_radius);
    read(e, "curvature", s.environment.curvature);
    read(e, "start_margin", s.environment.start_margin);
    read(e, "density", s.environment.density);
  }
  if (doc.contains("trajectory")) {
    const json& t = doc.at("trajectory");
    check_keys(t, "trajectory",
               {"start_position", "start_yaw", "angular_velocity", "linear_velocity", "wobble_rotation_amplitude",
                "wobble_rotation_frequency", "wobble_position_amplitude", "wobble_position_frequency", "duration",
                "imu_rate", "scan_rate"});
    auto& tr = s.trajectory;
    read_vec(t, "start_position", tr.start_position);
    read(t, "start_yaw", tr.start_yaw);
    read_vec(t, "angular_velocity", tr.angular_velocity);
    read_vec(t, "linear_velocity", tr.linear_velocity);
    read_vec(t, "wobble_rotation_amplitude", tr.wobble_rotation_amplitude);
    read_vec(t, "wobble_rotation_frequency", tr.wobble_rotation_frequency);
    read_vec(t, "wobble_position_amplitude", tr.wobble_position_amplitude);
    read_vec(t, "wobble_position_frequency", tr.wobble_position_frequency);
    read(t, "duration", tr.duration);
    read(t, "imu_rate", tr.imu_rate);
    read(t, "scan_rate", tr.scan_rate);
  }
  if (doc.contains("imu")) {
    const json& i = doc.at("imu");
    check_keys(i, "imu",
               {"gyro_noise", "accel_noise", "gyro_bias_walk", "accel_bias_walk", "initial_gyro_bias",
                "initial_accel_bias", "noiseless", "gravity"});
    read(i, "gyro_noise", s.imu.noise.gyro_noise);
    read(i, "accel_noise", s.imu.noise.accel_noise);
    read(i, "gyro_bias_walk", s.imu.noise.gyro_bias_walk);
    read(i, "accel_bias_walk", s.imu.noise.accel_bias_walk);
    read_vec(i, "initial_gyro_bias", s.imu.initial_gyro_bias);
    read_vec(i, "initial_accel_bias", s.imu.initial_accel_bias);
    read(i, "noiseless", s.imu.noiseless);
    read_vec(i, "gravity", s.imu.gravity);
  }
  if (doc.contains("lidar")) {
    const json& l = doc.at("lidar");
    check_keys(l, "lidar", {"points_per_scan", "range_noise", "min_range", "max_range", "extrinsic"});
    read(l, "points_per_scan", s.lidar.points_per_scan);
    read(l, "range_noise", s.lidar.range_noise);
    read(l, "min_range", s.lidar.min_range);
    read(l, "max_range", s.lidar.max_range);
    if (l.contains("extrinsic")) s.lidar.imu_from_lidar = read_pose(l.at("extrinsic"), s.lidar.imu_from_lidar);
  }
  if (doc.contains("aux_odometry")) {
    const json& a = doc.at("aux_odometry");
    check_keys(a, "aux_odometry",
               {"enabled", "rate", "translation_noise", "rotation_noise", "outlier_probability",
                "outlier_translation", "outlier_rotation", "latency"});
    read(a, "enabled", s.aux_enabled);
    read(a, "rate", s.aux.rate);
    read(a, "translation_noise", s.aux.translation_noise);
    read(a, "rotation_noise", s.aux.rotation_noise);
    read(a, "outlier_probability", s.aux.outliers.probability);
    read(a, "outlier_translation", s.aux.outliers.translation);
    read(a, "outlier_rotation", s.aux.outliers.rotation);
    read(a, "latency", s.aux.latency);
  }
  s.validate();
  return s;
}

std::string scenario_to_json(const Scenario& s) {
  const auto& e = s.environment;
  const auto& t = s.trajectory;
  json doc;
  doc["name"] = s.name;
  doc["seed"] = s.seed;
  doc["environment"] = {{"kind", sim::to_string(e.kind)}, {"length", e.length},       {"width", e.width},
                        {"height", e.height},             {"radius", e.tunnel_radius}, {"curvature", e.curvature},
                        {"start_margin", e.start_margin}, {"density", e.density}};
  doc["trajectory"] = {{"start_position", vec_json(t.start_position)},
                       {"start_yaw", t.start_yaw},
                       {"angular_velocity", vec_json(t.angular_velocity)},
                       {"linear_velocity", vec_json(t.linear_velocity)},
                       {"wobble_rotation_amplitude", vec_json(t.wobble_rotation_amplitude)},
                       {"wobble_rotation_frequency", vec_json(t.wobble_rotation_frequency)},
                       {"wobble_position_amplitude", vec_json(t.wobble_position_amplitude)},
                       {"wobble_position_frequency", vec_json(t.wobble_position_frequency)},
                       {"duration", t.duration},
                       {"imu_rate", t.imu_rate},
                       {"scan_rate", t.scan_rate}};
  doc["imu"] = {{"gyro_noise", s.imu.noise.gyro_noise},
                {"accel_noise", s.imu.noise.accel_noise},
                {"gyro_bias_walk", s.imu.noise.gyro_bias_walk},
                {"accel_bias_walk", s.imu.noise.accel_bias_walk},
                {"initial_gyro_bias", vec_json(s.imu.initial_gyro_bias)},
                {"initial_accel_bias", vec_json(s.imu.initial_accel_bias)},
                {"noiseless", s.imu.noiseless},
                {"gravity", vec_json(s.imu.gravity)}};
  doc["lidar"] = {{"points_per_scan", s.lidar.points_per_scan},
                  {"range_noise", s.lidar.range_noise},
                  {"min_range", s.lidar.min_range},
                  {"max_range", s.lidar.max_range},
                  {"extrinsic",
                   {{"translation", vec_json(s.lidar.imu_from_lidar.translation)},
                    {"rotation_vector", vec_json(rot_log(s.lidar.imu_from_lidar.rotation))}}}};
  doc["aux_odometry"] = {{"enabled", s.aux_enabled},
                         {"rate", s.aux.rate},
                         {"translation_noise", s.aux.translation_noise},
                         {"rotation_noise", s.aux.rotation_noise},
                         {"outlier_probability", s.aux.outliers.probability},
                         {"outlier_translation", s.aux.outliers.translation},
                         {"outlier_rotation", s.aux.outliers.rotation},
                         {"latency", s.aux.latency}};
  return doc.dump(2) + "\n";
}

void RunConfig::validate() const {
  scenario.validate();
  thresholds.validate();
  if (!(window > 0.0)) throw std::invalid_argument("window must be positive");
  const double positives[] = {point_noise,           lidar_rotation_sigma,      lidar_translation_sigma,
                              degenerate_rotation_sigma, degenerate_translation_sigma, kernel_scale,
                              map_voxel,             initial_rotation_sigma,    initial_position_sigma,
                              initial_velocity_sigma, initial_gyro_bias_sigma,  initial_accel_bias_sigma,
                              gravity_sigma};
  for (double v : positives) {
    if (!(v > 0.0)) throw std::invalid_argument("estimator noise and scale parameters must be positive");
  }
  if (aux_rotation_sigma < 0.0 || aux_translation_sigma < 0.0 || backend_gate < 0.0) {
    throw std::invalid_argument("auxiliary odometry sigmas and the back-end gate must be non-negative");
  }
  if (spline_stride < 1 || spline_stride > scenario.trajectory.imu_per_scan()) {
    throw std::invalid_argument("spline_stride must be in [1, IMU samples per scan]");
  }
}

RunConfig parse_run_config(std::string_view json_text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(doc, "config",
             {"scenario", "toggles", "thresholds", "window", "output_dir", "estimator"});
  RunConfig c;
  if (!doc.contains("scenario")) throw std::invalid_argument("config has no scenario");
  const json& sc = doc.at("scenario");
  if (sc.is_string()) {
    std::filesystem::path p(sc.get<std::string>());
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    std::ifstream in(p);
    if (!in) throw std::invalid_argument("cannot open scenario file " + p.string());
    std::stringstream buf;
    buf << in.rdbuf();
    c.scenario = parse_scenario(buf.str());
    c.scenario_path = p.string();
  } else {
    c.scenario = parse_scenario(sc.dump());
  }
  if (doc.contains("toggles")) {
    const json& t = doc.at("toggles");
    check_keys(t, "toggles", {"constraints", "gnc", "backend_prior"});
    read(t, "constraints", c.toggles.constraints);
    read(t, "gnc", c.toggles.gnc);
    read(t, "backend_prior", c.toggles.backend_prior);
  }
  if (doc.contains("thresholds")) {
    const json& t = doc.at("thresholds");
    check_keys(t, "thresholds", {"full", "partial", "contribution_floor", "normalized", "partial_mode"});
    read(t, "full", c.thresholds.full);
    read(t, "partial", c.thresholds.partial);
    read(t, "contribution_floor", c.thresholds.contribution_floor);
    read(t, "normalized", c.thresholds.normalized);
    std::string mode = "constrain";
    read(t, "partial_mode", mode);
    if (mode == "constrain") c.thresholds.partial_mode = PartialMode::Constrain;
    else if (mode == "free") c.thresholds.partial_mode = PartialMode::Free;
    else throw std::invalid_argument("partial_mode must be 'constrain' or 'free'");
  }
  read(doc, "window", c.window);
  read(doc, "output_dir", c.output_dir);
  if (doc.contains("estimator")) {
    const json& e = doc.at("estimator");
    check_keys(e, "estimator",
               {"point_noise", "lidar_rotation_sigma", "lidar_translation_sigma", "degenerate_rotation_sigma",
                "degenerate_translation_sigma", "aux_rotation_sigma", "aux_translation_sigma", "kernel_scale", "backend_gate",
                "map_voxel", "spline_stride", "initial_rotation_sigma", "initial_position_sigma",
                "initial_velocity_sigma", "initial_gyro_bias_sigma", "initial_accel_bias_sigma", "gravity_sigma"});
    read(e, "point_noise", c.point_noise);
    read(e, "lidar_rotation_sigma", c.lidar_rotation_sigma);
    read(e, "lidar_translation_sigma", c.lidar_translation_sigma);
    read(e, "degenerate_rotation_sigma", c.degenerate_rotation_sigma);
    read(e, "degenerate_translation_sigma", c.degenerate_translation_sigma);
    read(e, "aux_rotation_sigma", c.aux_rotation_sigma);
    read(e, "aux_translation_sigma", c.aux_translation_sigma);
    read(e, "kernel_scale", c.kernel_scale);
    read(e, "backend_gate", c.backend_gate);
    read(e, "map_voxel", c.map_voxel);
    read(e, "spline_stride", c.spline_stride);
    read(e, "initial_rotation_sigma", c.initial_rotation_sigma);
    read(e, "initial_position_sigma", c.initial_position_sigma);
    read(e, "initial_velocity_sigma", c.initial_velocity_sigma);
    read(e, "initial_gyro_bias_sigma", c.initial_gyro_bias_sigma);
    read(e, "initial_accel_bias_sigma", c.initial_accel_bias_sigma);
    read(e, "gravity_sigma", c.gravity_sigma);
  }
  c.validate();
  return c;
}

}  // namespace dalio
