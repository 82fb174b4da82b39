// Serial reference kernels against their OpenMP counterparts on a box-room scan.
#include <benchmark/benchmark.h>

#include <map>

#include "dalio/registration.hpp"
#include "dalio/scenario.hpp"
#include "dalio/sim.hpp"

using namespace dalio;

namespace {

struct Fixture {
  PointMap map{1.0};
  Scan scan;
  Pose pose;
  Pose imu_from_lidar;
  std::vector<PlaneCorrespondence> corrs;
  std::vector<InfoPair> pairs;

  explicit Fixture(int points) {
    Scenario sc = default_scenario(sim::EnvironmentKind::BoxRoom);
    sc.environment.density = 40.0;
    sc.lidar.points_per_scan = points;
    sc.trajectory.duration = 0.5;
    std::vector<Vec3> pts;
    for (const auto& p : sim::sample_environment(sc.environment).points) pts.push_back(p.position);
    map.add(pts);
    scan = sim::simulate_lidar(sc.trajectory, sc.environment, sc.lidar, 1).back();
    const sim::Kinematics k = sim::evaluate_trajectory(sc.trajectory, scan.end_time);
    pose = Pose{k.rotation, k.position};
    imu_from_lidar = sc.lidar.imu_from_lidar;
    corrs = associate_serial(scan, pose, map, imu_from_lidar, AssociationParams{});
    pairs = info_pairs(corrs, pose);
  }
};

const Fixture& fixture(int points) {
  static std::map<int, Fixture> cache;
  auto it = cache.find(points);
  if (it == cache.end()) it = cache.emplace(points, Fixture(points)).first;
  return it->second;
}

template <bool Parallel>
void associate_kernel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto out = Parallel ? associate(f.scan, f.pose, f.map, f.imu_from_lidar, AssociationParams{})
                        : associate_serial(f.scan, f.pose, f.map, f.imu_from_lidar, AssociationParams{});
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.scan.points.size()));
}

template <bool Parallel>
void hessian_kernel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    Mat6 h = Parallel ? assemble_hessian(f.pairs) : assemble_hessian_serial(f.pairs);
    benchmark::DoNotOptimize(h.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.pairs.size()));
}

template <bool Parallel>
void normal_equations_kernel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    NormalEquations ne = Parallel ? normal_equations(f.corrs, f.pose) : normal_equations_serial(f.corrs, f.pose);
    benchmark::DoNotOptimize(ne.hessian.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.corrs.size()));
}

}  // namespace

BENCHMARK(associate_kernel<false>)->Name("associate/serial")->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);
BENCHMARK(associate_kernel<true>)->Name("associate/openmp")->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);
BENCHMARK(hessian_kernel<false>)->Name("assemble_hessian/serial")->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);
BENCHMARK(hessian_kernel<true>)->Name("assemble_hessian/openmp")->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);
BENCHMARK(normal_equations_kernel<false>)
    ->Name("normal_equations/serial")->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);
BENCHMARK(normal_equations_kernel<true>)
    ->Name("normal_equations/openmp")->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
