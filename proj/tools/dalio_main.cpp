#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dalio/evaluation.hpp"
#include "dalio/pipeline.hpp"
#include "dalio/scenario.hpp"
#include "dalio/trajectory_io.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RunOptions {
  std::vector<std::string> configs;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool disable_constraints = false;
  bool disable_gnc = false;
  bool disable_backend_prior = false;
  bool batch = false;
};

dalio::RunConfig load_config(const std::string& path, const RunOptions& opt, const std::string& out_dir) {
  const std::string base = fs::path(path).parent_path().string();
  dalio::RunConfig cfg = dalio::parse_run_config(read_file(path), base.empty() ? "." : base);
  if (opt.seed_set) cfg.scenario.seed = opt.seed;
  if (opt.disable_constraints) cfg.toggles.constraints = false;
  if (opt.disable_gnc) cfg.toggles.gnc = false;
  if (opt.disable_backend_prior) cfg.toggles.backend_prior = false;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  cfg.validate();
  return cfg;
}

// Returns true when the run finished without divergence.
bool run_one(const dalio::RunConfig& cfg, std::ostream& log) {
  const dalio::RunResult r = dalio::run(cfg);
  dalio::write_artifacts(r, cfg, cfg.output_dir);
  log << cfg.scenario.name << " seed " << cfg.scenario.seed << ": ATE " << r.eval.ate_rmse << " m, along-track "
      << r.max_along_track_error << " m, " << r.scans.size() << " scans, " << r.eval.mean_scan_ms << " ms/scan -> "
      << cfg.output_dir << '\n';
  if (r.diverged) log << "  diverged: " << r.divergence_reason << '\n';
  return !r.diverged;
}

int cmd_run(const RunOptions& opt) {
  if (!opt.batch) {
    if (opt.configs.size() != 1) throw CLI::ValidationError("--config", "exactly one config without --batch");
    const dalio::RunConfig cfg = load_config(opt.configs.front(), opt, opt.out);
    return run_one(cfg, std::cout) ? 0 : 2;
  }
  // Batch: each config writes under <out>/<config stem> and runs on its own thread.
  std::vector<dalio::RunConfig> cfgs;
  for (const std::string& path : opt.configs) {
    const std::string base_out = opt.out.empty() ? "out" : opt.out;
    cfgs.push_back(load_config(path, opt, (fs::path(base_out) / fs::path(path).stem()).string()));
  }
  std::vector<std::future<std::pair<bool, std::string>>> jobs;
  for (const dalio::RunConfig& cfg : cfgs) {
    jobs.push_back(std::async(std::launch::async, [&cfg] {
      std::ostringstream log;
      bool ok = false;
      try {
        ok = run_one(cfg, log);
      } catch (const std::exception& e) {
        log << cfg.scenario.name << ": error: " << e.what() << '\n';
      }
      return std::make_pair(ok, log.str());
    }));
  }
  bool all_ok = true;
  for (auto& job : jobs) {
    auto [ok, text] = job.get();
    std::cout << text;
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 2;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path, double max_dt) {
  std::ifstream est_in(est_path), gt_in(gt_path);
  if (!est_in) throw std::runtime_error("cannot open " + est_path);
  if (!gt_in) throw std::runtime_error("cannot open " + gt_path);
  const dalio::EvalResult r = dalio::evaluate_ate(dalio::read_tum(est_in), dalio::read_tum(gt_in), max_dt);
  std::cout << "ate_rmse " << r.ate_rmse << "\naxis_rmse " << r.axis_rmse.x() << ' ' << r.axis_rmse.y() << ' '
            << r.axis_rmse.z() << "\nmax_error " << r.max_error << "\nassociated " << r.associated << '\n';
  return 0;
}

int cmd_gen(const std::string& kind, const std::string& out_path) {
  const dalio::Scenario s = dalio::default_scenario(dalio::sim::environment_kind_from_string(kind));
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << dalio::scenario_to_json(s) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Degeneracy-aware LiDAR-inertial estimation on simulated scenes"};
  app.require_subcommand(1);

  RunOptions run_opt;
  auto* run = app.add_subcommand("run", "Simulate a scenario and run the estimator");
  run->add_option("--config", run_opt.configs, "Run configuration JSON (several with --batch)")->required()->check(
      CLI::ExistingFile);
  run->add_option("--out", run_opt.out, "Output directory");
  auto* seed_opt = run->add_option("--seed", run_opt.seed, "Override the scenario seed");
  run->add_flag("--disable-constraints", run_opt.disable_constraints);
  run->add_flag("--disable-gnc", run_opt.disable_gnc);
  run->add_flag("--disable-backend-prior", run_opt.disable_backend_prior);
  run->add_flag("--batch", run_opt.batch, "Run every --config in parallel worker threads");

  std::string est_path, gt_path;
  double max_dt = 0.0025;
  auto* eval = app.add_subcommand("eval", "ATE of a TUM trajectory against ground truth");
  eval->add_option("--est", est_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", gt_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--max-dt", max_dt, "Association tolerance in seconds")->capture_default_str();

  std::string kind, gen_out;
  auto* gen = app.add_subcommand("gen-scenario", "Write a built-in scenario as JSON");
  gen->add_option("--kind", kind)->required()->check(CLI::IsMember({"corridor", "tunnel", "box", "plane"}));
  gen->add_option("--out", gen_out)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) {
      run_opt.seed_set = seed_opt->count() > 0;
      return cmd_run(run_opt);
    }
    if (*eval) return cmd_eval(est_path, gt_path, max_dt);
    if (*gen) return cmd_gen(kind, gen_out);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
