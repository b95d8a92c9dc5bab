// Command-line front end: single runs, Monte Carlo studies and bound reports.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "bcbf/bcbf.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitInfeasible = 2;

struct Overrides {
  std::optional<double> epsilon;
  std::optional<double> delta;
  std::optional<double> dt;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--epsilon", o.epsilon, "Override the jump risk level epsilon");
  cmd->add_option("--delta", o.delta, "Override the risk level delta of every constraint");
  cmd->add_option("--dt", o.dt, "Override the simulation step");
}

bcbf::Scenario load(const std::string& path, const Overrides& o) {
  bcbf::Scenario sc = bcbf::load_scenario(path);
  if (o.epsilon) sc.epsilon = *o.epsilon;
  if (o.delta) sc.set_delta(*o.delta);
  if (o.dt) sc.dt = *o.dt;
  sc.validate();
  return sc;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw bcbf::ConfigError("cannot write '" + path.string() + "'");
  return os;
}

void write_runs_csv(std::ostream& os, const std::vector<bcbf::RunSummary>& runs) {
  os << "seed,steps,collided,violation_steps,belief_leave_steps,measurements,jump_leave_events,slack_events,"
        "infeasible,t_goal\n";
  for (const auto& r : runs) {
    os << r.seed << ',' << r.steps << ',' << (r.collided ? 1 : 0) << ',' << r.violation_steps << ','
       << r.belief_leave_steps << ',' << r.measurements << ',' << r.jump_leave_events << ',' << r.slack_events << ','
       << (r.terminated_infeasible ? 1 : 0) << ',';
    if (r.t_goal) os << *r.t_goal;
    os << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Belief control barrier function simulator"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string controller = "bcbf";
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = "out";
  int runs = 0;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  bool save_runs = false;
  bool timing = false;
  std::string bound_out;
  Overrides ov;

  auto* run = app.add_subcommand("run", "Simulate one closed-loop run and write its CSV trace");
  run->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
  run->add_option("--controller", controller, "bcbf | state_cbf | lqr_only");
  run->add_option("--seed", seed, "Run seed")->each([&](const std::string&) { seed_given = true; });
  run->add_option("--out", out_dir, "Output directory");
  add_overrides(run, ov);

  auto* mc = app.add_subcommand("montecarlo", "Run a seeded Monte Carlo study and write aggregate metrics");
  mc->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
  mc->add_option("--controller", controller, "bcbf | state_cbf | lqr_only");
  mc->add_option("--runs", runs, "Number of runs (default: scenario value)");
  mc->add_option("--workers", workers, "Worker threads");
  mc->add_option("--seed", seed, "Base seed; run i uses seed + i")->each([&](const std::string&) { seed_given = true; });
  mc->add_option("--out", out_dir, "Output directory");
  mc->add_flag("--save-runs", save_runs, "Also write one CSV trace per run");
  mc->add_flag("--timing", timing, "Include wall-clock statistics in metrics.json");
  add_overrides(mc, ov);

  auto* bound = app.add_subcommand("bound", "Print natural bound and gamma margin along the nominal run");
  bound->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
  bound->add_option("--out", bound_out, "Write the table to this file instead of stdout");
  add_overrides(bound, ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const bcbf::Scenario sc = load(scenario_path, ov);
    if (!seed_given) seed = sc.seed;

    if (*run) {
      const auto kind = bcbf::parse_controller_kind(controller);
      const bcbf::SimRecord rec = bcbf::simulate(sc, kind, seed);
      const fs::path dir(out_dir);
      auto csv = open_out(dir / ("run_" + std::to_string(seed) + ".csv"));
      bcbf::write_csv(csv, rec, sc.state_dim(), sc.build_model().input_dim(), sc.constraints.size());
      bcbf::MetricsReport m = bcbf::aggregate({rec.summary});
      m.scenario = sc.name;
      m.controller = controller;
      m.epsilon = sc.epsilon;
      m.base_seed = seed;
      auto js = open_out(dir / "metrics.json");
      js << bcbf::metrics_json(m).dump(2) << '\n';
      std::cout << "steps " << rec.summary.steps << ", collided " << (rec.summary.collided ? "yes" : "no")
                << ", belief-leave steps " << rec.summary.belief_leave_steps << ", slack events "
                << rec.summary.slack_events << '\n';
      if (rec.summary.terminated_infeasible) {
        std::cerr << "run terminated: " << rec.summary.termination << '\n';
        return kExitInfeasible;
      }
      return kExitOk;
    }

    if (*mc) {
      const auto kind = bcbf::parse_controller_kind(controller);
      const int n_runs = runs > 0 ? runs : sc.runs;
      const auto res = bcbf::monte_carlo(sc, kind, n_runs, workers, seed, save_runs);
      const fs::path dir(out_dir);
      auto js = open_out(dir / "metrics.json");
      js << bcbf::metrics_json(res.metrics, timing).dump(2) << '\n';
      auto rc = open_out(dir / "runs.csv");
      write_runs_csv(rc, res.runs);
      for (const auto& rec : res.records) {
        auto csv = open_out(dir / ("run_" + std::to_string(rec.summary.seed) + ".csv"));
        bcbf::write_csv(csv, rec, sc.state_dim(), sc.build_model().input_dim(), sc.constraints.size());
      }
      std::cout << bcbf::metrics_json(res.metrics, true).dump(2) << '\n';
      return res.metrics.infeasible_runs > 0 ? kExitInfeasible : kExitOk;
    }

    const auto rows = bcbf::bound_report(sc);
    if (bound_out.empty()) {
      bcbf::write_bound_report(std::cout, rows);
    } else {
      auto os = open_out(bound_out);
      bcbf::write_bound_report(os, rows);
    }
    return kExitOk;
  } catch (const bcbf::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const bcbf::InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}
