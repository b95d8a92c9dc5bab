#include <cmath>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "bcbf/errors.hpp"
#include "bcbf/scenario.hpp"
#include "bcbf/sim_harness.hpp"

using bcbf::ControllerKind;
using bcbf::Scenario;
using Eigen::VectorXd;

namespace {

std::string scenario_path(const std::string& name) { return std::string(BCBF_SCENARIO_DIR) + "/" + name; }

nlohmann::json wall_json() {
  return nlohmann::json::parse(R"({
    "schema_version": 1,
    "name": "wall",
    "model": {"type": "double_integrator", "dim": 1, "Q": [[0.0, 0.0], [0.0, 0.0]]},
    "initial_state": {"mean": [0.0, 0.0], "cov": [[0.01, 0.0], [0.0, 0.01]]},
    "sensing": {"observed": [0], "R": [[0.01]], "rate_hz": 10.0},
    "constraints": [{"type": "halfspace", "alpha": [-1.0, 0.0], "beta": -1.0, "delta": 0.05, "order": 2}],
    "controller": {"epsilon": 0.05, "zeta": [4.0, 4.0], "bounds": {"lower": [-3.0], "upper": [3.0]}},
    "reference": {"type": "constant", "u": [5.0]},
    "duration": 2.0,
    "dt": 0.001,
    "seed": 3,
    "runs": 4,
    "belief_integrator": "euler"
  })");
}

Scenario short_corridor() {
  Scenario sc = bcbf::load_scenario(scenario_path("corridor.json"));
  sc.duration = 1.0;
  return sc;
}

}  // namespace

TEST(Simulate, NoiselessBeliefMeanTracksTruth) {
  const Scenario sc = bcbf::parse_scenario(wall_json());
  bcbf::SimOptions opt;
  opt.noiseless = true;
  const auto rec = bcbf::simulate(sc, ControllerKind::bcbf, 1, opt);
  ASSERT_FALSE(rec.steps.empty());
  for (const auto& s : rec.steps) EXPECT_LE((s.belief.head(2) - s.x).norm(), 1e-12) << s.t;
  EXPECT_FALSE(rec.summary.collided);
}

TEST(Simulate, RecordLengthAndTimeGrid) {
  const Scenario sc = bcbf::parse_scenario(wall_json());
  const auto rec = bcbf::simulate(sc, ControllerKind::bcbf, 7);
  ASSERT_EQ(rec.steps.size(), 2001u);
  EXPECT_EQ(rec.summary.steps, 2001);
  EXPECT_DOUBLE_EQ(rec.steps.back().t, 2.0);
  EXPECT_EQ(rec.steps.front().belief.size(), 5);
}

TEST(Simulate, MeasurementTiming) {
  nlohmann::json j = wall_json();
  j["duration"] = 1.0;
  j["dt"] = 0.01;
  const auto rec = bcbf::simulate(bcbf::parse_scenario(j), ControllerKind::bcbf, 7);
  EXPECT_EQ(rec.summary.measurements, 10);
  for (std::size_t k = 0; k < rec.steps.size(); ++k) {
    // Step k covers (t_k, t_k + dt]; a measurement lands at every multiple of 0.1.
    EXPECT_EQ(rec.steps[k].measured, k % 10 == 9 && k < 100) << k;
  }
}

TEST(Simulate, SameSeedIsBitIdentical) {
  const Scenario sc = short_corridor();
  const auto a = bcbf::simulate(sc, ControllerKind::bcbf, 11);
  const auto b = bcbf::simulate(sc, ControllerKind::bcbf, 11);
  const auto c = bcbf::simulate(sc, ControllerKind::bcbf, 12);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t k = 0; k < a.steps.size(); ++k) {
    EXPECT_TRUE((a.steps[k].x.array() == b.steps[k].x.array()).all());
    EXPECT_TRUE((a.steps[k].belief.array() == b.steps[k].belief.array()).all());
    EXPECT_TRUE((a.steps[k].u.array() == b.steps[k].u.array()).all());
  }
  EXPECT_NE(a.steps.back().x, c.steps.back().x);
}

TEST(Simulate, LqrOnlySaturatesToBounds) {
  const Scenario sc = bcbf::parse_scenario(wall_json());
  const auto rec = bcbf::simulate(sc, ControllerKind::lqr_only, 1);
  for (const auto& s : rec.steps) EXPECT_DOUBLE_EQ(s.u(0), 3.0);
  EXPECT_TRUE(rec.summary.collided);
  EXPECT_GT(rec.summary.violation_steps, 0);
}

TEST(MonteCarlo, WorkerCountDoesNotChangeResults) {
  const Scenario sc = bcbf::parse_scenario(wall_json());
  const auto one = bcbf::monte_carlo(sc, ControllerKind::bcbf, 6, 1, 100);
  const auto three = bcbf::monte_carlo(sc, ControllerKind::bcbf, 6, 3, 100);
  EXPECT_EQ(bcbf::metrics_json(one.metrics, false).dump(), bcbf::metrics_json(three.metrics, false).dump());
  ASSERT_EQ(one.runs.size(), 6u);
  for (std::size_t i = 0; i < one.runs.size(); ++i) {
    EXPECT_EQ(one.runs[i].seed, 100 + i);
    EXPECT_EQ(one.runs[i].belief_leave_steps, three.runs[i].belief_leave_steps);
    EXPECT_EQ(one.runs[i].u_norm_sum, three.runs[i].u_norm_sum);
  }
}

TEST(MonteCarlo, SingleRunEqualsSimulate) {
  const Scenario sc = bcbf::parse_scenario(wall_json());
  const auto mc = bcbf::monte_carlo(sc, ControllerKind::bcbf, 1, 4, 9);
  const auto rec = bcbf::simulate(sc, ControllerKind::bcbf, 9);
  EXPECT_EQ(mc.runs[0].steps, rec.summary.steps);
  EXPECT_EQ(mc.runs[0].u_norm_sum, rec.summary.u_norm_sum);
  EXPECT_EQ(mc.runs[0].measurements, rec.summary.measurements);
  EXPECT_EQ(mc.metrics.runs, 1);
}

TEST(MonteCarlo, MetricsJsonIsReproducible) {
  const Scenario sc = bcbf::parse_scenario(wall_json());
  const auto a = bcbf::monte_carlo(sc, ControllerKind::state_cbf, 3, 2, 5);
  const auto b = bcbf::monte_carlo(sc, ControllerKind::state_cbf, 3, 2, 5);
  const std::string ja = bcbf::metrics_json(a.metrics, false).dump(2);
  EXPECT_EQ(ja, bcbf::metrics_json(b.metrics, false).dump(2));
  EXPECT_EQ(ja.find("solve_time"), std::string::npos);
  EXPECT_NE(bcbf::metrics_json(a.metrics, true).dump().find("solve_time_mean_s"), std::string::npos);
  EXPECT_THROW(bcbf::monte_carlo(sc, ControllerKind::bcbf, 0, 1, 5), bcbf::ConfigError);
}

TEST(MonteCarlo, CsvHasOneLinePerStep) {
  const Scenario sc = bcbf::parse_scenario(wall_json());
  const auto rec = bcbf::simulate(sc, ControllerKind::bcbf, 2);
  std::ostringstream os;
  bcbf::write_csv(os, rec, 2, 1, 1);
  const std::string s = os.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), static_cast<long>(rec.steps.size()) + 1);
  EXPECT_EQ(s.substr(0, s.find('\n')), "t,x0,x1,mu0,mu1,S0_0,S0_1,S1_1,uref0,u0,htilde0,hb0,gamma0,slack,meas");
}

TEST(BoundReport, ScalarScenario) {
  const Scenario sc = bcbf::load_scenario(scenario_path("scalar_bound.json"));
  const auto rows = bcbf::bound_report(sc);
  ASSERT_FALSE(rows.empty());
  EXPECT_NEAR(rows.front().natural_bound, 0.0896, 5e-4);
  EXPECT_NEAR(rows.front().h_b, 0.0, 1e-3);
  EXPECT_EQ(rows.front().gamma, 0.0);
  std::ostringstream os;
  bcbf::write_bound_report(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "t,constraint,natural_bound,gamma,h_b");
}

TEST(ScenarioParsing, BundledScenariosLoad) {
  for (const char* name : {"unicycle_obstacle.json", "scalar_bound.json", "corridor.json", "cuboid.json"}) {
    EXPECT_NO_THROW(bcbf::load_scenario(scenario_path(name))) << name;
  }
}

TEST(ScenarioParsing, RejectsBadInput) {
  nlohmann::json j = wall_json();
  j.erase("schema_version");
  EXPECT_THROW(bcbf::parse_scenario(j), bcbf::ConfigError);

  j = wall_json();
  j["schema_version"] = 2;
  EXPECT_THROW(bcbf::parse_scenario(j), bcbf::ConfigError);

  j = wall_json();
  j["constraints"][0]["type"] = "cone";
  EXPECT_THROW(bcbf::parse_scenario(j), bcbf::ConfigError);

  j = wall_json();
  j["constraints"][0]["delta"] = 0.7;
  EXPECT_THROW(bcbf::parse_scenario(j), bcbf::ConfigError);

  j = wall_json();
  j["controller"]["epsilon"] = 0.0;
  EXPECT_THROW(bcbf::parse_scenario(j), bcbf::ConfigError);

  j = wall_json();
  j["initial_state"]["mean"] = {0.0};
  EXPECT_THROW(bcbf::parse_scenario(j), bcbf::ConfigError);

  EXPECT_THROW(bcbf::load_scenario(scenario_path("does_not_exist.json")), bcbf::ConfigError);
  EXPECT_THROW(bcbf::parse_controller_kind("pid"), bcbf::ConfigError);
}
