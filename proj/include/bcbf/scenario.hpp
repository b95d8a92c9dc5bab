#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "bcbf/bcbf_filter.hpp"
#include "bcbf/belief_dynamics.hpp"
#include "bcbf/errors.hpp"
#include "bcbf/models.hpp"
#include "bcbf/obstacle.hpp"
#include "bcbf/qp.hpp"

namespace bcbf {

inline constexpr int kScenarioSchemaVersion = 1;

enum class ModelKind { unicycle, drone, double_integrator, scalar };

/// Axis-aligned box over the sensing coordinates with its own sensor noise
/// and rate. The first region containing the point wins; points in no region
/// use the schedule defaults, so the regions always partition the workspace.
struct SensingRegion {
  std::string name;
  VectorXd lower;
  VectorXd upper;
  MatrixXd r;
  double rate_hz = 10.0;

  bool contains(const VectorXd& p) const {
    return (p.array() >= lower.array()).all() && (p.array() <= upper.array()).all();
  }
};

struct SensingSchedule {
  std::vector<Index> observed;        // state coordinates measured directly
  std::vector<Index> region_indices;  // state coordinates used for region membership
  std::vector<SensingRegion> regions;
  MatrixXd default_r;
  double default_rate_hz = 10.0;
  bool keyed_on_belief = false;

  /// Index into regions, or -1 for the defaults.
  int region_of(const VectorXd& x) const {
    if (regions.empty()) return -1;
    const VectorXd p = position_of(x, region_indices);
    for (std::size_t i = 0; i < regions.size(); ++i) {
      if (regions[i].contains(p)) return static_cast<int>(i);
    }
    return -1;
  }

  ObservationModel observation(Index n, int region) const {
    if (region < 0) return ObservationModel::selection(n, observed, default_r, default_rate_hz);
    const auto& reg = regions[static_cast<std::size_t>(region)];
    return ObservationModel::selection(n, observed, reg.r, reg.rate_hz);
  }
};

enum class ReferenceKind { lqr, adversarial, constant };

struct ReferenceSpec {
  ReferenceKind kind = ReferenceKind::lqr;
  LqrReferenceConfig lqr;
  // adversarial
  VectorXd box_lower;
  VectorXd box_upper;
  std::vector<Index> position_indices;
  double u_max = 1.0;
  double period = 2.0;
  double overshoot = 1.0;
  // constant
  VectorXd constant_u;
};

struct GoalSpec {
  std::vector<Index> position_indices;
  VectorXd target;
  double tolerance = 0.3;
};

struct Scenario {
  int schema_version = kScenarioSchemaVersion;
  std::string name;
  ModelKind model = ModelKind::unicycle;
  Index model_dim = 1;  // double integrator dimension
  MatrixXd q;

  VectorXd state_mean;  // initial true-state distribution
  MatrixXd state_cov;
  VectorXd belief_mean;  // initial belief
  MatrixXd belief_cov;

  SensingSchedule sensing;
  std::vector<SafetySpec> constraints;
  ReferenceSpec reference;

  double epsilon = 0.5;
  std::optional<BoxBounds> bounds;
  std::optional<double> slack_weight = 1e6;
  AlphaMode alpha_mode = AlphaMode::frozen;

  std::optional<GoalSpec> goal;
  double duration = 10.0;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  int runs = 1;
  Integrator integrator = Integrator::rk4;

  Index state_dim() const { return state_mean.size(); }

  SystemModel build_model() const {
    switch (model) {
      case ModelKind::unicycle: return SystemModel(UnicycleDynamics{}, q);
      case ModelKind::drone: return SystemModel(DoubleIntegratorDynamics{3}, q);
      case ModelKind::double_integrator: return SystemModel(DoubleIntegratorDynamics{model_dim}, q);
      case ModelKind::scalar: return SystemModel(LinearDynamics{MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1)}, q);
    }
    throw ConfigError("unknown model kind");
  }

  /// Overrides the risk level of every constraint.
  void set_delta(double delta) {
    for (auto& c : constraints) {
      if (auto* hs = std::get_if<RiskHalfSpace>(&c.geometry)) {
        *hs = hs->with_delta(delta);
      } else {
        if (!(delta > 0.0 && delta <= 0.5)) throw ConfigError("delta must lie in (0, 0.5]");
        std::get<CircularObstacle>(c.geometry).delta = delta;
      }
    }
  }

  void validate() const;
};

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing field '" + key + "'");
  return j.at(key);
}

inline VectorXd json_vector(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + ": expected a number at position " + std::to_string(i));
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

/// Row-major nested arrays.
inline MatrixXd json_matrix(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a nested array");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  MatrixXd m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(where + ": ragged matrix");
    m.row(static_cast<Index>(r)) = json_vector(j[r], where).transpose();
  }
  return m;
}

inline std::vector<Index> json_indices(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of indices");
  std::vector<Index> out;
  for (const auto& e : j) {
    if (!e.is_number_integer()) throw ConfigError(where + ": indices must be integers");
    out.push_back(e.get<Index>());
  }
  return out;
}

inline Eigen::Vector2d json_zeta(const nlohmann::json& j, const std::string& where) {
  const VectorXd z = json_vector(j, where);
  if (z.size() != 2) throw ConfigError(where + ": zeta must have two entries");
  return z;
}

inline nlohmann::json to_json_vector(const VectorXd& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

inline nlohmann::json to_json_matrix(const MatrixXd& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) j.push_back(to_json_vector(m.row(r).transpose()));
  return j;
}

inline nlohmann::json to_json_indices(const std::vector<Index>& idx) {
  nlohmann::json j = nlohmann::json::array();
  for (Index i : idx) j.push_back(i);
  return j;
}

}  // namespace detail

inline void Scenario::validate() const {
  const Index n = state_dim();
  const Index m = build_model().input_dim();
  if (schema_version != kScenarioSchemaVersion) throw ConfigError("unsupported schema_version");
  if (build_model().state_dim() != n) throw ConfigError("initial state dimension does not match the model");
  if (state_cov.rows() != n || state_cov.cols() != n) throw ConfigError("initial state covariance has wrong shape");
  if (belief_mean.size() != n || belief_cov.rows() != n || belief_cov.cols() != n) {
    throw ConfigError("initial belief has wrong shape");
  }
  if (!(epsilon > 0.0 && epsilon <= 0.5)) throw ConfigError("epsilon must lie in (0, 0.5]");
  if (!(dt > 0.0) || !(duration >= dt)) throw ConfigError("dt must be > 0 and duration >= dt");
  if (runs < 1) throw ConfigError("runs must be >= 1");
  for (Index i : sensing.observed) {
    if (i < 0 || i >= n) throw ConfigError("sensing: observed index out of range");
  }
  for (const auto& reg : sensing.regions) {
    if (reg.lower.size() != static_cast<Index>(sensing.region_indices.size()) ||
        reg.upper.size() != reg.lower.size()) {
      throw ConfigError("sensing region '" + reg.name + "' does not match region_indices");
    }
  }
  sensing.observation(n, -1);
  for (std::size_t i = 0; i < sensing.regions.size(); ++i) sensing.observation(n, static_cast<int>(i));
  for (const auto& c : constraints) {
    if (const auto* hs = std::get_if<RiskHalfSpace>(&c.geometry)) {
      if (hs->alpha().size() != n) throw ConfigError("halfspace constraint: alpha has wrong dimension");
    } else {
      const auto& o = std::get<CircularObstacle>(c.geometry);
      if (o.center.size() != static_cast<Index>(o.position_indices.size())) {
        throw ConfigError("obstacle constraint: center does not match position_indices");
      }
      if (!(o.delta > 0.0 && o.delta <= 0.5)) throw ConfigError("obstacle constraint: delta must lie in (0, 0.5]");
    }
    BarrierConstraint{RiskHalfSpace(VectorXd::Ones(1), 0.0, 0.5), c.order, c.zeta}.validate();
  }
  if (bounds && (bounds->lower.size() != m || bounds->upper.size() != m)) {
    throw ConfigError("input bounds have wrong dimension");
  }
  if (reference.kind == ReferenceKind::lqr) {
    if (reference.lqr.goal.size() != n || reference.lqr.q.rows() != n || reference.lqr.r.rows() != m) {
      throw ConfigError("lqr reference: goal, Q or R has wrong dimension");
    }
  } else if (reference.kind == ReferenceKind::constant && reference.constant_u.size() != m) {
    throw ConfigError("constant reference: u has wrong dimension");
  }
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "unicycle") return ModelKind::unicycle;
  if (s == "drone") return ModelKind::drone;
  if (s == "double_integrator") return ModelKind::double_integrator;
  if (s == "scalar") return ModelKind::scalar;
  throw ConfigError("unknown model type '" + s + "'");
}

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::unicycle: return "unicycle";
    case ModelKind::drone: return "drone";
    case ModelKind::double_integrator: return "double_integrator";
    case ModelKind::scalar: return "scalar";
  }
  return "unknown";
}

/// Parses a scenario document. Matrices are nested arrays, row-major.
inline Scenario parse_scenario(const nlohmann::json& j) {
  using detail::json_indices;
  using detail::json_matrix;
  using detail::json_vector;
  using detail::require;
  Scenario sc;
  const auto& version = require(j, "schema_version", "scenario");
  if (!version.is_number_integer() || version.get<int>() != kScenarioSchemaVersion) {
    throw ConfigError("scenario: schema_version must be " + std::to_string(kScenarioSchemaVersion));
  }
  sc.name = j.value("name", std::string("scenario"));

  const auto& model = require(j, "model", "scenario");
  sc.model = parse_model_kind(require(model, "type", "model").get<std::string>());
  sc.model_dim = model.value("dim", Index{1});
  switch (sc.model) {
    case ModelKind::unicycle: sc.q = unicycle_default_q(); break;
    case ModelKind::drone: sc.q = MatrixXd::Identity(6, 6) * 0.05 * 0.05; break;
    case ModelKind::double_integrator: sc.q = MatrixXd::Zero(2 * sc.model_dim, 2 * sc.model_dim); break;
    case ModelKind::scalar: sc.q = MatrixXd::Zero(1, 1); break;
  }
  if (model.contains("Q")) sc.q = json_matrix(model.at("Q"), "model.Q");

  const auto& init = require(j, "initial_state", "scenario");
  sc.state_mean = json_vector(require(init, "mean", "initial_state"), "initial_state.mean");
  sc.state_cov = json_matrix(require(init, "cov", "initial_state"), "initial_state.cov");
  if (j.contains("initial_belief")) {
    const auto& ib = j.at("initial_belief");
    sc.belief_mean = json_vector(require(ib, "mean", "initial_belief"), "initial_belief.mean");
    sc.belief_cov = json_matrix(require(ib, "cov", "initial_belief"), "initial_belief.cov");
  } else {
    sc.belief_mean = sc.state_mean;
    sc.belief_cov = sc.state_cov;
  }
  const auto& sensing = require(j, "sensing", "scenario");
  sc.sensing.observed = json_indices(require(sensing, "observed", "sensing"), "sensing.observed");
  sc.sensing.default_r = json_matrix(require(sensing, "R", "sensing"), "sensing.R");
  sc.sensing.default_rate_hz = require(sensing, "rate_hz", "sensing").get<double>();
  sc.sensing.keyed_on_belief = sensing.value("keyed_on", std::string("truth")) == "belief";
  if (sensing.contains("regions")) {
    sc.sensing.region_indices =
        json_indices(require(sensing, "region_indices", "sensing"), "sensing.region_indices");
    for (const auto& r : sensing.at("regions")) {
      SensingRegion reg;
      reg.name = r.value("name", std::string("region"));
      reg.lower = json_vector(require(r, "lower", "region"), "region.lower");
      reg.upper = json_vector(require(r, "upper", "region"), "region.upper");
      reg.r = json_matrix(require(r, "R", "region"), "region.R");
      reg.rate_hz = require(r, "rate_hz", "region").get<double>();
      sc.sensing.regions.push_back(std::move(reg));
    }
  }

  Eigen::Vector2d default_zeta{4.0, 4.0};
  if (j.contains("controller") && j.at("controller").contains("zeta")) {
    default_zeta = detail::json_zeta(j.at("controller").at("zeta"), "controller.zeta");
  }
  for (const auto& c : j.value("constraints", nlohmann::json::array())) {
    SafetySpec spec;
    spec.order = c.value("order", 1);
    spec.zeta = c.contains("zeta") ? detail::json_zeta(c.at("zeta"), "constraint.zeta") : default_zeta;
    const std::string type = require(c, "type", "constraint").get<std::string>();
    const double delta = require(c, "delta", "constraint").get<double>();
    if (type == "halfspace") {
      spec.geometry = RiskHalfSpace(json_vector(require(c, "alpha", "constraint"), "constraint.alpha"),
                                    require(c, "beta", "constraint").get<double>(), delta);
    } else if (type == "obstacle") {
      CircularObstacle o;
      o.center = json_vector(require(c, "center", "constraint"), "constraint.center");
      o.radius = require(c, "radius", "constraint").get<double>();
      o.delta = delta;
      o.position_indices = json_indices(require(c, "position_indices", "constraint"), "constraint.position_indices");
      spec.geometry = o;
    } else {
      throw ConfigError("unknown constraint type '" + type + "'");
    }
    sc.constraints.push_back(std::move(spec));
  }

  if (j.contains("controller")) {
    const auto& ctl = j.at("controller");
    sc.epsilon = ctl.value("epsilon", 0.5);
    if (ctl.contains("bounds")) {
      const auto& b = ctl.at("bounds");
      sc.bounds = BoxBounds{json_vector(require(b, "lower", "bounds"), "bounds.lower"),
                            json_vector(require(b, "upper", "bounds"), "bounds.upper")};
    }
    if (ctl.contains("slack_weight")) {
      if (ctl.at("slack_weight").is_null()) {
        sc.slack_weight.reset();
      } else {
        sc.slack_weight = ctl.at("slack_weight").get<double>();
      }
    }
    const std::string mode = ctl.value("alpha_mode", std::string("frozen"));
    if (mode == "frozen") {
      sc.alpha_mode = AlphaMode::frozen;
    } else if (mode == "differentiated") {
      sc.alpha_mode = AlphaMode::differentiated;
    } else {
      throw ConfigError("unknown alpha_mode '" + mode + "'");
    }
  }

  const auto& ref = require(j, "reference", "scenario");
  const std::string kind = require(ref, "type", "reference").get<std::string>();
  if (kind == "lqr") {
    sc.reference.kind = ReferenceKind::lqr;
    sc.reference.lqr.goal = json_vector(require(ref, "goal", "reference"), "reference.goal");
    sc.reference.lqr.q = json_matrix(require(ref, "Q", "reference"), "reference.Q");
    sc.reference.lqr.r = json_matrix(require(ref, "R", "reference"), "reference.R");
    if (ref.contains("angle_indices")) {
      sc.reference.lqr.angle_indices = json_indices(ref.at("angle_indices"), "reference.angle_indices");
    }
    if (ref.contains("speed_index")) sc.reference.lqr.speed_index = ref.at("speed_index").get<Index>();
    sc.reference.lqr.min_speed = ref.value("min_speed", 0.1);
  } else if (kind == "adversarial") {
    sc.reference.kind = ReferenceKind::adversarial;
    sc.reference.box_lower = json_vector(require(ref, "lower", "reference"), "reference.lower");
    sc.reference.box_upper = json_vector(require(ref, "upper", "reference"), "reference.upper");
    sc.reference.position_indices =
        json_indices(require(ref, "position_indices", "reference"), "reference.position_indices");
    sc.reference.u_max = require(ref, "u_max", "reference").get<double>();
    sc.reference.period = ref.value("period", 2.0);
    sc.reference.overshoot = ref.value("overshoot", 1.0);
  } else if (kind == "constant") {
    sc.reference.kind = ReferenceKind::constant;
    sc.reference.constant_u = json_vector(require(ref, "u", "reference"), "reference.u");
  } else {
    throw ConfigError("unknown reference type '" + kind + "'");
  }

  if (j.contains("goal")) {
    const auto& g = j.at("goal");
    GoalSpec goal;
    goal.position_indices = json_indices(require(g, "position_indices", "goal"), "goal.position_indices");
    goal.target = json_vector(require(g, "target", "goal"), "goal.target");
    goal.tolerance = g.value("tolerance", 0.3);
    if (goal.target.size() != static_cast<Index>(goal.position_indices.size())) {
      throw ConfigError("goal: target does not match position_indices");
    }
    sc.goal = goal;
  }

  sc.duration = require(j, "duration", "scenario").get<double>();
  sc.dt = require(j, "dt", "scenario").get<double>();
  sc.seed = j.value("seed", std::uint64_t{0});
  sc.runs = j.value("runs", 1);
  const std::string integ = j.value("belief_integrator", std::string("rk4"));
  if (integ == "rk4") {
    sc.integrator = Integrator::rk4;
  } else if (integ == "euler") {
    sc.integrator = Integrator::euler;
  } else {
    throw ConfigError("unknown belief_integrator '" + integ + "'");
  }
  sc.validate();
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario '" + path + "' is not valid JSON: " + e.what());
  }
  try {
    return parse_scenario(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario '" + path + "': " + e.what());
  }
}

}  // namespace bcbf
