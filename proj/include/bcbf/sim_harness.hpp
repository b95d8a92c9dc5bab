#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "bcbf/bcbf_filter.hpp"
#include "bcbf/belief_dynamics.hpp"
#include "bcbf/errors.hpp"
#include "bcbf/log.hpp"
#include "bcbf/models.hpp"
#include "bcbf/obstacle.hpp"
#include "bcbf/scenario.hpp"

namespace bcbf {

enum class ControllerKind { bcbf, state_cbf, lqr_only };

inline ControllerKind parse_controller_kind(const std::string& s) {
  if (s == "bcbf") return ControllerKind::bcbf;
  if (s == "state_cbf") return ControllerKind::state_cbf;
  if (s == "lqr_only") return ControllerKind::lqr_only;
  throw ConfigError("unknown controller '" + s + "'");
}

inline std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::bcbf: return "bcbf";
    case ControllerKind::state_cbf: return "state_cbf";
    case ControllerKind::lqr_only: return "lqr_only";
  }
  return "unknown";
}

/// Everything recorded at one time step, before the input is applied.
struct StepRecord {
  double t = 0.0;
  VectorXd x;       // ground truth
  VectorXd belief;  // flat belief
  VectorXd u_ref;
  VectorXd u;
  std::vector<double> h_tilde;  // per constraint, h_b - gamma (risk-aware level)
  std::vector<double> h_b;      // per constraint, gamma = 0
  std::vector<double> gamma;
  bool slack = false;
  bool measured = false;  // a measurement arrived at the end of this step
  VectorXd z;
};

/// Per-run counters. Sums are kept instead of samples so that long runs need
/// no per-step storage.
struct RunSummary {
  std::uint64_t seed = 0;
  long steps = 0;
  long violation_steps = 0;     // true state outside the safe set
  long belief_leave_steps = 0;  // some h_b(b) < 0
  long slack_events = 0;
  long measurements = 0;
  long jump_leave_events = 0;  // h_b(b-) >= 0 and h_b(b+) < 0 for some constraint
  long relative_degree_violations = 0;
  bool collided = false;
  bool terminated_infeasible = false;
  std::string termination;
  std::optional<double> t_goal;
  double u_norm_sum = 0.0;
  double u_norm_sumsq = 0.0;
  double solve_time_sum = 0.0;  // seconds
  double solve_time_sumsq = 0.0;
  long solves = 0;
};

struct SimRecord {
  std::vector<StepRecord> steps;
  RunSummary summary;
};

struct SimOptions {
  bool keep_trajectory = true;
  /// Replaces all randomness (initial sample, process and sensor noise) by
  /// zeros; the truth then starts at the initial state mean.
  bool noiseless = false;
};

namespace detail {

// Square root of a PSD matrix usable for sampling N(0, M).
inline MatrixXd psd_sqrt(const MatrixXd& m) {
  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (m + m.transpose()));
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

inline VectorXd standard_normal(std::mt19937_64& rng, Index n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

inline bool state_in_constraint(const VectorXd& x, const SafetySpec& spec) {
  if (const auto* hs = std::get_if<RiskHalfSpace>(&spec.geometry)) return hs->alpha().dot(x) >= hs->beta();
  return obstacle_clearance(x, std::get<CircularObstacle>(spec.geometry)) >= 0.0;
}

inline VectorXd saturate(const VectorXd& u, const std::optional<BoxBounds>& bounds) {
  if (!bounds) return u;
  return u.cwiseMax(bounds->lower).cwiseMin(bounds->upper);
}

// Reference controller of a scenario, one instance per run.
class Reference {
 public:
  Reference(const ReferenceSpec& spec, std::uint64_t seed) : kind_(spec.kind), constant_(spec.constant_u) {
    if (kind_ == ReferenceKind::lqr) lqr_.emplace(spec.lqr);
    if (kind_ == ReferenceKind::adversarial) {
      adversary_.emplace(spec.box_lower, spec.box_upper, spec.position_indices, spec.u_max, seed, spec.period,
                         spec.overshoot);
    }
  }

  VectorXd operator()(double t, const SystemModel& model, const VectorXd& mean) {
    switch (kind_) {
      case ReferenceKind::lqr: return (*lqr_)(model, mean);
      case ReferenceKind::adversarial: return (*adversary_)(t, mean);
      case ReferenceKind::constant: return constant_;
    }
    return constant_;
  }

 private:
  ReferenceKind kind_;
  VectorXd constant_;
  std::optional<LqrReference> lqr_;
  std::optional<AdversarialReference> adversary_;
};

inline SafetyFilter make_filter(const Scenario& sc, ControllerKind kind) {
  SafetyFilterConfig cfg;
  cfg.options.epsilon = sc.epsilon;
  cfg.options.bounds = sc.bounds;
  cfg.options.slack_weight = sc.slack_weight;
  cfg.alpha_mode = sc.alpha_mode;
  cfg.mean_only = kind == ControllerKind::state_cbf;
  return SafetyFilter(sc.constraints, cfg);
}

inline std::vector<double> belief_margins(const GaussianBelief& b, const std::vector<RiskHalfSpace>& hs) {
  std::vector<double> out;
  out.reserve(hs.size());
  for (const auto& h : hs) out.push_back(var_value(b, h));
  return out;
}

}  // namespace detail

/// Closed-loop run: Euler–Maruyama ground truth, continuous-discrete EKF
/// belief, and the selected controller, all at the scenario's dt.
///
/// A measurement fires at the end of the first step at or after each sensing
/// period 1/f_s of the region active at the previous measurement. The safety
/// filter uses the sensor of the region that contains the belief mean.
inline SimRecord simulate(const Scenario& sc, ControllerKind kind, std::uint64_t seed, const SimOptions& opt = {}) {
  const SystemModel model = sc.build_model();
  const Index n = model.state_dim();
  const Index nc = static_cast<Index>(sc.constraints.size());
  std::mt19937_64 rng(seed);

  VectorXd x = sc.state_mean;
  if (!opt.noiseless) x += detail::psd_sqrt(sc.state_cov) * detail::standard_normal(rng, n);
  GaussianBelief b(sc.belief_mean, sc.belief_cov);

  const MatrixXd q_sqrt = detail::psd_sqrt(model.motion_noise());
  SafetyFilter filter = detail::make_filter(sc, kind);
  detail::Reference reference(sc.reference, seed);

  SimRecord rec;
  RunSummary& sum = rec.summary;
  sum.seed = seed;
  const long total_steps = std::lround(sc.duration / sc.dt);
  if (opt.keep_trajectory) rec.steps.reserve(static_cast<std::size_t>(total_steps + 1));

  auto period_of = [&](int region) {
    return 1.0 / (region < 0 ? sc.sensing.default_rate_hz : sc.sensing.regions[static_cast<std::size_t>(region)].rate_hz);
  };
  auto sensing_region = [&](const VectorXd& truth, const GaussianBelief& belief) {
    return sc.sensing.region_of(sc.sensing.keyed_on_belief ? belief.mean() : truth);
  };
  double next_measurement = period_of(sensing_region(x, b));
  const double time_tol = 1e-9 * sc.dt;

  for (long k = 0; k <= total_steps; ++k) {
    const double t = static_cast<double>(k) * sc.dt;
    StepRecord step;
    step.t = t;
    if (opt.keep_trajectory) {
      step.x = x;
      step.belief = b.to_vector();
    }
    step.u_ref = reference(t, model, b.mean());

    std::vector<RiskHalfSpace> halfspaces;
    if (kind == ControllerKind::lqr_only) {
      step.u = detail::saturate(step.u_ref, sc.bounds);
      halfspaces = filter.halfspaces(b);
      step.h_b = detail::belief_margins(b, halfspaces);
      step.h_tilde = step.h_b;
      step.gamma.assign(static_cast<std::size_t>(nc), 0.0);
    } else {
      const ObservationModel ctrl_obs = sc.sensing.observation(n, sc.sensing.region_of(b.mean()));
      FilterResult res;
      try {
        const auto start = std::chrono::steady_clock::now();
        res = filter.step(b, model, ctrl_obs, step.u_ref);
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        sum.solve_time_sum += elapsed;
        sum.solve_time_sumsq += elapsed * elapsed;
        ++sum.solves;
      } catch (const InfeasibleError& e) {
        sum.terminated_infeasible = true;
        sum.termination = e.what();
        logging::error(std::string("run terminated: ") + e.what());
        break;
      }
      step.u = res.u;
      step.slack = res.slack_used;
      for (const auto& row : res.rows) {
        step.h_tilde.push_back(row.h_tilde);
        step.h_b.push_back(row.h_b);
        step.gamma.push_back(row.gamma);
        if (row.relative_degree_violation) ++sum.relative_degree_violations;
      }
      if (kind == ControllerKind::state_cbf) step.h_tilde = step.h_b;
    }

    ++sum.steps;
    if (step.slack) ++sum.slack_events;
    bool violated = false;
    for (const auto& c : sc.constraints) violated = violated || !detail::state_in_constraint(x, c);
    if (violated) {
      ++sum.violation_steps;
      sum.collided = true;
    }
    if (std::any_of(step.h_b.begin(), step.h_b.end(), [](double h) { return h < 0.0; })) ++sum.belief_leave_steps;
    const double un = step.u.norm();
    sum.u_norm_sum += un;
    sum.u_norm_sumsq += un * un;
    if (sc.goal && !sum.t_goal &&
        (position_of(b.mean(), sc.goal->position_indices) - sc.goal->target).norm() <= sc.goal->tolerance) {
      sum.t_goal = t;
    }

    if (k == total_steps) {
      if (opt.keep_trajectory) rec.steps.push_back(std::move(step));
      break;
    }

    // Ground truth, Euler–Maruyama.
    VectorXd x_next = x + sc.dt * model.velocity(x, step.u);
    if (!opt.noiseless) x_next += std::sqrt(sc.dt) * (q_sqrt * detail::standard_normal(rng, n));

    // Belief flow, then a jump if a measurement is due.
    b = GaussianBelief::from_vector(integrate_flow(b.to_vector(), model, step.u, sc.dt, sc.integrator),
                                    PsdRepair::clamp);
    const double t_next = static_cast<double>(k + 1) * sc.dt;
    if (t_next >= next_measurement - time_tol) {
      const int region = sensing_region(x_next, b);
      const ObservationModel obs = sc.sensing.observation(n, region);
      VectorXd z = obs.ell(x_next);
      if (!opt.noiseless) z += detail::psd_sqrt(obs.noise()) * detail::standard_normal(rng, z.size());
      const std::vector<RiskHalfSpace> hs = filter.halfspaces(b);
      const std::vector<double> before = detail::belief_margins(b, hs);
      b = kalman_update(b, obs, z);
      const std::vector<double> after = detail::belief_margins(b, hs);
      for (std::size_t i = 0; i < hs.size(); ++i) {
        if (before[i] >= 0.0 && after[i] < 0.0) {
          ++sum.jump_leave_events;
          break;
        }
      }
      ++sum.measurements;
      filter.on_measurement();
      step.measured = true;
      step.z = z;
      next_measurement += period_of(region);
      if (next_measurement <= t_next + time_tol) next_measurement = t_next + period_of(region);
    }

    if (opt.keep_trajectory) rec.steps.push_back(std::move(step));
    x = std::move(x_next);
  }
  return rec;
}

/// Aggregate statistics over many runs (one row of a results table).
struct MetricsReport {
  std::string scenario;
  std::string controller;
  double epsilon = 0.5;
  std::uint64_t base_seed = 0;
  long runs = 0;
  long collisions = 0;  // runs whose true state ever left the safe set
  long total_steps = 0;
  double violation_fraction = 0.0;     // steps with the true state outside the safe set
  double belief_leave_fraction = 0.0;  // steps with some h_b(b) < 0
  long measurements = 0;
  long jump_leave_events = 0;
  double jump_leave_fraction = 0.0;
  long slack_events = 0;
  long infeasible_runs = 0;
  long relative_degree_violations = 0;
  double u_norm_mean = 0.0;
  double u_norm_std = 0.0;
  long goal_reached = 0;
  long goal_missed = 0;
  double t_goal_mean = std::numeric_limits<double>::quiet_NaN();
  double t_goal_std = std::numeric_limits<double>::quiet_NaN();
  // Wall-clock statistics; machine dependent.
  double solve_time_mean = 0.0;
  double solve_time_std = 0.0;
};

namespace detail {

inline double pooled_std(double sum, double sumsq, double count) {
  if (count < 2.0) return 0.0;
  const double mean = sum / count;
  return std::sqrt(std::max(0.0, (sumsq - count * mean * mean) / (count - 1.0)));
}

}  // namespace detail

/// Reduces run summaries in run order, so the result does not depend on how
/// runs were scheduled.
inline MetricsReport aggregate(const std::vector<RunSummary>& runs) {
  MetricsReport m;
  m.runs = static_cast<long>(runs.size());
  double u_sum = 0.0, u_sumsq = 0.0, time_sum = 0.0, time_sumsq = 0.0, tg_sum = 0.0, tg_sumsq = 0.0;
  long violation_steps = 0, leave_steps = 0, solves = 0;
  for (const auto& r : runs) {
    m.collisions += r.collided ? 1 : 0;
    m.total_steps += r.steps;
    violation_steps += r.violation_steps;
    leave_steps += r.belief_leave_steps;
    m.measurements += r.measurements;
    m.jump_leave_events += r.jump_leave_events;
    m.slack_events += r.slack_events;
    m.infeasible_runs += r.terminated_infeasible ? 1 : 0;
    m.relative_degree_violations += r.relative_degree_violations;
    u_sum += r.u_norm_sum;
    u_sumsq += r.u_norm_sumsq;
    time_sum += r.solve_time_sum;
    time_sumsq += r.solve_time_sumsq;
    solves += r.solves;
    if (r.t_goal) {
      ++m.goal_reached;
      tg_sum += *r.t_goal;
      tg_sumsq += *r.t_goal * *r.t_goal;
    } else {
      ++m.goal_missed;
    }
  }
  const double steps = static_cast<double>(m.total_steps);
  if (m.total_steps > 0) {
    m.violation_fraction = static_cast<double>(violation_steps) / steps;
    m.belief_leave_fraction = static_cast<double>(leave_steps) / steps;
    m.u_norm_mean = u_sum / steps;
    m.u_norm_std = detail::pooled_std(u_sum, u_sumsq, steps);
  }
  if (m.measurements > 0) {
    m.jump_leave_fraction = static_cast<double>(m.jump_leave_events) / static_cast<double>(m.measurements);
  }
  if (m.goal_reached > 0) {
    const double g = static_cast<double>(m.goal_reached);
    m.t_goal_mean = tg_sum / g;
    m.t_goal_std = detail::pooled_std(tg_sum, tg_sumsq, g);
  }
  if (solves > 0) {
    m.solve_time_mean = time_sum / static_cast<double>(solves);
    m.solve_time_std = detail::pooled_std(time_sum, time_sumsq, static_cast<double>(solves));
  }
  return m;
}

struct MonteCarloResult {
  MetricsReport metrics;
  std::vector<RunSummary> runs;
  std::vector<SimRecord> records;  // only with keep_records
};

/// Independent runs with seeds base_seed + i, spread over `workers` threads.
inline MonteCarloResult monte_carlo(const Scenario& sc, ControllerKind kind, int runs, int workers,
                                    std::uint64_t base_seed, bool keep_records = false) {
  if (runs < 1) throw ConfigError("monte_carlo: runs must be >= 1");
  workers = std::max(1, std::min(workers, runs));
  std::vector<SimRecord> records(static_cast<std::size_t>(runs));
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  SimOptions opt;
  opt.keep_trajectory = keep_records;

  auto work = [&](int w) {
    try {
      for (int i = next++; i < runs; i = next++) {
        records[static_cast<std::size_t>(i)] = simulate(sc, kind, base_seed + static_cast<std::uint64_t>(i), opt);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  MonteCarloResult out;
  out.runs.reserve(records.size());
  for (const auto& r : records) out.runs.push_back(r.summary);
  out.metrics = aggregate(out.runs);
  out.metrics.scenario = sc.name;
  out.metrics.controller = to_string(kind);
  out.metrics.epsilon = sc.epsilon;
  out.metrics.base_seed = base_seed;
  if (keep_records) out.records = std::move(records);
  return out;
}

/// JSON form of a report. Wall-clock fields are included only on request, so
/// that the default serialization is reproducible byte for byte.
inline nlohmann::ordered_json metrics_json(const MetricsReport& m, bool include_timing = true) {
  auto num = [](double v) -> nlohmann::ordered_json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  nlohmann::ordered_json j;
  j["scenario"] = m.scenario;
  j["controller"] = m.controller;
  j["epsilon"] = m.epsilon;
  j["base_seed"] = m.base_seed;
  j["runs"] = m.runs;
  j["collisions"] = m.collisions;
  j["total_steps"] = m.total_steps;
  j["violation_fraction"] = m.violation_fraction;
  j["belief_leave_fraction"] = m.belief_leave_fraction;
  j["measurements"] = m.measurements;
  j["jump_leave_events"] = m.jump_leave_events;
  j["jump_leave_fraction"] = m.jump_leave_fraction;
  j["slack_events"] = m.slack_events;
  j["infeasible_runs"] = m.infeasible_runs;
  j["relative_degree_violations"] = m.relative_degree_violations;
  j["u_norm_mean"] = m.u_norm_mean;
  j["u_norm_std"] = m.u_norm_std;
  j["goal_reached"] = m.goal_reached;
  j["goal_missed"] = m.goal_missed;
  j["t_goal_mean"] = num(m.t_goal_mean);
  j["t_goal_std"] = num(m.t_goal_std);
  if (include_timing) {
    j["solve_time_mean_s"] = m.solve_time_mean;
    j["solve_time_std_s"] = m.solve_time_std;
  }
  return j;
}

/// Per-run CSV. Columns: t, x_i, mu_i, S_i_j (upper triangle), uref_j, u_j,
/// htilde_k, hb_k, gamma_k, slack, meas.
inline void write_csv(std::ostream& os, const SimRecord& rec, Index n, Index m, std::size_t constraints) {
  os << "t";
  for (Index i = 0; i < n; ++i) os << ",x" << i;
  for (Index i = 0; i < n; ++i) os << ",mu" << i;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) os << ",S" << i << '_' << j;
  }
  for (Index j = 0; j < m; ++j) os << ",uref" << j;
  for (Index j = 0; j < m; ++j) os << ",u" << j;
  for (std::size_t k = 0; k < constraints; ++k) os << ",htilde" << k;
  for (std::size_t k = 0; k < constraints; ++k) os << ",hb" << k;
  for (std::size_t k = 0; k < constraints; ++k) os << ",gamma" << k;
  os << ",slack,meas\n";
  os << std::setprecision(10);
  for (const auto& s : rec.steps) {
    os << s.t;
    for (Index i = 0; i < s.x.size(); ++i) os << ',' << s.x(i);
    for (Index i = 0; i < s.belief.size(); ++i) os << ',' << s.belief(i);
    for (Index j = 0; j < s.u_ref.size(); ++j) os << ',' << s.u_ref(j);
    for (Index j = 0; j < s.u.size(); ++j) os << ',' << s.u(j);
    for (double v : s.h_tilde) os << ',' << v;
    for (double v : s.h_b) os << ',' << v;
    for (double v : s.gamma) os << ',' << v;
    os << ',' << (s.slack ? 1 : 0) << ',' << (s.measured ? 1 : 0) << '\n';
  }
}

struct BoundRow {
  double t = 0.0;
  std::size_t constraint = 0;
  double natural_bound = 0.0;
  double gamma = 0.0;
  double h_b = 0.0;
};

/// natural_bound and gamma_margin per constraint along the nominal run of a
/// scenario: no process noise, no initial sampling and noise-free
/// measurements, with the BCBF controller in the loop.
inline std::vector<BoundRow> bound_report(const Scenario& sc) {
  SimOptions opt;
  opt.noiseless = true;
  const SimRecord rec = simulate(sc, ControllerKind::bcbf, sc.seed, opt);
  const SystemModel model = sc.build_model();
  const Index n = model.state_dim();
  SafetyFilter linearizer = detail::make_filter(sc, ControllerKind::bcbf);
  std::vector<BoundRow> rows;
  for (const auto& s : rec.steps) {
    const GaussianBelief b = GaussianBelief::from_vector(s.belief, PsdRepair::clamp);
    const ObservationModel obs = sc.sensing.observation(n, sc.sensing.region_of(b.mean()));
    const auto hs = linearizer.halfspaces(b);
    for (std::size_t k = 0; k < hs.size(); ++k) {
      BoundRow r;
      r.t = s.t;
      r.constraint = k;
      r.natural_bound = natural_bound(b, obs, hs[k]);
      r.gamma = gamma_margin(b, obs, hs[k], sc.epsilon);
      r.h_b = var_value(b, hs[k]);
      rows.push_back(r);
    }
  }
  return rows;
}

inline void write_bound_report(std::ostream& os, const std::vector<BoundRow>& rows) {
  os << "t,constraint,natural_bound,gamma,h_b\n" << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.t << ',' << r.constraint << ',' << r.natural_bound << ',' << r.gamma << ',' << r.h_b << '\n';
  }
}

}  // namespace bcbf
