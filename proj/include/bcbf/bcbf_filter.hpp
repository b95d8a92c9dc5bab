#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "bcbf/belief_dynamics.hpp"
#include "bcbf/dual.hpp"
#include "bcbf/errors.hpp"
#include "bcbf/gaussian_belief.hpp"
#include "bcbf/log.hpp"
#include "bcbf/obstacle.hpp"
#include "bcbf/qp.hpp"
#include "bcbf/special_functions.hpp"

namespace bcbf {

/// A risk-aware half-space used as a BCBF candidate of relative degree 1 or 2.
/// For order 2 the exponential-CBF gains zeta = (zeta_1, zeta_2) weight h and
/// h_dot; s^2 + zeta_2 s + zeta_1 must be Hurwitz.
struct BarrierConstraint {
  RiskHalfSpace hs;
  int order = 1;
  Eigen::Vector2d zeta{4.0, 4.0};

  void validate() const {
    if (order != 1 && order != 2) throw ConfigError("barrier order must be 1 or 2");
    if (order == 2 && !(zeta(0) > 0.0 && zeta(1) > 0.0)) {
      throw ConfigError("barrier gains must make s^2 + zeta_2 s + zeta_1 Hurwitz (both > 0)");
    }
  }
};

/// Gains placing both exponential-CBF poles at -pole.
inline Eigen::Vector2d zeta_from_double_pole(double pole) { return {pole * pole, 2.0 * pole}; }

/// Barrier value and its Lie derivatives along the belief dynamics.
struct LieDerivatives {
  double h = 0.0;     // h~ = h_b - gamma
  double lf_h = 0.0;  // dh/db f_b
  VectorXd lg_h;      // dh/db g_b
  double lf2_h = 0.0;  // order 2 only
  VectorXd lg_lf_h;    // order 2 only
};

namespace detail {

// Drift Lie derivative dh/db f_b at a flat belief of any scalar type.
template <typename S>
S drift_lie_derivative(const VectorX<S>& b, const SystemModel& model, const RiskHalfSpace& hs, double eps) {
  const VectorX<S> grad = var_gradient<S>(b, hs, eps);
  const BeliefAffineParts<S> parts = belief_affine_parts<S>(b, model);
  return grad.dot(parts.drift);
}

// Directional derivative of a scalar map of the belief along `dir`.
template <typename Fn>
double directional_derivative(Fn&& fn, const VectorXd& b, const VectorXd& dir) {
  VectorX<Dual1> bd(b.size());
  for (Index i = 0; i < b.size(); ++i) bd(i) = Dual1(b(i), dir(i));
  return fn(bd).deriv;
}

// Second-order terms: with phi(b) = L_f h(b), L_f^2 h = D phi [f_b] and
// L_g L_f h = D phi [g_b].
template <typename Phi>
void second_order_terms(Phi&& phi, const VectorXd& b, const BeliefAffineParts<double>& parts, LieDerivatives& out) {
  out.lf2_h = directional_derivative(phi, b, parts.drift);
  out.lg_lf_h.resize(parts.input_map.cols());
  for (Index j = 0; j < parts.input_map.cols(); ++j) {
    out.lg_lf_h(j) = directional_derivative(phi, b, parts.input_map.col(j));
  }
}

// Gradient of a generic scalar belief function by one forward pass per
// coordinate. Works for any scalar S the function accepts, lifted to Dual<S>.
template <typename S, typename Fn>
VectorX<S> dual_gradient(Fn&& fn, const VectorX<S>& b) {
  VectorX<S> grad(b.size());
  VectorX<Dual<S>> bd(b.size());
  for (Index i = 0; i < b.size(); ++i) bd(i) = Dual<S>(b(i), S(0.0));
  for (Index k = 0; k < b.size(); ++k) {
    bd(k).deriv = S(1.0);
    grad(k) = fn(bd).deriv;
    bd(k).deriv = S(0.0);
  }
  return grad;
}

// VaR of the linearized clearance with the direction alpha(mu) kept as a
// function of the mean: |mu_p - c| - r - q sqrt(2 alpha(mu)^T Sigma_p alpha(mu)) - gamma.
template <typename S>
S obstacle_var(const VectorX<S>& b, Index n, const CircularObstacle& obs, double quantile, double gamma) {
  using std::sqrt;
  const auto& idx = obs.position_indices;
  const Index k = static_cast<Index>(idx.size());
  VectorX<S> offset(k);
  for (Index i = 0; i < k; ++i) offset(i) = b(idx[static_cast<std::size_t>(i)]) - obs.center(i);
  S dist2(0.0);
  for (Index i = 0; i < k; ++i) dist2 += offset(i) * offset(i);
  const S dist = sqrt(dist2);
  S var(0.0);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) {
      Index r = idx[static_cast<std::size_t>(i)];
      Index c = idx[static_cast<std::size_t>(j)];
      if (r > c) std::swap(r, c);
      var += offset(i) * offset(j) * b(n + upper_index(r, c, n));
    }
  }
  var = var / dist2;
  return dist - obs.radius - quantile * sqrt(2.0 * var) - gamma;
}

}  // namespace detail

/// Lie derivatives of h~ = var_value(b, c.hs) along the belief dynamics.
/// Order-2 terms differentiate the analytic first Lie derivative with dual
/// numbers. The half-space direction is treated as fixed.
inline LieDerivatives lie_derivatives(const GaussianBelief& b, const SystemModel& model, const BarrierConstraint& c,
                                      double singular_eps = kDefaultSingularEps) {
  c.validate();
  if (c.hs.alpha().size() != model.state_dim() || b.dim() != model.state_dim()) {
    throw ConfigError("lie_derivatives: dimension mismatch");
  }
  const VectorXd bv = b.to_vector();
  const auto parts = belief_affine_parts<double>(bv, model);
  const VectorXd grad = detail::var_gradient<double>(bv, c.hs, singular_eps);
  LieDerivatives out;
  out.h = var_value(b, c.hs);
  out.lf_h = grad.dot(parts.drift);
  out.lg_h = parts.input_map.transpose() * grad;
  if (c.order == 2) {
    auto phi = [&](const VectorX<Dual1>& bd) {
      return detail::drift_lie_derivative<Dual1>(bd, model, c.hs, singular_eps);
    };
    detail::second_order_terms(phi, bv, parts, out);
  }
  return out;
}

/// Lie derivatives of the obstacle VaR barrier with alpha = (mu - c)/|mu - c|
/// differentiated along with the mean (instead of frozen per step).
inline LieDerivatives lie_derivatives_through_alpha(const GaussianBelief& b, const SystemModel& model,
                                                   const CircularObstacle& obs, int order, double gamma) {
  const Index n = model.state_dim();
  const double q = erfinv(1.0 - 2.0 * obs.delta);
  const VectorXd bv = b.to_vector();
  const auto parts = belief_affine_parts<double>(bv, model);
  auto h_fn = [&](const auto& bb) { return detail::obstacle_var(bb, n, obs, q, gamma); };
  const VectorXd grad = detail::dual_gradient<double>(h_fn, bv);
  LieDerivatives out;
  out.h = detail::obstacle_var<double>(bv, n, obs, q, gamma);
  out.lf_h = grad.dot(parts.drift);
  out.lg_h = parts.input_map.transpose() * grad;
  if (order == 2) {
    auto phi = [&](const VectorX<Dual1>& bd) {
      const VectorX<Dual1> g = detail::dual_gradient<Dual1>(h_fn, bd);
      return g.dot(belief_affine_parts<Dual1>(bd, model).drift);
    };
    detail::second_order_terms(phi, bv, parts, out);
  }
  return out;
}

/// Statistics of one measurement jump projected on alpha.
struct JumpStatistics {
  double xi = 0.0;          // deterministic increase of h_b from the covariance shrink
  double lambda_dir = 0.0;  // alpha^T Lambda alpha
};

inline JumpStatistics jump_statistics(const GaussianBelief& prior, const ObservationModel& obs,
                                      const RiskHalfSpace& hs) {
  const KalmanTerms t = kalman_terms(prior, obs);
  const VectorXd& alpha = hs.alpha();
  const VectorXd sigma_alpha = prior.cov() * alpha;
  const double s_minus = std::max(0.0, alpha.dot(sigma_alpha));
  const VectorXd h_sigma_alpha = t.h * sigma_alpha;
  // alpha^T K H Sigma alpha = alpha^T Lambda alpha for the optimal gain.
  const double shrink = std::max(0.0, (t.k.transpose() * alpha).dot(h_sigma_alpha));
  const double s_plus = std::max(0.0, s_minus - shrink);
  JumpStatistics js;
  js.xi = hs.quantile() * (std::sqrt(2.0 * s_minus) - std::sqrt(2.0 * s_plus));
  const VectorXd k_alpha = t.k.transpose() * alpha;
  js.lambda_dir = std::max(0.0, k_alpha.dot(t.s * k_alpha));
  return js;
}

inline constexpr double kDegenerateJumpVariance = 1e-15;

/// Upper bound on Pr[h_b(b+) < 0] for a prior on the boundary of C_b:
/// 1/2 (1 - erf(xi / sqrt(2 alpha^T Lambda alpha))).
inline double natural_bound(const GaussianBelief& prior, const ObservationModel& obs, const RiskHalfSpace& hs) {
  const JumpStatistics js = jump_statistics(prior, obs, hs);
  if (js.lambda_dir <= kDegenerateJumpVariance) return 0.0;
  return half_erfc(js.xi / std::sqrt(2.0 * js.lambda_dir));
}

/// Smallest shrink margin gamma that keeps b+ in C_b with probability
/// >= 1 - epsilon from the boundary of the shrunk set.
inline double gamma_margin(const GaussianBelief& prior, const ObservationModel& obs, const RiskHalfSpace& hs,
                           double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 0.5)) throw ConfigError("gamma_margin: epsilon must lie in (0, 0.5]");
  const JumpStatistics js = jump_statistics(prior, obs, hs);
  const double spread = js.lambda_dir <= kDegenerateJumpVariance ? 0.0 : std::sqrt(2.0 * js.lambda_dir);
  return std::max(0.0, spread * erfinv(1.0 - 2.0 * epsilon) - js.xi);
}

/// One QP row a^T u >= rhs together with the barrier telemetry it came from.
struct AssembledRow {
  VectorXd a;
  double rhs = 0.0;
  double h_tilde = 0.0;  // h_b - gamma
  double h_b = 0.0;      // gamma = 0
  double gamma = 0.0;
  bool relative_degree_violation = false;
};

/// Builds the QP row from Lie derivatives.
/// Order 1: L_g h u >= -h - L_f h.
/// Order 2: (L_g L_f h + zeta_2 L_g h) u >= -L_f^2 h - zeta_1 h - zeta_2 L_f h.
inline AssembledRow assemble_row(const LieDerivatives& ld, int order, const Eigen::Vector2d& zeta, double gamma) {
  AssembledRow row;
  row.h_tilde = ld.h;
  row.h_b = ld.h + gamma;
  row.gamma = gamma;
  if (order == 1) {
    row.a = ld.lg_h;
    row.rhs = -ld.h - ld.lf_h;
  } else {
    row.a = ld.lg_lf_h + zeta(1) * ld.lg_h;
    row.rhs = -ld.lf2_h - zeta(0) * ld.h - zeta(1) * ld.lf_h;
  }
  const double scale = 1.0 + std::abs(row.rhs);
  if (row.a.norm() <= 1e-12 * scale && row.rhs > 0.0) {
    row.relative_degree_violation = true;
    logging::warn("barrier row has vanishing input gain with positive right-hand side (relative degree violated)");
  }
  return row;
}

/// Assembles the BCBF row for one constraint. gamma is recomputed from the
/// current belief (as proxy for the next prior) and floored at gamma_floor.
inline AssembledRow assemble_constraint(const GaussianBelief& b, const SystemModel& model,
                                        const ObservationModel& obs, const BarrierConstraint& c, double epsilon,
                                        double gamma_floor = 0.0) {
  const double gamma = std::max(gamma_floor, gamma_margin(b, obs, c.hs, epsilon));
  BarrierConstraint shrunk{c.hs.with_gamma(gamma), c.order, c.zeta};
  return assemble_row(lie_derivatives(b, model, shrunk), c.order, c.zeta, gamma);
}

struct FilterOptions {
  double epsilon = 0.5;
  std::optional<BoxBounds> bounds;
  std::optional<double> slack_weight = 1e6;
};

struct FilterResult {
  VectorXd u;
  std::vector<AssembledRow> rows;
  QpSolution qp;
  bool slack_used = false;
};

inline FilterResult solve_rows(std::vector<AssembledRow> rows, const VectorXd& u_ref, const FilterOptions& opt) {
  QpProblem qp;
  qp.u_ref = u_ref;
  qp.bounds = opt.bounds;
  qp.slack_weight = opt.slack_weight;
  qp.rows.reserve(rows.size());
  for (const auto& r : rows) qp.rows.push_back({r.a, r.rhs});
  FilterResult res;
  res.qp = solve_qp(qp);
  res.u = res.qp.u;
  res.slack_used = res.qp.slack_used;
  res.rows = std::move(rows);
  if (res.slack_used) logging::info("safety filter relaxed barrier rows (slack " + std::to_string(res.qp.slack) + ")");
  return res;
}

/// Risk-aware safety filter: one BCBF row per constraint, projected QP.
inline FilterResult filter_control(const GaussianBelief& b, const SystemModel& model, const ObservationModel& obs,
                                   const std::vector<BarrierConstraint>& constraints, const VectorXd& u_ref,
                                   const FilterOptions& opt = {}) {
  if (u_ref.size() != model.input_dim()) throw ConfigError("filter_control: u_ref has wrong dimension");
  std::vector<AssembledRow> rows;
  rows.reserve(constraints.size());
  for (const auto& c : constraints) rows.push_back(assemble_constraint(b, model, obs, c, opt.epsilon));
  return solve_rows(std::move(rows), u_ref, opt);
}

enum class AlphaMode { frozen, differentiated };

/// Geometry of one safety constraint before linearization.
struct SafetySpec {
  std::variant<CircularObstacle, RiskHalfSpace> geometry;
  int order = 1;
  Eigen::Vector2d zeta{4.0, 4.0};
};

struct SafetyFilterConfig {
  FilterOptions options;
  AlphaMode alpha_mode = AlphaMode::frozen;
  /// Mean-state CBF baseline: risk level forced to 0.5 and no shrink margin,
  /// so every covariance term drops out.
  bool mean_only = false;
};

/// Stateful wrapper around filter_control for closed-loop use. Keeps, per
/// constraint, the running maximum of gamma since the last measurement and the
/// last well-defined obstacle direction.
class SafetyFilter {
 public:
  SafetyFilter(std::vector<SafetySpec> specs, SafetyFilterConfig config)
      : specs_(std::move(specs)), config_(std::move(config)), gamma_max_(specs_.size(), 0.0),
        held_alpha_(specs_.size()) {
    for (const auto& s : specs_) BarrierConstraint{halfspace_placeholder(s), s.order, s.zeta}.validate();
  }

  std::size_t size() const { return specs_.size(); }
  const std::vector<SafetySpec>& specs() const { return specs_; }
  const SafetyFilterConfig& config() const { return config_; }

  /// Current risk-aware half-spaces (gamma = 0, scenario risk level).
  std::vector<RiskHalfSpace> halfspaces(const GaussianBelief& b) {
    std::vector<RiskHalfSpace> out;
    out.reserve(specs_.size());
    for (std::size_t i = 0; i < specs_.size(); ++i) out.push_back(linearize(i, b));
    return out;
  }

  FilterResult step(const GaussianBelief& b, const SystemModel& model, const ObservationModel& obs,
                    const VectorXd& u_ref) {
    std::vector<AssembledRow> rows;
    rows.reserve(specs_.size());
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const SafetySpec& spec = specs_[i];
      RiskHalfSpace hs = linearize(i, b);
      double gamma = 0.0;
      if (config_.mean_only) {
        hs = hs.with_delta(0.5);
      } else {
        gamma = std::max(gamma_max_[i], gamma_margin(b, obs, hs, config_.options.epsilon));
        gamma_max_[i] = gamma;
      }
      LieDerivatives ld;
      const auto* obstacle = std::get_if<CircularObstacle>(&spec.geometry);
      if (obstacle && config_.alpha_mode == AlphaMode::differentiated && !config_.mean_only) {
        ld = lie_derivatives_through_alpha(b, model, *obstacle, spec.order, gamma);
      } else {
        ld = lie_derivatives(b, model, BarrierConstraint{hs.with_gamma(gamma), spec.order, spec.zeta});
      }
      AssembledRow row = assemble_row(ld, spec.order, spec.zeta, gamma);
      if (config_.mean_only) {
        // Telemetry always reports the risk-aware value at the scenario level.
        row.h_b = var_value(b, linearize(i, b));
      }
      rows.push_back(std::move(row));
    }
    return solve_rows(std::move(rows), u_ref, config_.options);
  }

  /// A measurement arrived: restart the running maximum of gamma.
  void on_measurement() { std::fill(gamma_max_.begin(), gamma_max_.end(), 0.0); }

 private:
  static RiskHalfSpace halfspace_placeholder(const SafetySpec& s) {
    if (const auto* hs = std::get_if<RiskHalfSpace>(&s.geometry)) return *hs;
    const auto& o = std::get<CircularObstacle>(s.geometry);
    VectorXd alpha = VectorXd::Ones(1);
    return RiskHalfSpace(alpha, 0.0, o.delta);
  }

  RiskHalfSpace linearize(std::size_t i, const GaussianBelief& b) {
    const SafetySpec& spec = specs_[i];
    if (const auto* hs = std::get_if<RiskHalfSpace>(&spec.geometry)) return *hs;
    const auto& obstacle = std::get<CircularObstacle>(spec.geometry);
    RiskHalfSpace hs = obstacle_halfspace(b, obstacle, held_alpha_[i]);
    held_alpha_[i] = hs.alpha();
    return hs;
  }

  std::vector<SafetySpec> specs_;
  SafetyFilterConfig config_;
  std::vector<double> gamma_max_;
  std::vector<std::optional<VectorXd>> held_alpha_;
};

}  // namespace bcbf
