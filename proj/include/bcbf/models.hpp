#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "bcbf/belief_dynamics.hpp"
#include "bcbf/errors.hpp"
#include "bcbf/lqr.hpp"

namespace bcbf {

/// Unicycle with acceleration and turn-rate inputs.
/// State (p_x, p_y, v, phi), input (a, omega).
struct UnicycleDynamics {
  Index state_dim() const { return 4; }
  Index input_dim() const { return 2; }

  template <typename S>
  VectorX<S> drift(const VectorX<S>& x) const {
    using std::cos;
    using std::sin;
    VectorX<S> f(4);
    f << x(2) * cos(x(3)), x(2) * sin(x(3)), S(0.0), S(0.0);
    return f;
  }

  template <typename S>
  MatrixX<S> input_map(const VectorX<S>&) const {
    MatrixX<S> g = MatrixX<S>::Zero(4, 2);
    g(2, 0) = S(1.0);
    g(3, 1) = S(1.0);
    return g;
  }

  template <typename S>
  MatrixX<S> drift_jacobian(const VectorX<S>& x) const {
    using std::cos;
    using std::sin;
    MatrixX<S> a = MatrixX<S>::Zero(4, 4);
    a(0, 2) = cos(x(3));
    a(0, 3) = -x(2) * sin(x(3));
    a(1, 2) = sin(x(3));
    a(1, 3) = x(2) * cos(x(3));
    return a;
  }
};

/// d-dimensional double integrator: state (p, p_dot), input = acceleration.
struct DoubleIntegratorDynamics {
  Index dim = 1;

  Index state_dim() const { return 2 * dim; }
  Index input_dim() const { return dim; }

  template <typename S>
  VectorX<S> drift(const VectorX<S>& x) const {
    VectorX<S> f = VectorX<S>::Zero(2 * dim);
    f.head(dim) = x.tail(dim);
    return f;
  }

  template <typename S>
  MatrixX<S> input_map(const VectorX<S>&) const {
    MatrixX<S> g = MatrixX<S>::Zero(2 * dim, dim);
    for (Index i = 0; i < dim; ++i) g(dim + i, i) = S(1.0);
    return g;
  }

  template <typename S>
  MatrixX<S> drift_jacobian(const VectorX<S>&) const {
    MatrixX<S> a = MatrixX<S>::Zero(2 * dim, 2 * dim);
    for (Index i = 0; i < dim; ++i) a(i, dim + i) = S(1.0);
    return a;
  }
};

/// Linear time-invariant dynamics x_dot = A x + B u.
struct LinearDynamics {
  MatrixXd a;
  MatrixXd b;

  Index state_dim() const { return a.rows(); }
  Index input_dim() const { return b.cols(); }

  template <typename S>
  VectorX<S> drift(const VectorX<S>& x) const {
    return a.cast<S>() * x;
  }
  template <typename S>
  MatrixX<S> input_map(const VectorX<S>&) const {
    return b.cast<S>();
  }
  template <typename S>
  MatrixX<S> drift_jacobian(const VectorX<S>&) const {
    return a.cast<S>();
  }
};

inline MatrixXd diag(std::initializer_list<double> entries) {
  VectorXd d(static_cast<Index>(entries.size()));
  Index i = 0;
  for (double e : entries) d(i++) = e;
  return d.asDiagonal();
}

inline MatrixXd unicycle_default_q() { return diag({0.1 * 0.1, 0.1 * 0.1, 0.005 * 0.005, 0.005 * 0.005}); }
inline MatrixXd unicycle_default_r() { return diag({0.2 * 0.2, 0.2 * 0.2, 0.1 * 0.1, 0.1 * 0.1}); }

inline SystemModel unicycle_model(const std::optional<MatrixXd>& q = std::nullopt) {
  return SystemModel(UnicycleDynamics{}, q.value_or(unicycle_default_q()));
}

/// Full-state unicycle sensor, 10 Hz by default.
inline ObservationModel unicycle_observation(const std::optional<MatrixXd>& r = std::nullopt, double rate_hz = 10.0) {
  return ObservationModel::selection(4, {0, 1, 2, 3}, r.value_or(unicycle_default_r()), rate_hz);
}

/// 3-D double integrator (drone) with motion noise variance 0.05^2 per state.
inline SystemModel drone_model(const std::optional<MatrixXd>& q = std::nullopt) {
  return SystemModel(DoubleIntegratorDynamics{3}, q.value_or(MatrixXd::Identity(6, 6) * 0.05 * 0.05));
}

inline ObservationModel drone_position_observation(const MatrixXd& r, double rate_hz) {
  return ObservationModel::selection(6, {0, 1, 2}, r, rate_hz);
}

/// Velocity-only sensing: position is unobservable and its estimate drifts.
inline ObservationModel drone_velocity_observation(const MatrixXd& r, double rate_hz) {
  return ObservationModel::selection(6, {3, 4, 5}, r, rate_hz);
}

/// Scalar single integrator x_dot = u.
inline SystemModel scalar_integrator_model(double q = 0.0) {
  return SystemModel(LinearDynamics{MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1)}, MatrixXd::Constant(1, 1, q));
}

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a;
}

/// Goal-tracking LQR on the belief mean. The model is relinearized at the mean
/// every call and the Riccati equation re-solved (warm-started).
struct LqrReferenceConfig {
  VectorXd goal;
  MatrixXd q;
  MatrixXd r;
  /// Coordinates whose error is wrapped to (-pi, pi].
  std::vector<Index> angle_indices;
  /// Speed coordinate kept away from zero in the linearization point,
  /// v_lin = sign(v) max(|v|, min_speed).
  std::optional<Index> speed_index;
  double min_speed = 0.1;
};

class LqrReference {
 public:
  explicit LqrReference(LqrReferenceConfig cfg) : cfg_(std::move(cfg)), lqr_(cfg_.q, cfg_.r) {}

  VectorXd operator()(const SystemModel& model, const VectorXd& mean) {
    if (mean.size() != cfg_.goal.size()) throw ConfigError("lqr_reference: goal has wrong dimension");
    VectorXd lin = mean;
    if (cfg_.speed_index) {
      double& v = lin(*cfg_.speed_index);
      v = std::copysign(std::max(std::abs(v), cfg_.min_speed), v);
    }
    const VectorXd u0 = VectorXd::Zero(model.input_dim());
    const MatrixXd a = model.jacobian(lin, u0);
    const MatrixXd b = model.input_map<double>(lin);
    VectorXd err = mean - cfg_.goal;
    for (Index i : cfg_.angle_indices) err(i) = wrap_angle(err(i));
    return lqr_.control(a, b, err);
  }

  const LqrReferenceConfig& config() const { return cfg_; }

 private:
  LqrReferenceConfig cfg_;
  LqrController lqr_;
};

/// Scripted operator that keeps pushing toward points outside an axis-aligned
/// box of positions, at full acceleration magnitude u_max. Targets are drawn
/// once from the seed and cycled every `period` seconds.
class AdversarialReference {
 public:
  AdversarialReference(VectorXd lower, VectorXd upper, std::vector<Index> position_indices, double u_max,
                       std::uint64_t seed, double period = 2.0, double overshoot = 1.0, int targets = 16)
      : lower_(std::move(lower)), upper_(std::move(upper)), idx_(std::move(position_indices)), u_max_(u_max),
        period_(period) {
    const Index d = lower_.size();
    if (upper_.size() != d || static_cast<Index>(idx_.size()) != d) {
      throw ConfigError("adversarial reference: box and position indices disagree in dimension");
    }
    if (!(u_max_ > 0.0) || !(period_ > 0.0) || targets < 1) {
      throw ConfigError("adversarial reference: u_max, period and target count must be positive");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> face(0, 2 * d - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < targets; ++k) {
      VectorXd t(d);
      for (Index i = 0; i < d; ++i) t(i) = lower_(i) + unit(rng) * (upper_(i) - lower_(i));
      const Index f = face(rng);
      const Index axis = f / 2;
      t(axis) = (f % 2 == 0) ? lower_(axis) - overshoot : upper_(axis) + overshoot;
      targets_.push_back(t);
    }
  }

  /// Acceleration command at time t for a state (mean) estimate.
  VectorXd operator()(double t, const VectorXd& mean) const {
    const VectorXd& target = current_target(t);
    VectorXd p(static_cast<Index>(idx_.size()));
    for (std::size_t k = 0; k < idx_.size(); ++k) p(static_cast<Index>(k)) = mean(idx_[k]);
    VectorXd dir = target - p;
    const double norm = dir.norm();
    if (norm < 1e-12) return VectorXd::Zero(dir.size());
    return u_max_ * dir / norm;
  }

  const VectorXd& current_target(double t) const {
    const auto k = static_cast<std::size_t>(std::max(0.0, std::floor(t / period_)));
    return targets_[k % targets_.size()];
  }
  const std::vector<VectorXd>& targets() const { return targets_; }

 private:
  VectorXd lower_;
  VectorXd upper_;
  std::vector<Index> idx_;
  double u_max_;
  double period_;
  std::vector<VectorXd> targets_;
};

}  // namespace bcbf
