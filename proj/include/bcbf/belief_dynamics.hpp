#pragma once

#include <algorithm>
#include <concepts>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bcbf/dual.hpp"
#include "bcbf/errors.hpp"
#include "bcbf/gaussian_belief.hpp"

namespace bcbf {

/// Requirements on a concrete motion model. All members are templated on the
/// scalar so that dual numbers can be pushed through the dynamics.
///
///   Index state_dim() const;  Index input_dim() const;
///   VectorX<S> drift(const VectorX<S>& x) const;           // f(x)
///   MatrixX<S> input_map(const VectorX<S>& x) const;       // g(x), n x m
///   MatrixX<S> drift_jacobian(const VectorX<S>& x) const;  // df/dx
///
/// Optionally, when g depends on x:
///   std::vector<MatrixX<S>> input_map_jacobians(const VectorX<S>& x) const;  // d g_j / dx per column
template <typename M>
concept ControlAffineDynamics = requires(const M& m, const VectorX<double>& x, const VectorX<Dual1>& xd) {
  { m.state_dim() } -> std::convertible_to<Index>;
  { m.input_dim() } -> std::convertible_to<Index>;
  { m.template drift<double>(x) } -> std::convertible_to<VectorX<double>>;
  { m.template input_map<double>(x) } -> std::convertible_to<MatrixX<double>>;
  { m.template drift_jacobian<double>(x) } -> std::convertible_to<MatrixX<double>>;
  { m.template drift<Dual1>(xd) } -> std::convertible_to<VectorX<Dual1>>;
};

template <typename M>
concept HasInputMapJacobians = requires(const M& m, const VectorX<double>& x) {
  { m.template input_map_jacobians<double>(x) } -> std::convertible_to<std::vector<MatrixX<double>>>;
};

/// Control-affine stochastic motion model dx = (f(x) + g(x) u) dt + dw,
/// w ~ N(0, Q dt). Type-erases a ControlAffineDynamics implementation.
class SystemModel {
 public:
  template <ControlAffineDynamics Impl>
  SystemModel(Impl impl, MatrixXd motion_noise)
      : n_(impl.state_dim()), m_(impl.input_dim()), q_(std::move(motion_noise)) {
    if (q_.rows() != n_ || q_.cols() != n_) throw ConfigError("SystemModel: Q must be n x n");
    if (!(q_ - q_.transpose()).isZero(1e-12 * std::max(1.0, q_.norm()))) {
      throw ConfigError("SystemModel: Q must be symmetric");
    }
    if (n_ > 0) {
      const double min_eig = Eigen::SelfAdjointEigenSolver<MatrixXd>(q_).eigenvalues().minCoeff();
      if (min_eig < -1e-12) throw ConfigError("SystemModel: Q must be positive semidefinite");
    }
    auto shared = std::make_shared<const Impl>(std::move(impl));
    bind<double>(shared, fns_d_);
    bind<Dual1>(shared, fns_dual_);
    constant_input_map_ = !HasInputMapJacobians<Impl>;
  }

  Index state_dim() const { return n_; }
  Index input_dim() const { return m_; }
  const MatrixXd& motion_noise() const { return q_; }
  /// True when g(x) does not depend on x; then the covariance flow is
  /// independent of u.
  bool constant_input_map() const { return constant_input_map_; }

  template <typename S>
  VectorX<S> drift(const VectorX<S>& x) const { return fns<S>().drift(x); }
  template <typename S>
  MatrixX<S> input_map(const VectorX<S>& x) const { return fns<S>().input_map(x); }
  template <typename S>
  MatrixX<S> drift_jacobian(const VectorX<S>& x) const { return fns<S>().drift_jacobian(x); }
  /// d g_j / dx for each input column j; empty when g is constant.
  template <typename S>
  std::vector<MatrixX<S>> input_map_jacobians(const VectorX<S>& x) const {
    return constant_input_map_ ? std::vector<MatrixX<S>>{} : fns<S>().input_map_jacobians(x);
  }

  /// Jacobian of the noise-free motion f(x) + g(x) u with respect to x.
  MatrixXd jacobian(const VectorXd& x, const VectorXd& u) const {
    MatrixXd a = drift_jacobian<double>(x);
    const auto gj = input_map_jacobians<double>(x);
    for (std::size_t j = 0; j < gj.size(); ++j) a += u(static_cast<Index>(j)) * gj[j];
    return a;
  }

  VectorXd velocity(const VectorXd& x, const VectorXd& u) const {
    return drift<double>(x) + input_map<double>(x) * u;
  }

 private:
  template <typename S>
  struct Fns {
    std::function<VectorX<S>(const VectorX<S>&)> drift;
    std::function<MatrixX<S>(const VectorX<S>&)> input_map;
    std::function<MatrixX<S>(const VectorX<S>&)> drift_jacobian;
    std::function<std::vector<MatrixX<S>>(const VectorX<S>&)> input_map_jacobians;
  };

  template <typename S, typename Impl>
  static void bind(const std::shared_ptr<const Impl>& impl, Fns<S>& out) {
    out.drift = [impl](const VectorX<S>& x) { return VectorX<S>(impl->template drift<S>(x)); };
    out.input_map = [impl](const VectorX<S>& x) { return MatrixX<S>(impl->template input_map<S>(x)); };
    out.drift_jacobian = [impl](const VectorX<S>& x) { return MatrixX<S>(impl->template drift_jacobian<S>(x)); };
    if constexpr (HasInputMapJacobians<Impl>) {
      out.input_map_jacobians = [impl](const VectorX<S>& x) { return impl->template input_map_jacobians<S>(x); };
    }
  }

  template <typename S>
  const Fns<S>& fns() const {
    if constexpr (std::is_same_v<S, double>) {
      return fns_d_;
    } else {
      static_assert(std::is_same_v<S, Dual1>, "SystemModel supports double and Dual<double> scalars");
      return fns_dual_;
    }
  }

  Index n_;
  Index m_;
  MatrixXd q_;
  bool constant_input_map_ = true;
  Fns<double> fns_d_;
  Fns<Dual1> fns_dual_;
};

/// Discrete measurement model z = l(x) + v, v ~ N(0, R), sampled at rate_hz.
class ObservationModel {
 public:
  using MapFn = std::function<VectorXd(const VectorXd&)>;
  using JacobianFn = std::function<MatrixXd(const VectorXd&)>;

  ObservationModel(MapFn ell, JacobianFn jacobian, MatrixXd noise, double rate_hz)
      : ell_(std::move(ell)), jacobian_(std::move(jacobian)), r_(std::move(noise)), rate_hz_(rate_hz) {
    if (r_.rows() != r_.cols() || r_.rows() == 0) throw ConfigError("ObservationModel: R must be square");
    if (!(r_ - r_.transpose()).isZero(1e-12 * std::max(1.0, r_.norm()))) {
      throw ConfigError("ObservationModel: R must be symmetric");
    }
    if (Eigen::LLT<MatrixXd>(r_).info() != Eigen::Success) {
      throw ConfigError("ObservationModel: R must be positive definite");
    }
    if (!(rate_hz_ > 0.0)) throw ConfigError("ObservationModel: sampling rate must be > 0");
  }

  /// Linear observation of a subset of state coordinates.
  static ObservationModel selection(Index n, std::vector<Index> indices, MatrixXd noise, double rate_hz) {
    MatrixXd h = MatrixXd::Zero(static_cast<Index>(indices.size()), n);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (indices[k] < 0 || indices[k] >= n) throw ConfigError("selection observation: index out of range");
      h(static_cast<Index>(k), indices[k]) = 1.0;
    }
    return ObservationModel([h](const VectorXd& x) -> VectorXd { return h * x; },
                            [h](const VectorXd&) -> MatrixXd { return h; }, std::move(noise), rate_hz);
  }

  VectorXd ell(const VectorXd& x) const { return ell_(x); }
  MatrixXd jacobian(const VectorXd& x) const { return jacobian_(x); }
  const MatrixXd& noise() const { return r_; }
  double rate_hz() const { return rate_hz_; }
  Index measurement_dim() const { return r_.rows(); }

  ObservationModel with_noise(MatrixXd noise) const { return {ell_, jacobian_, std::move(noise), rate_hz_}; }

 private:
  MapFn ell_;
  JacobianFn jacobian_;
  MatrixXd r_;
  double rate_hz_;
};

/// Control-affine split of the belief ODE: b_dot = f_b(b) + g_b(b) u.
template <typename S>
struct BeliefAffineParts {
  VectorX<S> drift;      // f_b, length n_b
  MatrixX<S> input_map;  // g_b, n_b x m
};

/// f_b and g_b at a flat belief vector (any supported scalar).
template <typename S>
BeliefAffineParts<S> belief_affine_parts(const VectorX<S>& b, const SystemModel& model) {
  const Index n = model.state_dim();
  const Index m = model.input_dim();
  if (b.size() != belief_dim(n)) throw ConfigError("belief_affine_parts: belief has wrong length");
  const VectorX<S> mu = b.head(n);
  const MatrixX<S> sigma = unvec_upper(b.tail(b.size() - n), n);

  const MatrixX<S> a = model.drift_jacobian<S>(mu);
  MatrixX<S> sigma_dot = a * sigma;
  sigma_dot += sigma_dot.transpose().eval();
  sigma_dot += model.motion_noise().template cast<S>();

  BeliefAffineParts<S> parts;
  parts.drift.resize(b.size());
  parts.drift << model.drift<S>(mu), vec_upper(sigma_dot);

  parts.input_map = MatrixX<S>::Zero(b.size(), m);
  parts.input_map.topRows(n) = model.input_map<S>(mu);
  const auto gj = model.input_map_jacobians<S>(mu);
  for (std::size_t j = 0; j < gj.size(); ++j) {
    MatrixX<S> col = gj[j] * sigma;
    col += col.transpose().eval();
    parts.input_map.col(static_cast<Index>(j)).tail(b.size() - n) = vec_upper(col);
  }
  return parts;
}

inline BeliefAffineParts<double> belief_affine_parts(const GaussianBelief& b, const SystemModel& model) {
  if (b.dim() != model.state_dim()) throw ConfigError("belief_affine_parts: dimension mismatch");
  return belief_affine_parts<double>(b.to_vector(), model);
}

/// Time derivative of the flat belief under input u:
/// mu_dot = f(mu) + g(mu) u, Sigma_dot = A Sigma + Sigma A^T + Q, A = A(mu, u).
inline VectorXd belief_flow(const VectorXd& b, const SystemModel& model, const VectorXd& u) {
  if (u.size() != model.input_dim()) throw ConfigError("belief_flow: input has wrong dimension");
  const Index n = model.state_dim();
  if (b.size() != belief_dim(n)) throw ConfigError("belief_flow: belief has wrong length");
  const VectorXd mu = b.head(n);
  const MatrixXd sigma = unvec_upper(b.tail(b.size() - n), n);
  const MatrixXd a = model.jacobian(mu, u);
  MatrixXd sigma_dot = a * sigma;
  sigma_dot += sigma_dot.transpose().eval();
  sigma_dot += model.motion_noise();
  VectorXd out(b.size());
  out << model.velocity(mu, u), vec_upper(sigma_dot);
  return out;
}

inline VectorXd belief_flow(const GaussianBelief& b, const SystemModel& model, const VectorXd& u) {
  if (b.dim() != model.state_dim()) throw ConfigError("belief_flow: dimension mismatch");
  return belief_flow(b.to_vector(), model, u);
}

/// Gain and innovation statistics of one EKF measurement update.
struct KalmanTerms {
  MatrixXd h;  // observation Jacobian at the prior mean
  MatrixXd s;  // innovation covariance H Sigma H^T + R
  MatrixXd k;  // Kalman gain Sigma H^T S^-1
};

inline constexpr double kMaxInnovationCondition = 1e12;

inline KalmanTerms kalman_terms(const GaussianBelief& prior, const ObservationModel& obs) {
  KalmanTerms t;
  t.h = obs.jacobian(prior.mean());
  if (t.h.cols() != prior.dim() || t.h.rows() != obs.measurement_dim()) {
    throw ConfigError("kalman update: observation Jacobian has wrong shape");
  }
  t.s = t.h * prior.cov() * t.h.transpose() + obs.noise();
  t.s = 0.5 * (t.s + t.s.transpose()).eval();
  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(t.s, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxInnovationCondition) {
    throw SingularError("kalman update: innovation covariance is singular or ill-conditioned");
  }
  const Eigen::LLT<MatrixXd> llt(t.s);
  t.k = llt.solve(t.h * prior.cov()).transpose();
  return t;
}

/// EKF measurement update. The posterior covariance is formed in Joseph form,
/// which equals (I - K H) Sigma for the optimal gain and stays PSD.
inline GaussianBelief kalman_update(const GaussianBelief& prior, const ObservationModel& obs, const VectorXd& z) {
  if (z.size() != obs.measurement_dim()) throw ConfigError("kalman_update: measurement has wrong dimension");
  const KalmanTerms t = kalman_terms(prior, obs);
  const VectorXd mean = prior.mean() + t.k * (z - obs.ell(prior.mean()));
  const MatrixXd ikh = MatrixXd::Identity(prior.dim(), prior.dim()) - t.k * t.h;
  const MatrixXd cov = ikh * prior.cov() * ikh.transpose() + t.k * obs.noise() * t.k.transpose();
  return GaussianBelief(mean, cov);
}

/// Covariance of the innovation K (z - l(mu)) before z is revealed:
/// Lambda = K (H Sigma H^T + R) K^T.
inline MatrixXd innovation_covariance(const GaussianBelief& prior, const ObservationModel& obs) {
  const KalmanTerms t = kalman_terms(prior, obs);
  MatrixXd lambda = t.k * t.s * t.k.transpose();
  return 0.5 * (lambda + lambda.transpose());
}

enum class Integrator { rk4, euler };

/// Integrates the continuous belief flow over dt with u held constant.
inline VectorXd integrate_flow(const VectorXd& b, const SystemModel& model, const VectorXd& u, double dt,
                               Integrator method = Integrator::rk4) {
  if (!(dt > 0.0)) throw ConfigError("integrate_flow: dt must be > 0");
  if (method == Integrator::euler) return b + dt * belief_flow(b, model, u);
  const VectorXd k1 = belief_flow(b, model, u);
  const VectorXd k2 = belief_flow(b + 0.5 * dt * k1, model, u);
  const VectorXd k3 = belief_flow(b + 0.5 * dt * k2, model, u);
  const VectorXd k4 = belief_flow(b + dt * k3, model, u);
  return b + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// One step of the hybrid belief system: continuous flow over dt, then a
/// Kalman jump if a measurement arrives at the end of the step.
inline GaussianBelief hybrid_step(const GaussianBelief& b, const SystemModel& model, const ObservationModel& obs,
                                  const VectorXd& u, double dt, const std::optional<VectorXd>& z,
                                  Integrator method = Integrator::rk4) {
  if (b.dim() != model.state_dim()) throw ConfigError("hybrid_step: dimension mismatch");
  GaussianBelief prior = GaussianBelief::from_vector(integrate_flow(b.to_vector(), model, u, dt, method));
  if (!z) return prior;
  return kalman_update(prior, obs, *z);
}

}  // namespace bcbf
