#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "bcbf/errors.hpp"
#include "bcbf/log.hpp"
#include "bcbf/special_functions.hpp"

namespace bcbf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

template <typename S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// Length of the flat belief vector for an n-dimensional state: n mean
/// entries followed by the n(n+1)/2 upper-triangular covariance entries.
constexpr Index belief_dim(Index n) { return (n * n + 3 * n) / 2; }

/// Inverse of belief_dim; throws if nb is not a valid belief length.
inline Index state_dim_for_belief(Index nb) {
  Index n = 0;
  while (belief_dim(n) < nb) ++n;
  if (belief_dim(n) != nb) {
    throw ConfigError("belief vector length " + std::to_string(nb) + " matches no state dimension");
  }
  return n;
}

/// Position of covariance entry (i, j), i <= j, inside the covariance block of
/// the flat belief vector (row-major upper triangle).
constexpr Index upper_index(Index i, Index j, Index n) { return i * n - i * (i - 1) / 2 + (j - i); }

/// Row-major upper triangle of a symmetric matrix.
template <typename Derived>
VectorX<typename Derived::Scalar> vec_upper(const Eigen::MatrixBase<Derived>& sym) {
  const Index n = sym.rows();
  VectorX<typename Derived::Scalar> out(n * (n + 1) / 2);
  Index k = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) out(k++) = sym(i, j);
  }
  return out;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> unvec_upper(const Eigen::MatrixBase<Derived>& v, Index n) {
  using S = typename Derived::Scalar;
  if (v.size() != n * (n + 1) / 2) throw ConfigError("unvec_upper: length does not match dimension");
  MatrixX<S> out(n, n);
  Index k = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      out(i, j) = v(k);
      out(j, i) = v(k);
      ++k;
    }
  }
  return out;
}

enum class PsdRepair { reject, clamp };

/// Gaussian belief N(mean, cov). The covariance is symmetrized on
/// construction and must be positive semidefinite (eigenvalues >= -1e-9),
/// unless PsdRepair::clamp is requested, in which case negative eigenvalues
/// are clamped to zero and the repair is logged.
class GaussianBelief {
 public:
  static constexpr double kPsdTolerance = 1e-9;

  GaussianBelief(VectorXd mean, const MatrixXd& cov, PsdRepair repair = PsdRepair::reject)
      : mean_(std::move(mean)), cov_(0.5 * (cov + cov.transpose())) {
    if (cov.rows() != mean_.size() || cov.cols() != mean_.size()) {
      throw ConfigError("GaussianBelief: covariance must be n x n with n = mean size");
    }
    if (!mean_.allFinite() || !cov_.allFinite()) throw DomainError("GaussianBelief: non-finite entries");
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov_);
    const double min_eig = eig.eigenvalues().size() ? eig.eigenvalues().minCoeff() : 0.0;
    if (min_eig < -kPsdTolerance) {
      if (repair == PsdRepair::reject) {
        throw DomainError("GaussianBelief: covariance not positive semidefinite (min eigenvalue " +
                          std::to_string(min_eig) + ")");
      }
      logging::warn("clamping covariance eigenvalue " + std::to_string(min_eig) + " to zero");
      const VectorXd clamped = eig.eigenvalues().cwiseMax(0.0);
      cov_ = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
      cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
    }
  }

  /// Rebuilds a belief from its flat encoding.
  static GaussianBelief from_vector(const VectorXd& b, PsdRepair repair = PsdRepair::reject) {
    const Index n = state_dim_for_belief(b.size());
    return GaussianBelief(b.head(n), unvec_upper(b.tail(b.size() - n), n), repair);
  }

  Index dim() const { return mean_.size(); }
  const VectorXd& mean() const { return mean_; }
  const MatrixXd& cov() const { return cov_; }

  VectorXd to_vector() const {
    VectorXd b(belief_dim(dim()));
    b << mean_, vec_upper(cov_);
    return b;
  }

 private:
  VectorXd mean_;
  MatrixXd cov_;
};

/// Risk-aware half-space {x : alpha^T x >= beta} held with probability at
/// least 1 - delta, shrunk by a margin gamma >= 0.
class RiskHalfSpace {
 public:
  RiskHalfSpace(VectorXd alpha, double beta, double delta, double gamma = 0.0)
      : alpha_(std::move(alpha)), beta_(beta), delta_(delta), gamma_(gamma) {
    if (!(delta_ > 0.0 && delta_ <= 0.5)) {
      throw ConfigError("RiskHalfSpace: risk level delta must lie in (0, 0.5]");
    }
    if (!(gamma_ >= 0.0)) throw ConfigError("RiskHalfSpace: gamma must be >= 0");
    if (alpha_.size() == 0 || alpha_.isZero(0.0)) throw ConfigError("RiskHalfSpace: alpha must be nonzero");
    quantile_ = erfinv(1.0 - 2.0 * delta_);
  }

  const VectorXd& alpha() const { return alpha_; }
  double beta() const { return beta_; }
  double delta() const { return delta_; }
  double gamma() const { return gamma_; }
  /// erfinv(1 - 2 delta), the VaR tightening factor.
  double quantile() const { return quantile_; }

  RiskHalfSpace with_gamma(double gamma) const { return RiskHalfSpace(alpha_, beta_, delta_, gamma); }
  RiskHalfSpace with_delta(double delta) const { return RiskHalfSpace(alpha_, beta_, delta, gamma_); }

 private:
  VectorXd alpha_;
  double beta_;
  double delta_;
  double gamma_;
  double quantile_;
};

/// Pr[alpha^T x >= beta] for x ~ b.
inline double prob_halfspace(const GaussianBelief& b, const VectorXd& alpha, double beta) {
  if (alpha.size() != b.dim()) throw ConfigError("prob_halfspace: alpha has wrong dimension");
  const double var = alpha.dot(b.cov() * alpha);
  if (!(var > 0.0)) throw SingularError("prob_halfspace: alpha^T Sigma alpha must be > 0");
  return 0.5 * std::erfc(-(alpha.dot(b.mean()) - beta) / std::sqrt(2.0 * var));
}

namespace detail {

// Kernels on the flat belief vector, templated so that dual numbers can flow
// through them.

template <typename S>
S direction_variance(const VectorX<S>& b, const VectorXd& alpha) {
  const Index n = alpha.size();
  S var(0.0);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      const double w = (i == j ? 1.0 : 2.0) * alpha(i) * alpha(j);
      if (w != 0.0) var += w * b(n + upper_index(i, j, n));
    }
  }
  return var;
}

template <typename S>
S var_value(const VectorX<S>& b, const RiskHalfSpace& hs) {
  using std::sqrt;
  const Index n = hs.alpha().size();
  S mean_term(-hs.beta() - hs.gamma());
  for (Index i = 0; i < n; ++i) mean_term += hs.alpha()(i) * b(i);
  if (hs.quantile() == 0.0) return mean_term;
  const S var = direction_variance(b, hs.alpha());
  if (var <= S(0.0)) return mean_term;
  return mean_term - hs.quantile() * sqrt(2.0 * var);
}

// Gradient of var_value w.r.t. the flat belief vector. The covariance block
// accounts for each off-diagonal entry standing for both (i, j) and (j, i).
template <typename S>
VectorX<S> var_gradient(const VectorX<S>& b, const RiskHalfSpace& hs, double singular_eps) {
  using std::sqrt;
  const VectorXd& alpha = hs.alpha();
  const Index n = alpha.size();
  VectorX<S> grad = VectorX<S>::Zero(b.size());
  for (Index i = 0; i < n; ++i) grad(i) = S(alpha(i));
  if (hs.quantile() == 0.0) return grad;
  const S var = direction_variance(b, alpha);
  if (!(var > S(singular_eps))) {
    throw SingularError("var_gradient: alpha^T Sigma alpha below singularity threshold");
  }
  const S scale = -hs.quantile() / sqrt(2.0 * var);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      const double w = (i == j ? 1.0 : 2.0) * alpha(i) * alpha(j);
      grad(n + upper_index(i, j, n)) = scale * w;
    }
  }
  return grad;
}

}  // namespace detail

/// VaR_delta(alpha^T x - beta) - gamma under the Gaussian belief:
/// alpha^T mu - beta - erfinv(1 - 2 delta) sqrt(2 alpha^T Sigma alpha) - gamma.
inline double var_value(const GaussianBelief& b, const RiskHalfSpace& hs) {
  if (hs.alpha().size() != b.dim()) throw ConfigError("var_value: alpha has wrong dimension");
  const double var = hs.alpha().dot(b.cov() * hs.alpha());
  return hs.alpha().dot(b.mean()) - hs.beta() - hs.quantile() * std::sqrt(2.0 * std::max(var, 0.0)) -
         hs.gamma();
}

inline constexpr double kDefaultSingularEps = 1e-12;

/// d var_value / d b in flat belief coordinates.
inline VectorXd var_gradient(const GaussianBelief& b, const RiskHalfSpace& hs,
                             double singular_eps = kDefaultSingularEps) {
  if (hs.alpha().size() != b.dim()) throw ConfigError("var_gradient: alpha has wrong dimension");
  return detail::var_gradient<double>(b.to_vector(), hs, singular_eps);
}

}  // namespace bcbf
