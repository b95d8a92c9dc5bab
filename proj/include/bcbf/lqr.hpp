#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bcbf/errors.hpp"
#include "bcbf/log.hpp"

namespace bcbf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Solves A^T P + P A + W = 0 through the Kronecker form. Meant for the small
/// state dimensions used here (n <= 8 or so).
inline MatrixXd solve_lyapunov(const MatrixXd& a, const MatrixXd& w) {
  const Index n = a.rows();
  const MatrixXd at = a.transpose();
  MatrixXd big = MatrixXd::Zero(n * n, n * n);
  // Column-major vec: vec(A^T P) = (I kron A^T) vec(P), vec(P A) = (A^T kron I) vec(P).
  for (Index i = 0; i < n; ++i) {
    big.block(i * n, i * n, n, n) += at;
    for (Index j = 0; j < n; ++j) {
      big.block(i * n, j * n, n, n).diagonal().array() += at(i, j);
    }
  }
  const VectorXd rhs = -Eigen::Map<const VectorXd>(w.data(), n * n);
  const Eigen::PartialPivLU<MatrixXd> lu(big);
  VectorXd sol = lu.solve(rhs);
  MatrixXd p = Eigen::Map<MatrixXd>(sol.data(), n, n);
  return 0.5 * (p + p.transpose());
}

inline bool is_hurwitz(const MatrixXd& a) {
  const Eigen::EigenSolver<MatrixXd> es(a, false);
  return (es.eigenvalues().real().array() < 0.0).all();
}

struct CareSolution {
  MatrixXd p;
  MatrixXd k;  // R^-1 B^T P
  int iterations = 0;
  bool converged = false;
};

/// Stabilizing CARE solution through the matrix sign function of the
/// Hamiltonian [[A, -B R^-1 B^T], [-Q, -A^T]].
inline std::optional<MatrixXd> care_sign_function(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q,
                                                  const MatrixXd& r) {
  const Index n = a.rows();
  const Eigen::LLT<MatrixXd> r_llt(r);
  if (r_llt.info() != Eigen::Success) throw ConfigError("CARE: R must be positive definite");
  MatrixXd z(2 * n, 2 * n);
  z << a, -b * r_llt.solve(b.transpose()), -q, -a.transpose();
  for (int it = 0; it < 100; ++it) {
    const Eigen::PartialPivLU<MatrixXd> lu(z);
    const double det = std::abs(lu.determinant());
    if (!(det > 0.0) || !std::isfinite(det)) return std::nullopt;
    const double c = std::pow(det, 1.0 / static_cast<double>(2 * n));
    const MatrixXd next = 0.5 * (z / c + c * lu.inverse());
    const double change = (next - z).norm();
    z = next;
    if (change <= 1e-12 * z.norm()) break;
  }
  MatrixXd lhs(2 * n, n);
  MatrixXd rhs(2 * n, n);
  lhs << z.block(0, n, n, n), z.block(n, n, n, n) + MatrixXd::Identity(n, n);
  rhs << z.block(0, 0, n, n) + MatrixXd::Identity(n, n), z.block(n, 0, n, n);
  MatrixXd p = lhs.colPivHouseholderQr().solve(-rhs);
  if (!p.allFinite()) return std::nullopt;
  return MatrixXd(0.5 * (p + p.transpose()));
}

/// Newton–Kleinman iteration for A^T P + P A - P B R^-1 B^T P + Q = 0.
/// `initial_gain` must stabilize A - B K; when it is absent or does not, the
/// iteration is seeded from the sign-function solution.
inline CareSolution solve_care(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q, const MatrixXd& r,
                               const std::optional<MatrixXd>& initial_gain = std::nullopt, double tol = 1e-9,
                               int max_iterations = 50) {
  const Index n = a.rows();
  const Index m = b.cols();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n || r.rows() != m || r.cols() != m) {
    throw ConfigError("CARE: inconsistent matrix dimensions");
  }
  const Eigen::LLT<MatrixXd> r_llt(r);
  if (r_llt.info() != Eigen::Success) throw ConfigError("CARE: R must be positive definite");

  CareSolution sol;
  MatrixXd k;
  if (initial_gain && initial_gain->rows() == m && initial_gain->cols() == n && is_hurwitz(a - b * *initial_gain)) {
    k = *initial_gain;
  } else {
    const auto p0 = care_sign_function(a, b, q, r);
    if (!p0) return sol;
    k = r_llt.solve(b.transpose() * *p0);
    if (!is_hurwitz(a - b * k)) return sol;
  }

  MatrixXd p_prev;
  for (int it = 1; it <= max_iterations; ++it) {
    const MatrixXd closed = a - b * k;
    const MatrixXd p = solve_lyapunov(closed, q + k.transpose() * r * k);
    k = r_llt.solve(b.transpose() * p);
    sol.iterations = it;
    if (it > 1 && (p - p_prev).norm() <= tol * std::max(1.0, p.norm())) {
      sol.p = p;
      sol.k = k;
      sol.converged = p.allFinite();
      return sol;
    }
    p_prev = p;
  }
  sol.p = p_prev;
  sol.k = k;
  return sol;
}

/// Stateful LQR that re-solves the CARE at every call, warm-started from the
/// previous gain. On failure it keeps the previous gain and logs a warning.
class LqrController {
 public:
  LqrController(MatrixXd q, MatrixXd r) : q_(std::move(q)), r_(std::move(r)) {}

  /// u = -K (x - goal) for the linearization (A, B).
  VectorXd control(const MatrixXd& a, const MatrixXd& b, const VectorXd& error) {
    const CareSolution sol = solve_care(a, b, q_, r_, gain_);
    if (sol.converged) {
      gain_ = sol.k;
    } else if (gain_) {
      logging::warn("CARE did not converge; reusing previous LQR gain");
    } else {
      throw NonConvergenceError("CARE did not converge and no previous gain is available");
    }
    return -(*gain_) * error;
  }

  const std::optional<MatrixXd>& gain() const { return gain_; }

 private:
  MatrixXd q_;
  MatrixXd r_;
  std::optional<MatrixXd> gain_;
};

}  // namespace bcbf
