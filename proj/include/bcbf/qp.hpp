#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bcbf/errors.hpp"

namespace bcbf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One inequality a^T u >= b.
struct LinearRow {
  VectorXd a;
  double b = 0.0;
};

struct BoxBounds {
  VectorXd lower;
  VectorXd upper;
};

/// min 1/2 |u - u_ref|^2  s.t.  rows[i].a^T u >= rows[i].b,  lower <= u <= upper.
///
/// When slack_weight is set and the hard problem is infeasible, the rows (never
/// the box) are relaxed to a^T u + s >= b, s >= 0, with 1/2 slack_weight s^2
/// added to the objective.
struct QpProblem {
  VectorXd u_ref;
  std::vector<LinearRow> rows;
  std::optional<BoxBounds> bounds;
  std::optional<double> slack_weight;
};

struct QpSolution {
  VectorXd u;
  /// Indices into the stacked constraint list: rows first, then the m lower
  /// bounds, then the m upper bounds (and the slack's s >= 0 last when used).
  std::vector<int> active_set;
  /// Lagrange multipliers of the stacked constraint list (zero when inactive).
  VectorXd multipliers;
  bool slack_used = false;
  double slack = 0.0;
  int iterations = 0;
};

namespace detail {

struct StackedConstraints {
  MatrixXd c;  // one constraint per row: c_i^T x >= d_i
  VectorXd d;
};

inline StackedConstraints stack_constraints(const QpProblem& p, bool with_slack) {
  const Index m = p.u_ref.size();
  const Index nvar = with_slack ? m + 1 : m;
  const Index nrows = static_cast<Index>(p.rows.size());
  const Index nbox = p.bounds ? 2 * m : 0;
  StackedConstraints s;
  s.c = MatrixXd::Zero(nrows + nbox + (with_slack ? 1 : 0), nvar);
  s.d.resize(s.c.rows());
  for (Index i = 0; i < nrows; ++i) {
    s.c.row(i).head(m) = p.rows[static_cast<std::size_t>(i)].a.transpose();
    if (with_slack) s.c(i, m) = 1.0;
    s.d(i) = p.rows[static_cast<std::size_t>(i)].b;
  }
  if (p.bounds) {
    for (Index j = 0; j < m; ++j) {
      s.c(nrows + j, j) = 1.0;
      s.d(nrows + j) = p.bounds->lower(j);
      s.c(nrows + m + j, j) = -1.0;
      s.d(nrows + m + j) = -p.bounds->upper(j);
    }
  }
  if (with_slack) {
    s.c(s.c.rows() - 1, m) = 1.0;
    s.d(s.d.size() - 1) = 0.0;
  }
  return s;
}

struct DualActiveSetResult {
  VectorXd x;
  std::vector<int> active;
  VectorXd multipliers;
  int iterations = 0;
  bool infeasible = false;
  int blocking_row = -1;
};

// Dual active-set method of Goldfarb and Idnani for
//   min 1/2 (x - x0)^T H (x - x0)  s.t. C x >= d,  H = diag(h) > 0.
// Starts from the unconstrained minimizer x0 and adds violated constraints one
// at a time while keeping the multipliers dual feasible. The active normals
// stay linearly independent, so the small reduced systems are solved directly.
inline DualActiveSetResult dual_active_set(const VectorXd& x0, const VectorXd& h, const StackedConstraints& cons,
                                           int max_iterations) {
  const Index nvar = x0.size();
  const Index ncons = cons.c.rows();
  const VectorXd hinv = h.cwiseInverse();
  constexpr double kInf = std::numeric_limits<double>::infinity();

  DualActiveSetResult res;
  res.x = x0;
  std::vector<int> active;
  std::vector<double> lambda;
  std::vector<char> is_active(static_cast<std::size_t>(ncons), 0);

  auto feas_tol = [&](Index i) { return 1e-10 * (1.0 + std::abs(cons.d(i)) + cons.c.row(i).cwiseAbs().sum()); };

  while (true) {
    // Most violated inactive constraint.
    int p = -1;
    double worst = 0.0;
    for (Index i = 0; i < ncons; ++i) {
      if (is_active[static_cast<std::size_t>(i)]) continue;
      const double slack = cons.c.row(i).dot(res.x) - cons.d(i);
      if (slack < -feas_tol(i) && slack < worst) {
        worst = slack;
        p = static_cast<int>(i);
      }
    }
    if (p < 0) break;

    const VectorXd np = cons.c.row(p).transpose();
    double lambda_p = 0.0;
    while (true) {
      if (++res.iterations > max_iterations) {
        throw NonConvergenceError("QP active-set iteration cap reached");
      }
      const Index q = static_cast<Index>(active.size());
      MatrixXd n_act(nvar, q);
      for (Index j = 0; j < q; ++j) n_act.col(j) = cons.c.row(active[static_cast<std::size_t>(j)]).transpose();

      // r = (N^T H^-1 N)^-1 N^T H^-1 n_p ;  z = H^-1 (n_p - N r)
      VectorXd r = VectorXd::Zero(q);
      if (q > 0) {
        const MatrixXd hn = hinv.asDiagonal() * n_act;
        const MatrixXd reduced = n_act.transpose() * hn;
        r = reduced.ldlt().solve(hn.transpose() * np);
      }
      const VectorXd z = hinv.cwiseProduct(np - n_act * r);

      double t1 = kInf;
      Index drop = -1;
      for (Index j = 0; j < q; ++j) {
        if (r(j) > 1e-14) {
          const double ratio = lambda[static_cast<std::size_t>(j)] / r(j);
          if (ratio < t1) {
            t1 = ratio;
            drop = j;
          }
        }
      }
      const double znp = z.dot(np);
      double t2 = kInf;
      if (z.norm() > 1e-12 * (1.0 + np.norm())) {
        const double slack = np.dot(res.x) - cons.d(p);
        t2 = std::max(0.0, -slack / znp);
      }

      if (t1 == kInf && t2 == kInf) {
        res.infeasible = true;
        res.blocking_row = p;
        return res;
      }
      const double t = std::min(t1, t2);
      if (t2 < kInf) res.x += t * z;
      for (Index j = 0; j < q; ++j) lambda[static_cast<std::size_t>(j)] -= t * r(j);
      lambda_p += t;

      if (t2 <= t1) {
        active.push_back(p);
        lambda.push_back(lambda_p);
        is_active[static_cast<std::size_t>(p)] = 1;
        break;
      }
      is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(drop)])] = 0;
      active.erase(active.begin() + drop);
      lambda.erase(lambda.begin() + drop);
    }
  }

  res.active = active;
  res.multipliers = VectorXd::Zero(ncons);
  for (std::size_t j = 0; j < active.size(); ++j) res.multipliers(active[j]) = std::max(0.0, lambda[j]);
  std::sort(res.active.begin(), res.active.end());
  return res;
}

inline void validate(const QpProblem& p) {
  const Index m = p.u_ref.size();
  if (m == 0) throw ConfigError("QP: empty decision vector");
  if (!p.u_ref.allFinite()) throw ConfigError("QP: reference input is not finite");
  for (const auto& row : p.rows) {
    if (row.a.size() != m) throw ConfigError("QP: constraint row has wrong dimension");
    if (!row.a.allFinite() || !std::isfinite(row.b)) throw ConfigError("QP: constraint row is not finite");
  }
  if (p.bounds) {
    if (p.bounds->lower.size() != m || p.bounds->upper.size() != m) throw ConfigError("QP: bounds have wrong dimension");
    if ((p.bounds->lower.array() > p.bounds->upper.array()).any()) throw ConfigError("QP: lower bound above upper bound");
  }
  if (p.slack_weight && !(*p.slack_weight > 0.0)) throw ConfigError("QP: slack weight must be > 0");
}

}  // namespace detail

/// Solves the projection QP. Throws InfeasibleError (no slack configured) or
/// NonConvergenceError (more than 100 m active-set iterations).
inline QpSolution solve_qp(const QpProblem& p) {
  detail::validate(p);
  const Index m = p.u_ref.size();
  const int cap = static_cast<int>(100 * std::max<Index>(m, 1));

  const auto hard = detail::stack_constraints(p, false);
  auto res = detail::dual_active_set(p.u_ref, VectorXd::Ones(m), hard, cap);
  if (!res.infeasible) {
    QpSolution sol;
    sol.u = res.x;
    sol.active_set = std::move(res.active);
    sol.multipliers = std::move(res.multipliers);
    sol.iterations = res.iterations;
    return sol;
  }
  if (!p.slack_weight) {
    throw InfeasibleError("QP infeasible at constraint " + std::to_string(res.blocking_row), res.blocking_row);
  }

  const auto relaxed = detail::stack_constraints(p, true);
  VectorXd x0 = VectorXd::Zero(m + 1);
  x0.head(m) = p.u_ref;
  VectorXd h = VectorXd::Ones(m + 1);
  h(m) = *p.slack_weight;
  auto rres = detail::dual_active_set(x0, h, relaxed, cap + 100);
  if (rres.infeasible) {
    // Only the box can block the relaxed problem.
    throw InfeasibleError("QP infeasible at constraint " + std::to_string(rres.blocking_row), rres.blocking_row);
  }
  QpSolution sol;
  sol.u = rres.x.head(m);
  sol.slack = std::max(0.0, rres.x(m));
  sol.slack_used = true;
  sol.active_set = std::move(rres.active);
  sol.multipliers = std::move(rres.multipliers);
  sol.iterations = res.iterations + rres.iterations;
  return sol;
}

/// Largest violation among stationarity, primal feasibility, dual feasibility
/// and complementarity of a hard (non-slack) solution.
inline double kkt_residual(const QpProblem& p, const QpSolution& sol) {
  const auto cons = detail::stack_constraints(p, sol.slack_used);
  VectorXd x = sol.u;
  VectorXd h = VectorXd::Ones(sol.u.size());
  VectorXd x0 = p.u_ref;
  if (sol.slack_used) {
    const Index m = sol.u.size();
    x.conservativeResize(m + 1);
    x(m) = sol.slack;
    h.conservativeResize(m + 1);
    h(m) = *p.slack_weight;
    x0.conservativeResize(m + 1);
    x0(m) = 0.0;
  }
  const VectorXd& lam = sol.multipliers;
  const VectorXd stationarity = h.cwiseProduct(x - x0) - cons.c.transpose() * lam;
  const VectorXd slack = cons.c * x - cons.d;
  double worst = stationarity.cwiseAbs().maxCoeff();
  if (slack.size() == 0) return worst;
  worst = std::max(worst, std::max(0.0, -slack.minCoeff()));
  worst = std::max(worst, std::max(0.0, -lam.minCoeff()));
  worst = std::max(worst, lam.cwiseProduct(slack).cwiseAbs().maxCoeff());
  return worst;
}

}  // namespace bcbf
