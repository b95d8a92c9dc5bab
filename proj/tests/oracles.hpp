#pragma once

// Independent reference implementations used only by the tests.

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// erf by its Maclaurin series (|x| <= 3) or the Laplace continued fraction of
// erfc (|x| > 3), both in long double.
inline long double erf_series(long double x) {
  const long double pi = 3.141592653589793238462643383279502884L;
  if (x < 0) return -erf_series(-x);
  if (x <= 3.0L) {
    long double term = x;
    long double sum = x;
    for (int n = 1; n < 200; ++n) {
      term *= -x * x / n;
      const long double add = term / (2 * n + 1);
      sum += add;
      if (std::fabs(add) < 1e-30L) break;
    }
    return 2.0L / std::sqrt(pi) * sum;
  }
  // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + 1/2/(x + 1/(x + 3/2/(x + ...))))
  long double cf = x;
  for (int k = 200; k >= 1; --k) cf = x + (k / 2.0L) / cf;
  const long double erfc = std::exp(-x * x) / std::sqrt(pi) / cf;
  return 1.0L - erfc;
}

// erfinv by bisection on the series oracle.
inline double erfinv_bisection(double p) {
  long double lo = -7.0L, hi = 7.0L;
  for (int it = 0; it < 200; ++it) {
    const long double mid = 0.5L * (lo + hi);
    if (erf_series(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return static_cast<double>(0.5L * (lo + hi));
}

// Standard normal CDF from the series oracle.
inline double normal_cdf(double x) {
  return static_cast<double>(0.5L * (1.0L + erf_series(x / std::sqrt(2.0L))));
}

inline MatrixXd random_spd(std::mt19937_64& rng, int n, double scale = 1.0, double floor = 0.05) {
  std::normal_distribution<double> nd;
  MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = nd(rng);
  return scale * (a * a.transpose() / n + floor * MatrixXd::Identity(n, n));
}

inline VectorXd random_vector(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> nd;
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * nd(rng);
  return v;
}

// Central finite-difference gradient of a scalar function.
inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h = 1e-6) {
  VectorXd g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Central finite-difference Jacobian of a vector function.
inline MatrixXd fd_jacobian(const std::function<VectorXd(const VectorXd&)>& f, const VectorXd& x, double h = 1e-6) {
  const VectorXd f0 = f(x);
  MatrixXd j(f0.size(), x.size());
  for (int i = 0; i < x.size(); ++i) {
    VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    j.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

// Posterior of x ~ N(mu, P) given z = H x + v, v ~ N(0, R), in information form:
// P+ = (P^-1 + H^T R^-1 H)^-1, mu+ = P+ (P^-1 mu + H^T R^-1 z).
struct Gaussian {
  VectorXd mean;
  MatrixXd cov;
};
inline Gaussian condition_information_form(const VectorXd& mu, const MatrixXd& p, const MatrixXd& h,
                                           const MatrixXd& r, const VectorXd& z) {
  const MatrixXd p_inv = p.inverse();
  const MatrixXd r_inv = r.inverse();
  const MatrixXd info = p_inv + h.transpose() * r_inv * h;
  Gaussian g;
  g.cov = info.inverse();
  g.mean = g.cov * (p_inv * mu + h.transpose() * r_inv * z);
  return g;
}

// min 1/2 |u - u_ref|^2 s.t. C u >= d by enumerating every active set.
// Returns NaNs when no candidate is feasible.
inline VectorXd qp_brute_force(const VectorXd& u_ref, const MatrixXd& c, const VectorXd& d) {
  const int k = static_cast<int>(c.rows());
  const int m = static_cast<int>(u_ref.size());
  double best = std::numeric_limits<double>::infinity();
  VectorXd best_u = VectorXd::Constant(m, std::numeric_limits<double>::quiet_NaN());
  for (unsigned mask = 0; mask < (1u << k); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < k; ++i)
      if (mask & (1u << i)) act.push_back(i);
    if (static_cast<int>(act.size()) > m) continue;
    VectorXd u = u_ref;
    if (!act.empty()) {
      MatrixXd a(act.size(), m);
      VectorXd b(act.size());
      for (std::size_t j = 0; j < act.size(); ++j) {
        a.row(static_cast<int>(j)) = c.row(act[j]);
        b(static_cast<int>(j)) = d(act[j]);
      }
      const MatrixXd aat = a * a.transpose();
      if (std::abs(aat.determinant()) < 1e-12) continue;
      const VectorXd lam = aat.ldlt().solve(b - a * u_ref);
      u = u_ref + a.transpose() * lam;
    }
    if (((c * u - d).array() < -1e-9).any()) continue;
    const double cost = 0.5 * (u - u_ref).squaredNorm();
    if (cost < best) {
      best = cost;
      best_u = u;
    }
  }
  return best_u;
}

}  // namespace oracle
