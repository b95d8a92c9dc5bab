#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bcbf/errors.hpp"
#include "bcbf/lqr.hpp"
#include "oracles.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double care_residual(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q, const MatrixXd& r, const MatrixXd& p) {
  return (a.transpose() * p + p * a - p * b * r.inverse() * b.transpose() * p + q).norm();
}

MatrixXd double_integrator_a() {
  MatrixXd a(2, 2);
  a << 0, 1, 0, 0;
  return a;
}

MatrixXd double_integrator_b() {
  MatrixXd b(2, 1);
  b << 0, 1;
  return b;
}

}  // namespace

TEST(Lyapunov, ResidualOnRandomStableSystems) {
  std::mt19937_64 rng(59);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6;
    const MatrixXd a = -oracle::random_spd(rng, n) + 0.3 * MatrixXd::Random(n, n);
    if (!bcbf::is_hurwitz(a)) continue;
    const MatrixXd w = oracle::random_spd(rng, n);
    const MatrixXd x = bcbf::solve_lyapunov(a, w);
    EXPECT_LE((a.transpose() * x + x * a + w).norm(), 1e-9 * std::max(1.0, x.norm())) << trial;
  }
}

TEST(Care, ScalarIntegrator) {
  const MatrixXd one = MatrixXd::Ones(1, 1);
  const auto sol = bcbf::solve_care(MatrixXd::Zero(1, 1), one, one, one);
  ASSERT_TRUE(sol.converged);
  EXPECT_NEAR(sol.p(0, 0), 1.0, 1e-10);
  EXPECT_NEAR(sol.k(0, 0), 1.0, 1e-10);
}

TEST(Care, DoubleIntegratorGain) {
  const auto sol = bcbf::solve_care(double_integrator_a(), double_integrator_b(), MatrixXd::Identity(2, 2),
                                    MatrixXd::Ones(1, 1));
  ASSERT_TRUE(sol.converged);
  EXPECT_NEAR(sol.k(0, 0), 1.0, 1e-9);
  EXPECT_NEAR(sol.k(0, 1), std::sqrt(3.0), 1e-9);
}

TEST(Care, RandomSystemsAreStabilized) {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 4;
    const int m = 1 + trial % 2;
    MatrixXd a(n, n), b(n, m);
    for (int i = 0; i < n; ++i) a.row(i) = oracle::random_vector(rng, n).transpose();
    for (int i = 0; i < n; ++i) b.row(i) = oracle::random_vector(rng, m).transpose();
    const MatrixXd q = oracle::random_spd(rng, n);
    const MatrixXd r = oracle::random_spd(rng, m);
    const auto sol = bcbf::solve_care(a, b, q, r);
    ASSERT_TRUE(sol.converged) << trial;
    EXPECT_TRUE(bcbf::is_hurwitz(a - b * sol.k)) << trial;
    EXPECT_LE(care_residual(a, b, q, r, sol.p), 1e-7 * std::max(1.0, sol.p.norm())) << trial;
  }
}

TEST(Care, WarmStartConvergesQuickly) {
  const MatrixXd a = double_integrator_a();
  const MatrixXd b = double_integrator_b();
  const MatrixXd q = MatrixXd::Identity(2, 2);
  const MatrixXd r = MatrixXd::Ones(1, 1);
  const auto cold = bcbf::solve_care(a, b, q, r);
  const auto warm = bcbf::solve_care(a, b, q, r, cold.k);
  ASSERT_TRUE(warm.converged);
  EXPECT_LE(warm.iterations, 3);
  EXPECT_LE((warm.k - cold.k).norm(), 1e-9);
}

TEST(Care, RejectsBadShapes) {
  EXPECT_THROW(bcbf::solve_care(MatrixXd::Zero(2, 2), MatrixXd::Ones(1, 1), MatrixXd::Identity(2, 2),
                                MatrixXd::Ones(1, 1)),
               bcbf::ConfigError);
  EXPECT_THROW(bcbf::solve_care(MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1),
                                -MatrixXd::Ones(1, 1)),
               bcbf::ConfigError);
}

TEST(LqrControllerTest, DrivesErrorToZero) {
  bcbf::LqrController lqr(MatrixXd::Identity(2, 2), MatrixXd::Ones(1, 1));
  VectorXd x(2);
  x << 1.0, 0.0;
  const double dt = 0.01;
  for (int k = 0; k < 2000; ++k) {
    const VectorXd u = lqr.control(double_integrator_a(), double_integrator_b(), x);
    x += dt * (double_integrator_a() * x + double_integrator_b() * u);
  }
  EXPECT_LE(x.norm(), 1e-3);
  ASSERT_TRUE(lqr.gain().has_value());
}
