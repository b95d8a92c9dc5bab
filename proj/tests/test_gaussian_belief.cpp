#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bcbf/errors.hpp"
#include "bcbf/gaussian_belief.hpp"
#include "oracles.hpp"

using bcbf::GaussianBelief;
using bcbf::RiskHalfSpace;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

GaussianBelief scalar(double mu, double var) {
  return GaussianBelief(VectorXd::Constant(1, mu), MatrixXd::Constant(1, 1, var));
}

VectorXd vec1(double a) { return VectorXd::Constant(1, a); }

}  // namespace

TEST(BeliefEncoding, Dimensions) {
  EXPECT_EQ(bcbf::belief_dim(1), 2);
  EXPECT_EQ(bcbf::belief_dim(2), 5);
  EXPECT_EQ(bcbf::belief_dim(4), 14);
  EXPECT_EQ(bcbf::belief_dim(6), 27);
  for (Eigen::Index n = 1; n < 10; ++n) EXPECT_EQ(bcbf::state_dim_for_belief(bcbf::belief_dim(n)), n);
  EXPECT_THROW(bcbf::state_dim_for_belief(13), bcbf::ConfigError);
}

TEST(BeliefEncoding, UpperIndexIsRowMajorEnumeration) {
  for (Eigen::Index n = 1; n < 8; ++n) {
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i; j < n; ++j) EXPECT_EQ(bcbf::upper_index(i, j, n), k++);
  }
}

TEST(BeliefEncoding, RoundTripIsExact) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 7;
    const MatrixXd s = oracle::random_spd(rng, n);
    const MatrixXd sym = 0.5 * (s + s.transpose());
    const MatrixXd back = bcbf::unvec_upper(bcbf::vec_upper(sym), n);
    EXPECT_TRUE((back.array() == sym.array()).all());
    const GaussianBelief b(oracle::random_vector(rng, n), sym);
    const GaussianBelief b2 = GaussianBelief::from_vector(b.to_vector());
    EXPECT_TRUE((b2.mean().array() == b.mean().array()).all());
    EXPECT_TRUE((b2.cov().array() == b.cov().array()).all());
  }
}

TEST(BeliefEncoding, MeanFirstThenUpperTriangle) {
  MatrixXd s(2, 2);
  s << 4, 1, 1, 9;
  const GaussianBelief b(VectorXd::LinSpaced(2, 7, 8), s);
  const VectorXd v = b.to_vector();
  ASSERT_EQ(v.size(), 5);
  EXPECT_EQ(v(0), 7);
  EXPECT_EQ(v(1), 8);
  EXPECT_EQ(v(2), 4);
  EXPECT_EQ(v(3), 1);
  EXPECT_EQ(v(4), 9);
}

TEST(GaussianBeliefType, SymmetrizesAndValidates) {
  MatrixXd s(2, 2);
  s << 1.0, 0.2, 0.0, 1.0;
  const GaussianBelief b(VectorXd::Zero(2), s);
  EXPECT_DOUBLE_EQ(b.cov()(0, 1), 0.1);
  EXPECT_DOUBLE_EQ(b.cov()(1, 0), 0.1);

  MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -0.5;
  EXPECT_THROW(GaussianBelief(VectorXd::Zero(2), bad), bcbf::DomainError);
  const GaussianBelief repaired(VectorXd::Zero(2), bad, bcbf::PsdRepair::clamp);
  EXPECT_NEAR(repaired.cov()(1, 1), 0.0, 1e-15);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<MatrixXd>(repaired.cov()).eigenvalues().minCoeff(), -1e-12);

  MatrixXd tiny(1, 1);
  tiny << -5e-10;
  EXPECT_NO_THROW(GaussianBelief(VectorXd::Zero(1), tiny));
  EXPECT_THROW(GaussianBelief(VectorXd::Zero(2), MatrixXd::Identity(3, 3)), bcbf::ConfigError);
}

TEST(RiskHalfSpaceType, Invariants) {
  EXPECT_THROW(RiskHalfSpace(vec1(1), 0, 0.0), bcbf::ConfigError);
  EXPECT_THROW(RiskHalfSpace(vec1(1), 0, 0.7), bcbf::ConfigError);
  EXPECT_THROW(RiskHalfSpace(vec1(1), 0, 0.1, -0.1), bcbf::ConfigError);
  EXPECT_THROW(RiskHalfSpace(vec1(0), 0, 0.1), bcbf::ConfigError);
  const RiskHalfSpace hs(vec1(1), 0, 0.01);
  EXPECT_NEAR(hs.quantile(), 1.6449763571331868, 1e-12);
  EXPECT_EQ(hs.with_gamma(0.3).gamma(), 0.3);
}

TEST(ProbHalfspace, Examples) {
  EXPECT_NEAR(bcbf::prob_halfspace(scalar(0, 1), vec1(1), 0), 0.5, 1e-15);
  EXPECT_NEAR(bcbf::prob_halfspace(scalar(2, 0.25), vec1(-1), -2), 0.5, 1e-15);
  // Pr[x <= 2] for x ~ N(1.3592, 0.25): standard score 1.2816.
  EXPECT_NEAR(bcbf::prob_halfspace(scalar(1.3592, 0.25), vec1(-1), -2), 0.90, 1e-4);
  EXPECT_NEAR(bcbf::prob_halfspace(scalar(1.3592, 0.25), vec1(-1), -2),
              oracle::normal_cdf((2.0 - 1.3592) / 0.5), 1e-12);
  EXPECT_THROW(bcbf::prob_halfspace(scalar(0, 0), vec1(1), 0), bcbf::SingularError);
}

TEST(ProbHalfspace, MatchesSamplingOracle) {
  std::mt19937_64 rng(17);
  const int n = 3;
  const MatrixXd s = oracle::random_spd(rng, n, 0.5);
  const VectorXd mu = oracle::random_vector(rng, n);
  const VectorXd alpha = oracle::random_vector(rng, n);
  const double beta = alpha.dot(mu) - 0.4;
  const GaussianBelief b(mu, s);
  const double p = bcbf::prob_halfspace(b, alpha, beta);

  const Eigen::LLT<MatrixXd> llt(s);
  const MatrixXd l = llt.matrixL();
  const int samples = 1000000;
  int hits = 0;
  for (int i = 0; i < samples; ++i) {
    const VectorXd x = mu + l * oracle::random_vector(rng, n);
    if (alpha.dot(x) >= beta) ++hits;
  }
  const double freq = static_cast<double>(hits) / samples;
  const double se = std::sqrt(p * (1 - p) / samples);
  EXPECT_LE(std::abs(freq - p), 3.0 * se) << "freq " << freq << " p " << p;
}

TEST(VarValue, Examples) {
  // delta = 0.5 reduces to the mean half-space for any covariance.
  EXPECT_NEAR(bcbf::var_value(scalar(3, 7), RiskHalfSpace(vec1(2), 1, 0.5)), 5.0, 1e-15);
  // Wall at 2, certain mean on the wall.
  EXPECT_NEAR(bcbf::var_value(scalar(2, 0), RiskHalfSpace(vec1(-1), -2, 0.1)), 0.0, 1e-15);
  // Wall at 2, mu = 1, sigma = 0.5, delta = 0.1.
  const double expected = 1.0 - 0.9061938024368232 * std::sqrt(2.0 * 0.25);
  EXPECT_NEAR(bcbf::var_value(scalar(1, 0.25), RiskHalfSpace(vec1(-1), -2, 0.1)), expected, 1e-12);
  EXPECT_NEAR(expected, 0.3592, 1e-4);
  // gamma shifts the value.
  EXPECT_NEAR(bcbf::var_value(scalar(1, 0.25), RiskHalfSpace(vec1(-1), -2, 0.1, 0.2)), expected - 0.2, 1e-12);
}

TEST(VarValue, EquivalentToChanceConstraint) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> ud(0.001, 0.499);
  int checked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 1 + trial % 4;
    const GaussianBelief b(oracle::random_vector(rng, n), oracle::random_spd(rng, n, 0.3));
    const VectorXd alpha = oracle::random_vector(rng, n);
    const double beta = oracle::random_vector(rng, 1)(0);
    const double delta = ud(rng);
    const double h = bcbf::var_value(b, RiskHalfSpace(alpha, beta, delta));
    const double p = bcbf::prob_halfspace(b, alpha, beta);
    if (std::abs(h) < 1e-9 || std::abs(p - (1 - delta)) < 1e-9) continue;
    EXPECT_EQ(h >= 0, p >= 1 - delta);
    ++checked;
  }
  EXPECT_GT(checked, 9900);
}

TEST(VarValue, DecreasesUnderInflationAlongAlpha) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + trial % 5;
    const VectorXd mu = oracle::random_vector(rng, n);
    const MatrixXd s = oracle::random_spd(rng, n);
    const VectorXd alpha = oracle::random_vector(rng, n);
    const RiskHalfSpace hs(alpha, 0.1, 0.05);
    const double h0 = bcbf::var_value(GaussianBelief(mu, s), hs);
    const double h1 = bcbf::var_value(GaussianBelief(mu, s + 0.01 * alpha * alpha.transpose()), hs);
    EXPECT_LT(h1, h0);
  }
}

TEST(VarGradient, Examples) {
  const auto g_half = bcbf::var_gradient(scalar(0.3, 2.0), RiskHalfSpace(vec1(1.5), 0, 0.5));
  EXPECT_EQ(g_half(0), 1.5);
  EXPECT_EQ(g_half(1), 0.0);

  const auto g = bcbf::var_gradient(scalar(0, 1), RiskHalfSpace(vec1(1), 0, 0.1));
  EXPECT_NEAR(g(1), -0.9061938024368232 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(g(1), -0.64078, 1e-5);

  const GaussianBelief b2(VectorXd::Zero(2), MatrixXd::Identity(2, 2));
  VectorXd alpha(2);
  alpha << 1, 0;
  const auto g2 = bcbf::var_gradient(b2, RiskHalfSpace(alpha, 0, 0.1));
  EXPECT_EQ(g2(2 + bcbf::upper_index(0, 1, 2)), 0.0);

  EXPECT_THROW(bcbf::var_gradient(scalar(0, 0), RiskHalfSpace(vec1(1), 0, 0.1)), bcbf::SingularError);
}

TEST(VarGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + trial % 6;
    const GaussianBelief b(oracle::random_vector(rng, n), oracle::random_spd(rng, n));
    const RiskHalfSpace hs(oracle::random_vector(rng, n), 0.3, 0.02, 0.1);
    const VectorXd grad = bcbf::var_gradient(b, hs);
    const VectorXd fd = oracle::fd_gradient(
        [&](const VectorXd& v) {
          const Eigen::Index k = n;
          const MatrixXd s = bcbf::unvec_upper(v.tail(v.size() - k), k);
          return bcbf::var_value(GaussianBelief(v.head(k), s, bcbf::PsdRepair::clamp), hs);
        },
        b.to_vector(), 1e-6);
    EXPECT_LE((grad - fd).norm(), 1e-6 * std::max(1.0, fd.norm())) << "trial " << trial;
  }
}
