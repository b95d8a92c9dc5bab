#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "bcbf/errors.hpp"
#include "bcbf/gaussian_belief.hpp"

namespace bcbf {

/// Disk (or ball) {p : |p - center| < radius} over selected position
/// coordinates of the state, to be avoided with probability 1 - delta.
struct CircularObstacle {
  VectorXd center;
  double radius = 0.0;
  double delta = 0.01;
  std::vector<Index> position_indices;  // state coordinates that center refers to
};

inline VectorXd position_of(const VectorXd& x, const std::vector<Index>& idx) {
  VectorXd p(static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) p(static_cast<Index>(k)) = x(idx[k]);
  return p;
}

inline constexpr double kObstacleDirectionEps = 1e-9;

/// Linearizes the collision condition |p - c| - r >= 0 around the belief mean:
/// alpha = (mu_p - c) / |mu_p - c| embedded in the position coordinates,
/// beta = alpha^T c + r. When the mean sits on the center, `previous_alpha`
/// is reused.
inline RiskHalfSpace obstacle_halfspace(const GaussianBelief& b, const CircularObstacle& obs,
                                        const std::optional<VectorXd>& previous_alpha = std::nullopt) {
  if (obs.center.size() != static_cast<Index>(obs.position_indices.size())) {
    throw ConfigError("obstacle: center dimension does not match position indices");
  }
  if (!(obs.radius >= 0.0)) throw ConfigError("obstacle: radius must be >= 0");
  const VectorXd offset = position_of(b.mean(), obs.position_indices) - obs.center;
  const double dist = offset.norm();
  VectorXd alpha;
  if (dist < kObstacleDirectionEps) {
    if (!previous_alpha || previous_alpha->size() != b.dim()) {
      throw DomainError("obstacle: belief mean at obstacle center and no previous direction to hold");
    }
    alpha = *previous_alpha;
  } else {
    alpha = VectorXd::Zero(b.dim());
    for (std::size_t k = 0; k < obs.position_indices.size(); ++k) {
      alpha(obs.position_indices[k]) = offset(static_cast<Index>(k)) / dist;
    }
  }
  const double beta = position_of(alpha, obs.position_indices).dot(obs.center) + obs.radius;
  return RiskHalfSpace(alpha, beta, obs.delta);
}

/// Signed clearance |p - c| - r of a state.
inline double obstacle_clearance(const VectorXd& x, const CircularObstacle& obs) {
  return (position_of(x, obs.position_indices) - obs.center).norm() - obs.radius;
}

}  // namespace bcbf
