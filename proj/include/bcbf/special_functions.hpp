#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include "bcbf/errors.hpp"

namespace bcbf {

inline double erf(double x) { return std::erf(x); }

/// Inverse error function on (-1, 1).
///
/// Starts from Winitzki's closed-form approximation (relative error ~2e-3) and
/// polishes with Halley steps on std::erf until the update is below one ulp.
inline double erfinv(double p) {
  if (!(p > -1.0 && p < 1.0)) {
    throw DomainError("erfinv: argument must lie in (-1, 1)");
  }
  if (p == 0.0) return 0.0;

  constexpr double a = 0.147;
  constexpr double two_over_pi_a = 2.0 / (std::numbers::pi * a);
  const double ln = std::log1p(-p * p);
  const double t = two_over_pi_a + 0.5 * ln;
  double x = std::copysign(std::sqrt(std::sqrt(t * t - ln / a) - t), p);

  const double two_over_sqrt_pi = 2.0 / std::sqrt(std::numbers::pi);
  for (int it = 0; it < 8; ++it) {
    const double err = std::erf(x) - p;
    const double slope = two_over_sqrt_pi * std::exp(-x * x);
    if (slope == 0.0) break;
    const double newton = err / slope;
    // Halley: f'' / f' = -2x for erf.
    const double step = newton / (1.0 + x * newton);
    x -= step;
    if (std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(x)) break;
  }
  return x;
}

/// Upper Gaussian-type tail ½(1 - erf(x)), computed through erfc to keep
/// accuracy for large positive x.
inline double half_erfc(double x) { return 0.5 * std::erfc(x); }

}  // namespace bcbf
