#pragma once

#include <cmath>
#include <limits>

#include "sdrs/types.h"

namespace sdrs {

/// Parameters of the scalar contact barrier and the friction smoothing.
/// s is the support radius of the barrier (0 < s < 1), eps the smoothing
/// constant of the regularized norm (eps > 0).
struct BarrierParams {
  double s = 0.1;
  double eps = 1e-6;

  void validate() const {
    if (!(s > 0.0 && s < 1.0)) throw SceneError("s", "must satisfy 0 < s < 1");
    if (!(eps > 0.0)) throw SceneError("eps", "must be > 0");
  }
};

// Scalar barrier, locally supported in (0, s):
//   P(x) = (x - s)^4 / x^5   for 0 < x < s,   P(x) = 0 for x >= s.
// P, P', P'' all vanish at x = s, so the clamp is twice-differentiable.
// x <= 0 is outside the domain; value is +inf, derivatives are NaN.

inline double barrier_value(double x, double s) {
  if (x <= 0.0) return std::numeric_limits<double>::infinity();
  if (x >= s) return 0.0;
  const double d = x - s;
  const double d2 = d * d;
  const double x2 = x * x;
  return (d2 * d2) / (x2 * x2 * x);
}

inline double barrier_grad(double x, double s) {
  if (x <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  if (x >= s) return 0.0;
  const double d = x - s;
  const double x2 = x * x;
  const double x6 = x2 * x2 * x2;
  return d * d * d * (5.0 * s - x) / x6;
}

inline double barrier_hess(double x, double s) {
  if (x <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  if (x >= s) return 0.0;
  const double d = x - s;
  const double x2 = x * x;
  const double x6 = x2 * x2 * x2;
  return 2.0 * d * d * (x2 - 10.0 * s * x + 15.0 * s * s) / (x6 * x);
}

/// Fused evaluation for hot loops; g/h may be null.
inline double barrier_eval(double x, double s, double* g, double* h) {
  if (x <= 0.0) {
    if (g) *g = std::numeric_limits<double>::quiet_NaN();
    if (h) *h = std::numeric_limits<double>::quiet_NaN();
    return std::numeric_limits<double>::infinity();
  }
  if (x >= s) {
    if (g) *g = 0.0;
    if (h) *h = 0.0;
    return 0.0;
  }
  const double d = x - s;
  const double d2 = d * d;
  const double x2 = x * x;
  const double x5 = x2 * x2 * x;
  const double x6 = x5 * x;
  if (g) *g = d2 * d * (5.0 * s - x) / x6;
  if (h) *h = 2.0 * d2 * (x2 - 10.0 * s * x + 15.0 * s * s) / (x6 * x);
  return d2 * d2 / x5;
}

// Regularized norm A_eps(v) = sqrt(|v|^2 + eps) - sqrt(eps).
// Smooth everywhere, zero at the origin with zero gradient, and
// A_eps(v) -> |v| - sqrt(eps) for large |v|.

inline double smooth_norm(const Vec3& v, double eps) {
  return std::sqrt(v.squaredNorm() + eps) - std::sqrt(eps);
}

inline Vec3 smooth_norm_grad(const Vec3& v, double eps) {
  return v / std::sqrt(v.squaredNorm() + eps);
}

inline double smooth_norm(const VecX& v, double eps) {
  return std::sqrt(v.squaredNorm() + eps) - std::sqrt(eps);
}

inline VecX smooth_norm_grad(const VecX& v, double eps) {
  return v / std::sqrt(v.squaredNorm() + eps);
}

}  // namespace sdrs
