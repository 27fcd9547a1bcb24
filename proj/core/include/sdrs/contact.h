#pragma once

#include <optional>
#include <vector>

#include "sdrs/barrier.h"
#include "sdrs/geometry.h"
#include "sdrs/kinematics.h"
#include "sdrs/types.h"

namespace sdrs {

/// Separating plane p = (n, o). n is NOT unit; at any finite-energy
/// optimum 0 < |n| < 1.
struct SeparatingPlane {
  Vec4 p = Vec4::Zero();
  Vec3 n() const { return p.head<3>(); }
  double offset() const { return p[3]; }
};

enum class InnerStatus {
  kConverged,
  kInfeasible,      // no separating plane with finite energy (penetration)
  kMaxIterations,
  kSingularHessian,
};

struct ContactResult {
  double value = 0.0;
  SeparatingPlane plane;
  bool active = false;  // value > 0
  InnerStatus status = InnerStatus::kConverged;
  int iterations = 0;
  // Plane-side products per vertex: qa = -(n.w + o), qb = n.w + o.
  VecX qa, qb;
  Mat4 hess_pp = Mat4::Zero();  // inner Hessian at the optimum
};

struct ContactSolveOptions {
  double grad_tol = 1e-8;
  int max_iters = 100;
};

/// Energy of a candidate plane: P(1-|n|) + sum of per-vertex barrier terms.
/// Returns nullopt when any barrier argument is nonpositive (the plane
/// fails to separate with margin); such planes have undefined energy and
/// warm starts falling here are discarded.
std::optional<double> contact_inner_energy(const Mat3X& wa, const Mat3X& wb,
                                           const Vec4& p,
                                           const BarrierParams& bp,
                                           Vec4* grad = nullptr,
                                           Mat4* hess = nullptr,
                                           VecX* qa = nullptr,
                                           VecX* qb = nullptr);

/// Scaled middle plane between the GJK witness points:
/// n = (1-s) (xb - xa)/|xb - xa|, o = -n.(xa + xb)/2.
/// Feasible whenever the hulls are disjoint.
Vec4 contact_init_plane(const Vec3& witness_a, const Vec3& witness_b,
                        double s);

/// Minimizes the inner energy over the plane by damped Newton with
/// feasibility backtracking, warm-started when the given plane is usable.
ContactResult contact_solve(const Mat3X& wa, const Mat3X& wb,
                            const BarrierParams& bp,
                            const Vec4* warm_start = nullptr,
                            const ContactSolveOptions& opt = {});

struct ContactDerivatives {
  VecX grad;        // dU_c/dV (envelope form, no plane-sensitivity term)
  MatX hess;        // hess-window rows x |V|, with theplane correction
  MatX plane_sens;  // 4 x |V| : dp*/dV, zero when the pair is inactive
};

/// Derivatives of the converged potential with respect to the jet layout.
/// Jets must be order >= 1; order 2 when with_hessian. All jets must share
/// one layout and, for the Hessian, one row window.
ContactDerivatives contact_derivatives(const std::vector<PointJet>& a,
                                       const std::vector<PointJet>& b,
                                       const ContactResult& result,
                                       const BarrierParams& bp,
                                       bool with_hessian,
                                       bool with_plane_sens);

/// Per-vertex normal forces (on hull A and hull B vertices), used by the
/// friction frame and the momentum checks: f = -dU_c/d(world vertex).
void contact_vertex_forces(const ContactResult& result,
                           const BarrierParams& bp, Mat3X* forces_a,
                           Mat3X* forces_b);

}  // namespace sdrs
