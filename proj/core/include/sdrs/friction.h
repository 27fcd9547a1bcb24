#pragma once

#include <optional>
#include <vector>

#include "sdrs/contact.h"

namespace sdrs {

/// Friction data frozen at timestep t: the separating plane, the plane-side
/// products feeding the normal forces, and a deterministic tangent basis.
struct FrictionFrame {
  Vec4 plane = Vec4::Zero();  // p* at time t
  VecX qa, qb;                // plane-side products at time t
  Mat32 basis = Mat32::Zero();
  int axis_pick = 0;  // coordinate axis the basis was grown from
  double mu = 0.0;
  double dt = 1.0;
  BarrierParams bp;
  bool active = false;  // any vertex inside the barrier support at t
};

/// Orthonormal tangent basis of the (normalized) plane normal: complete
/// the coordinate axis least aligned with it. Deterministic.
Mat32 tangent_basis(const Vec3& n_hat, int* axis_pick = nullptr);

FrictionFrame friction_frame(const ContactResult& at_t, double mu, double dt,
                             const BarrierParams& bp);

struct FrictionResult {
  double value = 0.0;
  Vec2 u = Vec2::Zero();
  double omega = 0.0;
  // Set when the dissipation is flat (or rank-deficient) in omega; omega is
  // pinned to zero and dropped from the sensitivity solve.
  bool omega_reduced = false;
  Mat3 hess_z = Mat3::Zero();  // inner Hessian in (u, omega) at the optimum
  InnerStatus status = InnerStatus::kConverged;
  int iterations = 0;
};

struct FrictionSolveOptions {
  double grad_tol = 1e-8;
  int max_iters = 100;
  // Test hook: shift of the rotation lever along the first basis column.
  // The optimal value is invariant to it.
  double alpha_shift = 0.0;
};

/// Dissipation at a candidate plane velocity (u, omega). Needs world
/// vertices of both hulls at t and t+1.

double friction_inner_energy(const FrictionFrame& frame, const Mat3X& wa_t,
                             const Mat3X& wb_t, const Mat3X& wa_next,
                             const Mat3X& wb_next, const Vec2& u,
                             double omega, double alpha_shift = 0.0,
                             Vec3* grad = nullptr, Mat3* hess = nullptr);

/// Minimizes the dissipation over the plane velocity (maximal dissipation
/// principle). Always solvable; the energy is convex and smooth.
FrictionResult friction_solve(const FrictionFrame& frame, const Mat3X& wa_t,
                              const Mat3X& wb_t, const Mat3X& wa_next,
                              const Mat3X& wb_next,
                              const Vec3* warm_start = nullptr,
                              const FrictionSolveOptions& opt = {});

struct FrictionDerivatives {
  VecX grad;   // dU_f/dV (envelope form at the optimal plane velocity)
  MatX mixed;  // dof x |V| mixed second derivative, theta-next leg as rows
};

/// Derivatives over a jet layout covering (an optional design block and)
/// the configurations at t and t+1. jets at time t need order 1; jets at
/// t+1 need order 2 with the Hessian row window equal to the theta-next
/// block when `with_mixed`. plane_sens is dp*(t)/dV from the contact solve
/// at time t (pass an empty matrix to treat the plane as constant).
FrictionDerivatives friction_derivatives(
    const FrictionFrame& frame, const FrictionResult& result,
    const std::vector<PointJet>& a_t, const std::vector<PointJet>& b_t,
    const std::vector<PointJet>& a_next, const std::vector<PointJet>& b_next,
    const MatX& plane_sens, const DiffLayout& layout, int next_state_index,
    bool with_mixed);

/// Tangential force on each vertex (zero for vertices outside the barrier
/// support at time t); applied at the time-t positions.
void friction_vertex_forces(const FrictionFrame& frame,
                            const FrictionResult& result, const Mat3X& wa_t,
                            const Mat3X& wb_t, const Mat3X& wa_next,
                            const Mat3X& wb_next, Mat3X* forces_a,
                            Mat3X* forces_b);

}  // namespace sdrs
