#include "sdrs/friction.h"

#include <cmath>

namespace sdrs {

Mat32 tangent_basis(const Vec3& n_hat, int* axis_pick) {
  int axis = 0;
  n_hat.cwiseAbs().minCoeff(&axis);
  if (axis_pick) *axis_pick = axis;
  const Vec3 e = Vec3::Unit(axis);
  const Vec3 v1 = e - e.dot(n_hat) * n_hat;
  Mat32 b;
  b.col(0) = v1.normalized();
  b.col(1) = n_hat.cross(b.col(0));
  return b;
}

FrictionFrame friction_frame(const ContactResult& at_t, double mu, double dt,
                             const BarrierParams& bp) {
  FrictionFrame frame;
  frame.plane = at_t.plane.p;
  frame.qa = at_t.qa;
  frame.qb = at_t.qb;
  frame.mu = mu;
  frame.dt = dt;
  frame.bp = bp;
  frame.active = false;
  for (int m = 0; m < frame.qa.size(); ++m)
    if (frame.qa[m] < bp.s) frame.active = true;
  for (int m = 0; m < frame.qb.size(); ++m)
    if (frame.qb[m] < bp.s) frame.active = true;
  const double nn = frame.plane.head<3>().norm();
  if (nn > 0.0)
    frame.basis = tangent_basis(frame.plane.head<3>() / nn,
                                &frame.axis_pick);
  return frame;
}

namespace {

// Per-vertex dissipation pieces shared by value/derivative paths.
struct VertexTerm {
  double a = 0.0;       // smoothed normal-force magnitude A_eps(f)
  Vec3 f = Vec3::Zero();
  double pd = 0.0, pdd = 0.0;  // barrier grad/hess at the time-t product
  Vec3 g = Vec3::Zero();       // (w_next - w_t)/dt
  Vec3 lever = Vec3::Zero();   // n x (w_t + alpha b1)
  Vec2 c = Vec2::Zero();       // B^T lever
  Vec2 r = Vec2::Zero();       // B^T g - omega c - u
  double psi = 0.0;
  Vec2 rho = Vec2::Zero();     // r / psi
  Mat2 mpsi = Mat2::Zero();    // (I - r r^T / psi^2) / psi
  int index = 0;               // vertex index within its hull
  bool on_a = true;
};

// Collects the active terms (P'(q) != 0 at time t). Inactive vertices
// contribute neither value nor derivatives.
std::vector<VertexTerm> collect_terms(const FrictionFrame& frame,
                                      const Mat3X& wa_t, const Mat3X& wb_t,
                                      const Mat3X& wa_next,
                                      const Mat3X& wb_next, const Vec2& u,
                                      double omega, double alpha_shift) {
  std::vector<VertexTerm> terms;
  if (!frame.active) return terms;
  const Vec3 n = frame.plane.head<3>();
  const Mat32& B = frame.basis;
  const double dt = frame.dt;

  auto add = [&](const Mat3X& wt, const Mat3X& wn, const VecX& q,
                 double f_sign, bool on_a) {
    for (int m = 0; m < q.size(); ++m) {
      if (q[m] >= frame.bp.s) continue;
      VertexTerm t;
      t.index = m;
      t.on_a = on_a;
      t.pd = barrier_grad(q[m], frame.bp.s);
      t.pdd = barrier_hess(q[m], frame.bp.s);
      t.f = f_sign * t.pd * n;
      t.a = smooth_norm(t.f, frame.bp.eps);
      t.g = (wn.col(m) - wt.col(m)) / dt;
      t.lever = n.cross((wt.col(m) + alpha_shift * B.col(0)).eval());
      t.c = B.transpose() * t.lever;
      t.r = B.transpose() * t.g - omega * t.c - u;
      t.psi = std::sqrt(t.r.squaredNorm() + frame.bp.eps);
      t.rho = t.r / t.psi;
      t.mpsi = (Mat2::Identity() - t.r * t.r.transpose() / (t.psi * t.psi)) /
               t.psi;
      terms.push_back(t);
    }
  };
  add(wa_t, wa_next, frame.qa, 1.0, true);
  add(wb_t, wb_next, frame.qb, -1.0, false);
  return terms;
}

}  // namespace

double friction_inner_energy(const FrictionFrame& frame, const Mat3X& wa_t,
                             const Mat3X& wb_t, const Mat3X& wa_next,
                             const Mat3X& wb_next, const Vec2& u,
                             double omega, double alpha_shift, Vec3* grad,
                             Mat3* hess) {
  if (grad) grad->setZero();
  if (hess) hess->setZero();
  double value = 0.0;
  const double scale = frame.mu * frame.dt;
  for (const VertexTerm& t :
       collect_terms(frame, wa_t, wb_t, wa_next, wb_next, u, omega,
                     alpha_shift)) {
    value += scale * t.a * t.psi;
    if (grad || hess) {
      Eigen::Matrix<double, 2, 3> A;  // dr/d(u,omega) = -A
      A.leftCols<2>() = Mat2::Identity();
      A.col(2) = t.c;
      if (grad) *grad -= scale * t.a * A.transpose() * t.rho;
      if (hess) *hess += scale * t.a * A.transpose() * t.mpsi * A;
    }
  }
  return value;
}

FrictionResult friction_solve(const FrictionFrame& frame, const Mat3X& wa_t,
                              const Mat3X& wb_t, const Mat3X& wa_next,
                              const Mat3X& wb_next, const Vec3* warm_start,
                              const FrictionSolveOptions& opt) {
  FrictionResult res;
  Vec3 z = warm_start ? *warm_start : Vec3::Zero();

  auto eval = [&](const Vec3& zz, Vec3* g, Mat3* h) {
    return friction_inner_energy(frame, wa_t, wb_t, wa_next, wb_next,
                                 zz.head<2>(), zz[2], opt.alpha_shift, g, h);
  };

  Vec3 grad;
  Mat3 hess;
  double value = eval(z, &grad, &hess);
  if (value == 0.0) {
    res.omega_reduced = true;
    return res;  // no active vertex: identically zero in (u, omega)
  }

  // The null space of the inner Hessian is independent of (u, omega):
  // each term's kernel is fixed by its lever projection c_m, and the
  // joint problem is rank-deficient exactly when all active c_m coincide
  // (the dissipation then depends on u + omega c only). The test is
  // structural so the branch cannot flip between nearby states.
  {
    const auto terms = collect_terms(frame, wa_t, wb_t, wa_next, wb_next,
                                     Vec2::Zero(), 0.0, opt.alpha_shift);
    double lever_scale = 0.0, spread = 0.0;
    for (const auto& t : terms) lever_scale = std::max(lever_scale, t.c.norm());
    for (const auto& t : terms) spread = std::max(spread, (t.c - terms.front().c).norm());
    const bool flat_col =
        hess.col(2).norm() < 1e-12 * std::max(1.0, hess.norm());
    if (flat_col || spread <= 1e-9 * (1.0 + lever_scale)) {
      res.omega_reduced = true;
      z[2] = 0.0;
      value = eval(z, &grad, &hess);
    }
  }

  // Gradient tolerance relative to the dissipation force scale, for the
  // same precision-floor reason as the contact solve.
  double force_scale = 1.0;
  {
    const auto terms = collect_terms(frame, wa_t, wb_t, wa_next, wb_next,
                                     Vec2::Zero(), 0.0, opt.alpha_shift);
    double sum = 0.0;
    for (const auto& t : terms) sum += t.a;
    force_scale = std::max(1.0, frame.mu * frame.dt * sum);
  }

  // Polish two orders beyond the stated tolerance (about one extra Newton
  // iteration) so the force-balance residual clears the momentum bounds.
  const int dim = res.omega_reduced ? 2 : 3;
  for (int iter = 0; iter < opt.max_iters; ++iter) {
    res.iterations = iter;
    if (grad.head(dim).norm() < 0.01 * opt.grad_tol * force_scale) break;

    MatX h = hess.topLeftCorner(dim, dim);
    VecX dir = -Eigen::LDLT<MatX>(h).solve(grad.head(dim));
    if (!dir.allFinite()) {
      h.diagonal().array() += 1e-10 * (1.0 + h.norm());
      dir = -Eigen::LDLT<MatX>(h).solve(grad.head(dim));
    }

    double t = 1.0;
    bool accepted = false;
    while (t > 1e-14) {
      Vec3 cand = z;
      cand.head(dim) += t * dir;
      Vec3 g2;
      Mat3 h2;
      const double v2 = eval(cand, &g2, &h2);
      if (v2 <= value) {
        z = cand;
        value = v2;
        grad = g2;
        hess = h2;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    if (iter + 1 == opt.max_iters &&
        grad.head(dim).norm() >= opt.grad_tol * force_scale)
      res.status = InnerStatus::kMaxIterations;
  }

  res.value = value;
  res.u = z.head<2>();
  res.omega = z[2];
  res.hess_z = hess;
  return res;
}

FrictionDerivatives friction_derivatives(
    const FrictionFrame& frame, const FrictionResult& result,
    const std::vector<PointJet>& a_t, const std::vector<PointJet>& b_t,
    const std::vector<PointJet>& a_next, const std::vector<PointJet>& b_next,
    const MatX& plane_sens, const DiffLayout& layout, int next_state_index,
    bool with_mixed) {
  const int nv = layout.size();
  const int dof = layout.n_dof;
  const int tb = layout.state_offset(next_state_index);

  FrictionDerivatives out;
  out.grad = VecX::Zero(nv);
  if (with_mixed) out.mixed = MatX::Zero(dof, nv);
  if (!frame.active) return out;

  const Vec3 n = frame.plane.head<3>();
  const double nn = n.norm();
  const Vec3 nh = n / nn;
  const Mat32& B = frame.basis;
  const double scale = frame.mu * frame.dt;
  const double dt = frame.dt;

  // Plane and basis chains. plane_sens may be empty (constant plane).
  MatX Dn = MatX::Zero(3, nv), Do = MatX::Zero(1, nv);
  if (plane_sens.size() > 0) {
    Dn = plane_sens.topRows(3);
    Do = plane_sens.row(3);
  }
  const Mat3 proj_n = (Mat3::Identity() - nh * nh.transpose()) / nn;
  const MatX Dnh = proj_n * Dn;
  const Vec3 e = Vec3::Unit(frame.axis_pick);
  const Vec3 v1 = e - e.dot(nh) * nh;
  const double l1 = v1.norm();
  const Vec3 b1 = B.col(0), b2 = B.col(1);
  const MatX Dv1 =
      -((e.dot(nh)) * Mat3::Identity() + nh * e.transpose()) * Dnh;
  const MatX Db1 = (Mat3::Identity() - b1 * b1.transpose()) / l1 * Dv1;
  const MatX Db2 = skew(nh) * Db1 - skew(b1) * Dnh;

  // Inner-sensitivity accumulators.
  Eigen::Matrix<double, 3, Eigen::Dynamic> X;   // d2G/dz dV
  Eigen::Matrix<double, 3, Eigen::Dynamic> G2;  // d2G/dz dtheta_next
  if (with_mixed) {
    X.setZero(3, nv);
    G2.setZero(3, dof);
  }

  auto process = [&](const std::vector<PointJet>& jt,
                     const std::vector<PointJet>& jn, const VecX& q,
                     double q_sign, double f_sign) {
    for (int m = 0; m < q.size(); ++m) {
      if (q[m] >= frame.bp.s) continue;
      const PointJet& pt = jt[m];
      const PointJet& pn = jn[m];
      const Vec3 w_t = pt.x;
      const Vec3 w_next = pn.x;

      const double pd = barrier_grad(q[m], frame.bp.s);
      const double pdd = barrier_hess(q[m], frame.bp.s);
      const Vec3 f = f_sign * pd * n;
      const double phi_f = std::sqrt(f.squaredNorm() + frame.bp.eps);
      const double a = phi_f - std::sqrt(frame.bp.eps);

      // Chains of the frozen-frame quantities through (d, theta_t).
      const Eigen::RowVectorXd Dq =
          q_sign * (w_t.transpose() * Dn + n.transpose() * pt.J + Do);
      const MatX Df = f_sign * (n * (pdd * Dq) + pd * Dn);
      const Eigen::RowVectorXd Da = (f.transpose() / phi_f) * Df;

      const Vec3 g = (w_next - w_t) / dt;
      const MatX Dg = (pn.J - pt.J) / dt;
      const Vec3 lever = n.cross(w_t);
      const MatX Dlever = -skew(w_t) * Dn + skew(n) * pt.J;
      const Vec2 c(b1.dot(lever), b2.dot(lever));
      MatX Dc(2, nv);
      Dc.row(0) = lever.transpose() * Db1 + b1.transpose() * Dlever;
      Dc.row(1) = lever.transpose() * Db2 + b2.transpose() * Dlever;

      const Vec2 r(b1.dot(g) - result.omega * c[0] - result.u[0],
                   b2.dot(g) - result.omega * c[1] - result.u[1]);
      MatX Dr(2, nv);
      Dr.row(0) = g.transpose() * Db1 + b1.transpose() * Dg;
      Dr.row(1) = g.transpose() * Db2 + b2.transpose() * Dg;
      Dr -= result.omega * Dc;

      const double psi = std::sqrt(r.squaredNorm() + frame.bp.eps);
      const Vec2 rho = r / psi;
      const Mat2 mpsi =
          (Mat2::Identity() - r * r.transpose() / (psi * psi)) / psi;
      const Eigen::RowVectorXd Dpsi = rho.transpose() * Dr;

      out.grad += scale * (psi * Da + a * Dpsi).transpose();

      if (!with_mixed) continue;

      // theta-next leg: r depends on it only through w_next.
      const MatX Jnext_theta = pn.J.middleCols(tb, dof);
      const MatX Rplus = (B.transpose() * Jnext_theta) / dt;  // 2 x dof

      // Explicit mixed block of this term.
      MatX mixed_m = (Rplus.transpose() * rho) * Da;  // dof x nv
      mixed_m += a * (Rplus.transpose() * mpsi * Dr);
      // Second derivative of r through w_next: basis tilt x J, plus the
      // kinematic Hessian contracted with the basis columns.
      const Vec3 beta = B * rho;
      MatX w2 = MatX::Zero(dof, nv);
      w2 += (Jnext_theta.transpose() * (Db1 * rho[0] + Db2 * rho[1])) / dt;
      for (int cc = 0; cc < 3; ++cc) w2 += (beta[cc] / dt) * pn.H[cc];
      mixed_m += a * w2;
      out.mixed += scale * mixed_m;

      // Inner-sensitivity pieces.
      Eigen::Matrix<double, 2, 3> A;
      A.leftCols<2>() = Mat2::Identity();
      A.col(2) = c;
      G2 -= scale * a * (A.transpose() * mpsi * Rplus);
      MatX xm = (A.transpose() * rho) * Da;  // 3 x nv
      MatX dAr = MatX::Zero(3, nv);
      dAr.row(2) = rho.transpose() * Dc;
      xm += a * (dAr + A.transpose() * mpsi * Dr);
      X -= scale * xm;
    }
  };
  process(a_t, a_next, frame.qa, -1.0, 1.0);
  process(b_t, b_next, frame.qb, 1.0, -1.0);

  if (with_mixed) {
    const int dim = result.omega_reduced ? 2 : 3;
    const MatX K = result.hess_z.topLeftCorner(dim, dim);
    MatX S = MatX::Zero(3, dof);  // d(u*, omega*)/d theta_next
    S.topRows(dim) = -Eigen::LDLT<MatX>(K).solve(G2.topRows(dim));
    if (!S.allFinite())
      throw std::runtime_error(
          "friction: singular inner Hessian in the sensitivity solve");
    out.mixed += S.transpose() * X;
  }
  return out;
}

void friction_vertex_forces(const FrictionFrame& frame,
                            const FrictionResult& result, const Mat3X& wa_t,
                            const Mat3X& wb_t, const Mat3X& wa_next,
                            const Mat3X& wb_next, Mat3X* forces_a,
                            Mat3X* forces_b) {
  if (forces_a) forces_a->setZero(3, wa_t.cols());
  if (forces_b) forces_b->setZero(3, wb_t.cols());
  for (const VertexTerm& t :
       collect_terms(frame, wa_t, wb_t, wa_next, wb_next, result.u,
                     result.omega, 0.0)) {
    const Vec3 force = -frame.mu * t.a * (frame.basis * t.rho);
    if (t.on_a && forces_a) forces_a->col(t.index) = force;
    if (!t.on_a && forces_b) forces_b->col(t.index) = force;
  }
}

}  // namespace sdrs
