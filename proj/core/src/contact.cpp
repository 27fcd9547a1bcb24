#include "sdrs/contact.h"

#include <cmath>

namespace sdrs {

std::optional<double> contact_inner_energy(const Mat3X& wa, const Mat3X& wb,
                                           const Vec4& p,
                                           const BarrierParams& bp,
                                           Vec4* grad, Mat4* hess, VecX* qa,
                                           VecX* qb) {
  const Vec3 n = p.head<3>();
  const double o = p[3];
  const double nn = n.norm();
  const double slack = 1.0 - nn;
  if (slack <= 0.0) return std::nullopt;
  if (nn == 0.0 && o == 0.0) return std::nullopt;

  if (grad) grad->setZero();
  if (hess) hess->setZero();
  if (qa) qa->resize(wa.cols());
  if (qb) qb->resize(wb.cols());

  double g1 = 0.0, h1 = 0.0;
  double value = barrier_eval(slack, bp.s, grad || hess ? &g1 : nullptr,
                              hess ? &h1 : nullptr);
  if (nn > 0.0) {
    const Vec3 nh = n / nn;
    if (grad) grad->head<3>() = -g1 * nh;
    if (hess)
      hess->topLeftCorner<3, 3>() =
          h1 * nh * nh.transpose() -
          g1 / nn * (Mat3::Identity() - nh * nh.transpose());
  }

  for (int m = 0; m < wa.cols(); ++m) {
    const double q = -(n.dot(wa.col(m)) + o);
    if (qa) (*qa)[m] = q;
    if (q <= 0.0) return std::nullopt;
    double g = 0.0, h = 0.0;
    value += barrier_eval(q, bp.s, grad || hess ? &g : nullptr,
                          hess ? &h : nullptr);
    const Vec4 y(wa(0, m), wa(1, m), wa(2, m), 1.0);
    if (grad) *grad -= g * y;
    if (hess) *hess += h * y * y.transpose();
  }
  for (int m = 0; m < wb.cols(); ++m) {
    const double q = n.dot(wb.col(m)) + p[3];
    if (qb) (*qb)[m] = q;
    if (q <= 0.0) return std::nullopt;
    double g = 0.0, h = 0.0;
    value += barrier_eval(q, bp.s, grad || hess ? &g : nullptr,
                          hess ? &h : nullptr);
    const Vec4 y(wb(0, m), wb(1, m), wb(2, m), 1.0);
    if (grad) *grad += g * y;
    if (hess) *hess += h * y * y.transpose();
  }
  return value;
}

Vec4 contact_init_plane(const Vec3& witness_a, const Vec3& witness_b,
                        double s) {
  // The relative shrink keeps 1 - |n| strictly above s under roundoff, so
  // pairs beyond the support radius evaluate to exactly zero.
  const Vec3 diff = witness_b - witness_a;
  const Vec3 n = (1.0 - s) * (1.0 - 1e-12) * diff.normalized();
  Vec4 p;
  p.head<3>() = n;
  p[3] = -n.dot(0.5 * (witness_a + witness_b));
  return p;
}

ContactResult contact_solve(const Mat3X& wa, const Mat3X& wb,
                            const BarrierParams& bp, const Vec4* warm_start,
                            const ContactSolveOptions& opt) {
  ContactResult res;

  Vec4 p = Vec4::Zero();
  bool have_start = false;
  if (warm_start &&
      contact_inner_energy(wa, wb, *warm_start, bp).has_value()) {
    p = *warm_start;
    have_start = true;
  }
  if (!have_start) {
    const GjkResult gjk = gjk_distance(wa, wb);
    if (gjk.dist <= 0.0 || !gjk.witnesses_reliable) {
      res.status = InnerStatus::kInfeasible;
      res.value = std::numeric_limits<double>::infinity();
      return res;
    }
    p = contact_init_plane(gjk.witness_a, gjk.witness_b, bp.s);
    if (!contact_inner_energy(wa, wb, p, bp).has_value()) {
      res.status = InnerStatus::kInfeasible;
      res.value = std::numeric_limits<double>::infinity();
      return res;
    }
  }

  Vec4 grad;
  Mat4 hess;
  VecX qa, qb;
  auto value = contact_inner_energy(wa, wb, p, bp, &grad, &hess, &qa, &qb);
  // The gradient tolerance is relative to the energy scale, and capped by
  // the numerically attainable floor: once Newton steps shrink to ulps of
  // the plane coordinates, the gradient cannot drop below ~eps |H| |p|.
  // The loop polishes two orders beyond the stated tolerance (one extra
  // quadratic-convergence iteration) so force-balance residuals stay well
  // inside the momentum bounds.
  const auto grad_ok = [&](double factor) {
    const double floor = 256.0 * std::numeric_limits<double>::epsilon() *
                         hess.norm() * std::max(1.0, p.norm());
    return grad.norm() <
           std::max(factor * opt.grad_tol * std::max(1.0, *value), floor);
  };
  const auto converged = [&] { return grad_ok(1.0); };
  for (int iter = 0; iter < opt.max_iters; ++iter) {
    res.iterations = iter;
    if (grad_ok(0.01)) break;

    Eigen::LDLT<Mat4> ldlt(hess);
    Vec4 dir;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      dir = -ldlt.solve(grad);
    } else {
      // The inner Hessian is singular only at (or numerically near) zero
      // energy; regularize toward a gradient step.
      Mat4 damped = hess;
      damped.diagonal().array() += 1e-8 + 1e-8 * hess.norm();
      dir = -Eigen::LDLT<Mat4>(damped).solve(grad);
    }
    if (!dir.allFinite()) {
      res.status = InnerStatus::kSingularHessian;
      break;
    }

    double t = 1.0;
    bool accepted = false;
    while (t > 1e-14) {
      const Vec4 cand = p + t * dir;
      auto v2 = contact_inner_energy(wa, wb, cand, bp, &grad, &hess, &qa,
                                     &qb);
      if (v2.has_value() && *v2 <= *value) {
        p = cand;
        value = v2;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // Re-evaluate at p so the outputs match the final iterate.
      value = contact_inner_energy(wa, wb, p, bp, &grad, &hess, &qa, &qb);
      if (!converged()) res.status = InnerStatus::kMaxIterations;
      break;
    }
    if (iter + 1 == opt.max_iters && !converged())
      res.status = InnerStatus::kMaxIterations;
  }

  // Roundoff in |n| can trap the value a few ulps above the exact zero of
  // the support-gap region; snap it there when a shrunken plane confirms.
  if (*value > 0.0 && *value < 1e-40) {
    Vec4 shrunk = p;
    shrunk.head<3>() *= 1.0 - 1e-12;
    auto v2 =
        contact_inner_energy(wa, wb, shrunk, bp, &grad, &hess, &qa, &qb);
    if (v2.has_value() && *v2 == 0.0) {
      p = shrunk;
      value = v2;
    } else {
      value = contact_inner_energy(wa, wb, p, bp, &grad, &hess, &qa, &qb);
    }
  }

  res.value = *value;
  res.plane.p = p;
  res.active = res.value > 0.0;
  res.qa = qa;
  res.qb = qb;
  res.hess_pp = hess;
  return res;
}

ContactDerivatives contact_derivatives(const std::vector<PointJet>& a,
                                       const std::vector<PointJet>& b,
                                       const ContactResult& result,
                                       const BarrierParams& bp,
                                       bool with_hessian,
                                       bool with_plane_sens) {
  const PointJet& ref = a.empty() ? b.front() : a.front();
  const int nv = static_cast<int>(ref.J.cols());
  const int rb = ref.hess_row_begin;
  const int nr = with_hessian ? static_cast<int>(ref.H[0].rows()) : 0;

  ContactDerivatives out;
  out.grad = VecX::Zero(nv);
  if (with_hessian) out.hess = MatX::Zero(nr, nv);
  if (with_plane_sens) out.plane_sens = MatX::Zero(4, nv);
  if (!result.active) return out;  // all barrier terms vanish identically

  const Vec3 n = result.plane.n();
  MatX cross = MatX::Zero(4, nv);  // d2U* / dp dV

  auto accumulate = [&](const std::vector<PointJet>& pts, const VecX& q,
                        double sign) {
    for (size_t m = 0; m < pts.size(); ++m) {
      const PointJet& pt = pts[m];
      double g = 0.0, h = 0.0;
      barrier_eval(q[static_cast<int>(m)], bp.s, &g, &h);
      if (g == 0.0 && h == 0.0) continue;
      // q = sign * (n.w + o); n and o are held at the optimum (envelope).
      const Eigen::RowVectorXd dq = sign * (n.transpose() * pt.J);
      out.grad += g * dq.transpose();
      if (with_hessian) {
        out.hess += h * dq.segment(rb, nr).transpose() * dq;
        for (int c = 0; c < 3; ++c) out.hess += g * sign * n[c] * pt.H[c];
      }
      // dq/dp = sign * y; both mixed-derivative legs carry the hull sign.
      const Vec4 y(pt.x.x(), pt.x.y(), pt.x.z(), 1.0);
      cross += sign * (h * y * dq);
      cross.topRows(3) += g * sign * pt.J;
    }
  };
  accumulate(a, result.qa, -1.0);
  accumulate(b, result.qb, 1.0);

  if ((with_hessian || with_plane_sens) && cross.norm() > 0.0) {
    Eigen::LDLT<Mat4> ldlt(result.hess_pp);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw std::runtime_error(
          "contact: inner Hessian singular at an active pair (plane not "
          "converged)");
    const MatX sens = -ldlt.solve(cross);  // dp*/dV
    if (with_plane_sens) out.plane_sens = sens;
    if (with_hessian) out.hess += cross.middleCols(rb, nr).transpose() * sens;
  }
  return out;
}

void contact_vertex_forces(const ContactResult& result,
                           const BarrierParams& bp, Mat3X* forces_a,
                           Mat3X* forces_b) {
  const Vec3 n = result.plane.n();
  if (forces_a) {
    forces_a->setZero(3, result.qa.size());
    for (int m = 0; m < result.qa.size(); ++m)
      forces_a->col(m) = barrier_grad(result.qa[m], bp.s) * n;
  }
  if (forces_b) {
    forces_b->setZero(3, result.qb.size());
    for (int m = 0; m < result.qb.size(); ++m)
      forces_b->col(m) = -barrier_grad(result.qb[m], bp.s) * n;
  }
}

}  // namespace sdrs
