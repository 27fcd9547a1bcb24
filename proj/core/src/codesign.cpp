#include "sdrs/codesign.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sdrs {

ControlSignal ConstantTargetPolicy::eval(const VecX& theta_cur,
                                         const VecX& theta_prev, int t,
                                         MatX* du_dc, MatX* du_dcur,
                                         MatX* du_dprev) const {
  (void)theta_cur;
  (void)theta_prev;
  (void)t;
  const int dof = static_cast<int>(theta_star_.size());
  ControlSignal u;
  u.theta_target = theta_star_;
  u.dtheta_target = VecX::Zero(dof);
  if (du_dc) {
    du_dc->setZero(2 * dof, dof);
    du_dc->topRows(dof).setIdentity();
  }
  if (du_dcur) du_dcur->setZero(2 * dof, dof);
  if (du_dprev) du_dprev->setZero(2 * dof, dof);
  return u;
}

SineSuperpositionPolicy::SineSuperpositionPolicy(int dof, double dt)
    : dof_(dof), dt_(dt), c_(VecX::Zero(dof * kPerDof)) {}

ControlSignal SineSuperpositionPolicy::eval(const VecX&, const VecX&, int t,
                                            MatX* du_dc, MatX* du_dcur,
                                            MatX* du_dprev) const {
  ControlSignal u;
  u.theta_target = VecX::Zero(dof_);
  u.dtheta_target = VecX::Zero(dof_);
  const double tau = t * dt_;
  if (du_dc) du_dc->setZero(2 * dof_, param_count());
  if (du_dcur) du_dcur->setZero(2 * dof_, dof_);
  if (du_dprev) du_dprev->setZero(2 * dof_, dof_);

  for (int i = 0; i < dof_; ++i) {
    const int base = i * kPerDof;
    const double bias = c_[base + 0];
    const double freq = c_[base + 1];
    double pos = bias, vel = 0.0;
    if (du_dc) (*du_dc)(i, base + 0) = 1.0;
    for (int k = 0; k < kWaves; ++k) {
      const double mag = c_[base + 2 + k];
      const double phase = c_[base + 2 + kWaves + k];
      const double omega = 2.0 * M_PI * (k + 1) * freq;
      const double arg = omega * tau + phase;
      const double s = std::sin(arg), co = std::cos(arg);
      pos += mag * s;
      vel += mag * omega * co;
      if (du_dc) {
        const double domega_df = 2.0 * M_PI * (k + 1);
        (*du_dc)(i, base + 2 + k) = s;                        // d pos / d mag
        (*du_dc)(i, base + 2 + kWaves + k) = mag * co;        // d pos / d phase
        (*du_dc)(i, base + 1) += mag * co * domega_df * tau;  // d pos / d freq
        (*du_dc)(dof_ + i, base + 2 + k) = omega * co;
        (*du_dc)(dof_ + i, base + 2 + kWaves + k) = -mag * omega * s;
        (*du_dc)(dof_ + i, base + 1) +=
            mag * domega_df * (co - omega * tau * s);
      }
    }
    u.theta_target[i] = pos;
    u.dtheta_target[i] = vel;
  }
  return u;
}

CubicSplinePolicy::CubicSplinePolicy(int dof, double dt)
    : dof_(dof), dt_(dt), c_(VecX::Zero(4 * dof)) {}

ControlSignal CubicSplinePolicy::eval(const VecX&, const VecX&, int t,
                                      MatX* du_dc, MatX* du_dcur,
                                      MatX* du_dprev) const {
  ControlSignal u;
  u.theta_target = VecX::Zero(dof_);
  u.dtheta_target = VecX::Zero(dof_);
  const double tau = t * dt_;
  if (du_dc) du_dc->setZero(2 * dof_, param_count());
  if (du_dcur) du_dcur->setZero(2 * dof_, dof_);
  if (du_dprev) du_dprev->setZero(2 * dof_, dof_);
  for (int i = 0; i < dof_; ++i) {
    const int base = 4 * i;
    const double c0 = c_[base], c1 = c_[base + 1], c2 = c_[base + 2],
                 c3 = c_[base + 3];
    u.theta_target[i] = c0 + tau * (c1 + tau * (c2 + tau * c3));
    u.dtheta_target[i] = c1 + tau * (2.0 * c2 + 3.0 * tau * c3);
    if (du_dc) {
      (*du_dc)(i, base + 0) = 1.0;
      (*du_dc)(i, base + 1) = tau;
      (*du_dc)(i, base + 2) = tau * tau;
      (*du_dc)(i, base + 3) = tau * tau * tau;
      (*du_dc)(dof_ + i, base + 1) = 1.0;
      (*du_dc)(dof_ + i, base + 2) = 2.0 * tau;
      (*du_dc)(dof_ + i, base + 3) = 3.0 * tau * tau;
    }
  }
  return u;
}

double JointTargetLoss::eval(const Model& model, const RobotDesign&,
                             const VecX& theta, VecX* d_theta,
                             VecX* d_design) const {
  if (d_theta) *d_theta = 2.0 * (theta - theta_star_);
  if (d_design) d_design->setZero(model.design_dim());
  return (theta - theta_star_).squaredNorm();
}

Vec3 center_of_mass(const Model& model, const RobotDesign& design,
                    const StepParams& params, const VecX& theta,
                    const std::vector<int>& links, MatX* d_theta,
                    MatX* d_design) {
  const bool with_derivs = d_theta || d_design;
  const int dof = model.dof_count();
  const int nd = model.design_dim();
  DiffLayout layout{with_derivs ? nd : 0, dof, 1};
  KinematicsJet jet(model, design, theta, layout, with_derivs ? 0 : -1,
                    with_derivs ? 1 : 0);

  Vec3 com = Vec3::Zero();
  MatX dth = MatX::Zero(3, dof), dd = MatX::Zero(3, nd);
  double total = 0.0;
  for (int link : links) {
    const double rho = vertex_mass(model, params, link);
    if (rho == 0.0) continue;
    for (const auto& hull : model.links[link].hull_slots)
      for (int slot : hull) {
        PointJet p = jet.point(link, design.slots.col(slot), slot);
        com += rho * p.x;
        total += rho;
        if (with_derivs) {
          dd += rho * p.J.leftCols(nd);
          dth += rho * p.J.rightCols(dof);
        }
      }
  }
  if (total > 0.0) {
    com /= total;
    dth /= total;
    dd /= total;
  }
  if (d_theta) *d_theta = dth;
  if (d_design) *d_design = dd;
  return com;
}

double ComTargetLoss::eval(const Model& model, const RobotDesign& design,
                           const VecX& theta, VecX* d_theta,
                           VecX* d_design) const {
  MatX dth, dd;
  const Vec3 com = center_of_mass(model, design, params_, theta, links_,
                                  d_theta ? &dth : nullptr,
                                  d_design ? &dd : nullptr);
  const Vec3 e = com - target_;
  if (d_theta) *d_theta = 2.0 * dth.transpose() * e;
  if (d_design) *d_design = 2.0 * dd.transpose() * e;
  return e.squaredNorm();
}

double RelativeComLoss::eval(const Model& model, const RobotDesign& design,
                             const VecX& theta, VecX* d_theta,
                             VecX* d_design) const {
  MatX dth_a, dd_a, dth_b, dd_b;
  const Vec3 com_a = center_of_mass(model, design, params_, theta, links_a_,
                                    d_theta ? &dth_a : nullptr,
                                    d_design ? &dd_a : nullptr);
  const Vec3 com_b = center_of_mass(model, design, params_, theta, links_b_,
                                    d_theta ? &dth_b : nullptr,
                                    d_design ? &dd_b : nullptr);
  const Vec3 e = com_a - com_b;
  if (d_theta) *d_theta = 2.0 * (dth_a - dth_b).transpose() * e;
  if (d_design) *d_design = 2.0 * (dd_a - dd_b).transpose() * e;
  return e.squaredNorm();
}

double VertexTargetLoss::eval(const Model& model, const RobotDesign& design,
                              const VecX& theta, VecX* d_theta,
                              VecX* d_design) const {
  const int dof = model.dof_count();
  const int nd = model.design_dim();
  DiffLayout layout{nd, dof, 1};
  KinematicsJet jet(model, design, theta, layout, 0, 1);
  const int slot = model.links[link_].hull_slots[hull_][m_];
  PointJet p = jet.point(link_, design.slots.col(slot), slot);
  const Vec3 e = p.x - target_;
  if (d_theta) *d_theta = 2.0 * p.J.rightCols(dof).transpose() * e;
  if (d_design) *d_design = 2.0 * p.J.leftCols(nd).transpose() * e;
  return e.squaredNorm();
}

VecX project_to_simplex(const VecX& w) {
  const int n = static_cast<int>(w.size());
  std::vector<double> u(w.data(), w.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  int k = 0;
  for (int i = 0; i < n; ++i) {
    css += u[i];
    const double t = (css - 1.0) / (i + 1);
    if (u[i] - t > 0.0) {
      theta = t;
      k = i + 1;
    }
  }
  (void)k;
  VecX out(n);
  for (int i = 0; i < n; ++i) out[i] = std::max(0.0, w[i] - theta);
  return out;
}

void apply_design_scope(const Model& model, DesignScope scope, VecX* grad) {
  const int nv = 3 * model.n_slots;
  switch (scope) {
    case DesignScope::kAll:
      return;
    case DesignScope::kNone:
      grad->setZero();
      return;
    case DesignScope::kAttachments:
      grad->head(nv).setZero();
      return;
    case DesignScope::kVertices:
      grad->tail(model.weight_dim()).setZero();
      return;
  }
}

void project_design(const Model& model, VecX* d) {
  const int nv = 3 * model.n_slots;
  for (const Link& link : model.links) {
    const Joint& j = link.joint;
    if (j.attachment_hull < 0) continue;
    const int n = static_cast<int>(
        model.links[j.parent].hull_slots[j.attachment_hull].size());
    d->segment(nv + j.weight_offset, n) =
        project_to_simplex(d->segment(nv + j.weight_offset, n));
  }
}

namespace {

VecX optimizer_step(const VecX& grad, double alpha, OptimizerKind kind,
                    const UpdateOptions& opt, AdamState* state) {
  if (alpha <= 0.0 || grad.size() == 0) return VecX::Zero(grad.size());
  VecX step;
  if (kind == OptimizerKind::kAdam && state != nullptr) {
    if (state->m.size() != grad.size()) {
      state->m = VecX::Zero(grad.size());
      state->v = VecX::Zero(grad.size());
      state->step = 0;
    }
    ++state->step;
    state->m = opt.beta1 * state->m + (1.0 - opt.beta1) * grad;
    state->v =
        opt.beta2 * state->v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(opt.beta1, state->step);
    const double bc2 = 1.0 - std::pow(opt.beta2, state->step);
    const VecX mhat = state->m / bc1;
    const VecX vhat = state->v / bc2;
    step = -alpha * mhat.cwiseQuotient(
                        vhat.cwiseSqrt().array().matrix() +
                        VecX::Constant(grad.size(), opt.adam_eps));
  } else {
    step = -alpha * grad;
  }
  const double norm = step.norm();
  if (norm > alpha) step *= alpha / norm;  // trust radius
  return step;
}

}  // namespace

void project_update(const Model& model, DesignScope scope,
                    const UpdateOptions& opt, const VecX& grad_d,
                    const VecX& grad_c, VecX* d, VecX* c, AdamState* adam_d,
                    AdamState* adam_c) {
  VecX gd = grad_d;
  apply_design_scope(model, scope, &gd);
  *d += optimizer_step(gd, opt.alpha_d, opt.optimizer, opt, adam_d);
  project_design(model, d);
  *c += optimizer_step(grad_c, opt.alpha_c, opt.optimizer, opt, adam_c);
}

std::vector<CodesignIterate> codesign_optimize(Simulator& sim,
                                               ControlPolicy& policy,
                                               const TerminalLoss& loss,
                                               const VecX& theta0,
                                               const VecX& dtheta0,
                                               const CodesignOptions& opt) {
  std::vector<CodesignIterate> history;
  UpdateOptions update = opt.update;
  AdamState adam_d, adam_c;

  VecX d = sim.design().pack();
  VecX c = policy.params();
  VecX prev_d = d, prev_c = c;
  TrajectoryGradient grad;
  bool have_grad = false;

  for (int iter = 0; iter < opt.iterations; ++iter) {
    Trajectory traj;
    int attempt = 0;
    for (;;) {
      try {
        traj = rollout(sim, theta0, dtheta0, policy, opt.horizon);
        break;
      } catch (const StepFailure& e) {
        // Reject the last update, halve both radii, retry from the
        // previous accepted iterate.
        if (!have_grad || ++attempt > opt.max_retries)
          throw std::runtime_error(
              "codesign: rollout failed at iteration " +
              std::to_string(iter) + " (" + e.what() + ") after " +
              std::to_string(attempt) + " retries");
        update.alpha_d *= 0.5;
        update.alpha_c *= 0.5;
        d = prev_d;
        c = prev_c;
        project_update(sim.model(), opt.scope, update, grad.d_design,
                       grad.d_control, &d, &c, &adam_d, &adam_c);
        RobotDesign design = sim.design();
        design.unpack(sim.model(), d);
        sim.set_design(design);
        policy.set_params(c);
      }
    }

    grad = trajectory_gradient(sim, traj, loss, policy);
    have_grad = true;
    history.push_back({grad.loss, d, c});

    prev_d = d;
    prev_c = c;
    project_update(sim.model(), opt.scope, update, grad.d_design,
                   grad.d_control, &d, &c, &adam_d, &adam_c);
    RobotDesign design = sim.design();
    design.unpack(sim.model(), d);
    sim.set_design(design);
    policy.set_params(c);
  }
  return history;
}

}  // namespace sdrs
