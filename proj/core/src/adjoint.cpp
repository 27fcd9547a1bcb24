#include "sdrs/adjoint.h"

namespace sdrs {

Trajectory rollout(Simulator& sim, const VecX& theta0, const VecX& dtheta0,
                   const ControlPolicy& policy, int horizon) {
  Trajectory traj;
  traj.theta_init = theta0;
  traj.theta_init_prev = theta0 - sim.params().dt * dtheta0;
  VecX cur = theta0;
  VecX prev = traj.theta_init_prev;
  for (int t = 0; t < horizon; ++t) {
    const ControlSignal u = policy.eval(cur, prev, t);
    StepOutcome out = sim.step(cur, prev, u);
    if (out.status != StepStatus::kConverged)
      throw StepFailure(t, out.status);
    StepRecord rec;
    rec.theta_next = out.theta_next;
    rec.u = u;
    rec.contacts_next = std::move(out.contacts_next);
    rec.frictions = std::move(out.frictions);
    rec.objective = out.objective;
    rec.newton_iterations = out.newton_iterations;
    rec.active_pairs = out.active_pairs;
    rec.min_distance = out.min_distance;
    prev = cur;
    cur = rec.theta_next;
    traj.steps.push_back(std::move(rec));
  }
  return traj;
}

StepSensitivities step_sensitivities(Simulator& sim, const VecX& theta_next,
                                     const VecX& theta_cur,
                                     const VecX& theta_prev,
                                     const ControlSignal& u,
                                     const StepRecord& record) {
  const Model& model = sim.model();
  const StepParams& params = sim.params();
  const int dof = model.dof_count();
  const int nd = model.design_dim();

  Simulator::FullDerivs fd = sim.full_derivatives(
      theta_next, theta_cur, theta_prev, u, record.contacts_next,
      record.frictions);
  // Layout of fd.hess columns: [design | theta_next | theta_cur |
  // theta_prev], rows on the theta_next leg.
  const MatX h_next = fd.hess.middleCols(nd, dof);
  const MatX m_cur = fd.hess.middleCols(nd + dof, dof);
  const MatX m_prev = fd.hess.middleCols(nd + 2 * dof, dof);
  const MatX m_design = fd.hess.leftCols(nd);

  // Mixed blocks against the control signal: only the PD energy touches u.
  MatX m_u = MatX::Zero(dof, 2 * dof);
  for (int link = 0; link < model.link_count(); ++link) {
    const Joint& j = model.links[link].joint;
    if (!j.actuated) continue;
    for (int r = 0; r < joint_dof_count(j.kind); ++r) {
      const int i = j.dof_offset + r;
      m_u(i, i) = -2.0 * params.kp;
      m_u(i, dof + i) = -2.0 * params.kd / params.dt;
    }
  }

  Eigen::SelfAdjointEigenSolver<MatX> eig(h_next);
  const double lmax = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (eig.eigenvalues().minCoeff() < 1e-10 * std::max(1.0, lmax))
    throw SensitivityFailure(
        "unclamped step Hessian is singular (min eigenvalue " +
        std::to_string(eig.eigenvalues().minCoeff()) + ")");
  const auto solve = [&](const MatX& rhs) -> MatX {
    MatX tmp = eig.eigenvectors().transpose() * rhs;
    tmp.array().colwise() /= eig.eigenvalues().array();
    return -(eig.eigenvectors() * tmp);
  };

  StepSensitivities out;
  out.j_prev = solve(m_cur);
  out.j_prev2 = solve(m_prev);
  out.j_u = solve(m_u);
  out.j_d = solve(m_design);
  return out;
}

TrajectoryGradient trajectory_gradient(Simulator& sim,
                                       const Trajectory& traj,
                                       const TerminalLoss& loss,
                                       const ControlPolicy& policy) {
  const Model& model = sim.model();
  const int dof = model.dof_count();
  const int H = traj.horizon();

  TrajectoryGradient out;
  out.d_design = VecX::Zero(model.design_dim());
  out.d_control = VecX::Zero(policy.param_count());

  VecX d_theta_h = VecX::Zero(dof);
  VecX d_design_direct = VecX::Zero(model.design_dim());
  out.loss = loss.eval(model, sim.design(), traj.theta(H), &d_theta_h,
                       &d_design_direct);
  out.d_design += d_design_direct;
  if (H == 0) return out;

  std::vector<VecX> adj(H + 1, VecX::Zero(dof));
  adj[H] = d_theta_h;

  for (int t = H - 1; t >= 0; --t) {
    const VecX& lambda = adj[t + 1];
    if (lambda.norm() == 0.0) continue;
    const StepRecord& rec = traj.steps[t];
    StepSensitivities sens;
    try {
      sens = step_sensitivities(sim, rec.theta_next, traj.theta(t),
                                traj.theta(t - 1), rec.u, rec);
    } catch (const SensitivityFailure& e) {
      throw SensitivityFailure("at step " + std::to_string(t) + ": " +
                               e.what());
    }
    MatX du_dc, du_dcur, du_dprev;
    policy.eval(traj.theta(t), traj.theta(t - 1), t, &du_dc, &du_dcur,
                &du_dprev);

    out.d_design += sens.j_d.transpose() * lambda;
    out.d_control += (sens.j_u * du_dc).transpose() * lambda;
    adj[t] += (sens.j_prev + sens.j_u * du_dcur).transpose() * lambda;
    if (t >= 1)
      adj[t - 1] += (sens.j_prev2 + sens.j_u * du_dprev).transpose() * lambda;
  }
  return out;
}

}  // namespace sdrs
