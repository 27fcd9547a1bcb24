#include "sdrs/dynamics.h"

#include <algorithm>
#include <cmath>

namespace sdrs {

double vertex_mass(const Model& model, const StepParams& params, int link) {
  if (model.link_is_static(link)) return 0.0;  // boundary geometry
  const Link& l = model.links[link];
  if (l.rho >= 0.0) return l.rho;
  if (params.rho > 0.0) return params.rho;
  const int n = model.link_vertex_count(link);
  return n > 0 ? 1.0 / n : 0.0;
}

namespace {

// Shared objective assembly. The layout is either the solver layout
// [theta_next] or the full layout [design | th+ | th0 | th-]; Hessian rows
// always live on the theta_next leg.
struct AssembleInput {
  const Model* model;
  const RobotDesign* design;
  const StepParams* params;
  VecX theta_next, theta_cur, theta_prev;
  const ControlSignal* u;
  const std::vector<FrictionState>* frictions;
  bool full_layout = false;
  int order = 0;
  // Contact data: either solve per candidate pair (stepping) or replay
  // stored results (adjoint).
  const std::vector<Bvh::LeafInfo>* hulls;
  Bvh* bvh = nullptr;                                   // stepping mode
  std::map<std::pair<int, int>, Vec4>* plane_warm = nullptr;
  std::map<std::pair<int, int>, Vec3>* velocity_warm = nullptr;
  const std::vector<ContactState>* contacts_replay = nullptr;
  const std::vector<FrictionState>* frictions_replay = nullptr;
};

struct Assembled {
  bool feasible = true;
  double value = 0.0;
  VecX grad;
  MatX hess;
  std::vector<ContactState> contacts;
  std::vector<FrictionState> frictions;
};

class Assembler {
 public:
  explicit Assembler(const AssembleInput& in)
      : in_(in), model_(*in.model), params_(*in.params) {
    const int dof = model_.dof_count();
    layout_.n_dof = dof;
    if (in_.full_layout) {
      layout_.n_design = model_.design_dim();
      layout_.n_states = 3;
    } else {
      layout_.n_design = 0;
      layout_.n_states = 1;
    }
    const int jet_order = in_.order;
    jet_next_.emplace(model_, *in_.design, in_.theta_next, layout_, 0,
                      jet_order, layout_.state_offset(0), dof);
    const int aux_order = in_.order >= 1 ? 1 : 0;
    jet_cur_.emplace(model_, *in_.design, in_.theta_cur, layout_,
                     in_.full_layout ? 1 : -1, aux_order);
    jet_prev_.emplace(model_, *in_.design, in_.theta_prev, layout_,
                      in_.full_layout ? 2 : -1, aux_order);
  }

  Assembled run() {
    Assembled out;
    if (in_.order >= 1) out.grad = VecX::Zero(layout_.size());
    if (in_.order >= 2) out.hess = MatX::Zero(layout_.n_dof, layout_.size());

    add_inertia(out);
    add_pd(out);
    if (!add_contact(out)) {
      out.feasible = false;
      out.value = std::numeric_limits<double>::infinity();
      return out;
    }
    add_friction(out);
    return out;
  }

 private:
  const AssembleInput& in_;
  const Model& model_;
  const StepParams& params_;
  DiffLayout layout_;
  std::optional<KinematicsJet> jet_next_, jet_cur_, jet_prev_;
  std::map<int, std::vector<PointJet>> jets_next_cache_, jets_cur_cache_;

  const std::vector<PointJet>& hull_jets(int hull_id, bool next) {
    auto& cache = next ? jets_next_cache_ : jets_cur_cache_;
    auto it = cache.find(hull_id);
    if (it != cache.end()) return it->second;
    const auto& ref = (*in_.hulls)[hull_id];
    const auto& slots = model_.links[ref.link].hull_slots[ref.hull];
    std::vector<PointJet> jets;
    jets.reserve(slots.size());
    const KinematicsJet& jet = next ? *jet_next_ : *jet_cur_;
    for (int slot : slots)
      jets.push_back(
          jet.point(ref.link, in_.design->slots.col(slot), slot));
    return cache.emplace(hull_id, std::move(jets)).first->second;
  }

  void add_inertia(Assembled& out) {
    const double dt2 = params_.dt * params_.dt;
    for (int link = 0; link < model_.link_count(); ++link) {
      const double rho = vertex_mass(model_, params_, link);
      if (rho == 0.0) continue;
      for (size_t h = 0; h < model_.links[link].hull_slots.size(); ++h) {
        for (int slot : model_.links[link].hull_slots[h]) {
          const Vec3 local = in_.design->slots.col(slot);
          const PointJet pn = jet_next_->point(link, local, slot);
          const PointJet pc = jet_cur_->point(link, local, slot);
          const PointJet pp = jet_prev_->point(link, local, slot);
          const Vec3 acc = pn.x - 2.0 * pc.x + pp.x;
          out.value += rho / (2.0 * dt2) * acc.squaredNorm();
          out.value -= rho * params_.gravity.dot(pn.x);
          if (in_.order < 1) continue;
          const Mat3X stencil = pn.J - 2.0 * pc.J + pp.J;
          out.grad += (rho / dt2) * stencil.transpose() * acc;
          out.grad -= rho * pn.J.transpose() * params_.gravity;
          if (in_.order < 2) continue;
          const int tb = layout_.state_offset(0);
          out.hess += (rho / dt2) *
                      stencil.middleCols(tb, layout_.n_dof).transpose() *
                      stencil;
          // Only the theta_next state curves through this leg; the other
          // states' kinematic Hessians have no rows in the window.
          for (int c = 0; c < 3; ++c)
            out.hess += ((rho / dt2) * acc[c] -
                         rho * params_.gravity[c]) *
                        pn.H[c];
        }
      }
    }
  }

  void add_pd(Assembled& out) {
    if (params_.kp == 0.0 && params_.kd == 0.0) return;
    const double dt = params_.dt;
    const int dof = layout_.n_dof;
    const int tb_next = layout_.state_offset(0);
    const int tb_cur = in_.full_layout ? layout_.state_offset(1) : -1;
    for (int link = 0; link < model_.link_count(); ++link) {
      const Joint& j = model_.links[link].joint;
      if (!j.actuated) continue;
      for (int r = 0; r < joint_dof_count(j.kind); ++r) {
        const int i = j.dof_offset + r;
        const double ep = in_.u->theta_target[i] - in_.theta_next[i];
        const double ev =
            in_.u->dtheta_target[i] -
            (in_.theta_next[i] - in_.theta_cur[i]) / dt;
        out.value += params_.kp * ep * ep + params_.kd * ev * ev;
        if (in_.order < 1) continue;
        out.grad[tb_next + i] +=
            -2.0 * params_.kp * ep - 2.0 * params_.kd / dt * ev;
        if (tb_cur >= 0) out.grad[tb_cur + i] += 2.0 * params_.kd / dt * ev;
        if (in_.order < 2) continue;
        out.hess(i, tb_next + i) +=
            2.0 * params_.kp + 2.0 * params_.kd / (dt * dt);
        if (tb_cur >= 0)
          out.hess(i, tb_cur + i) -= 2.0 * params_.kd / (dt * dt);
      }
    }
    (void)dof;
  }

  bool add_contact(Assembled& out) {
    const double kappa = params_.kappa;
    if (in_.contacts_replay) {
      for (const ContactState& cs : *in_.contacts_replay) {
        if (!cs.result.active) continue;
        const auto& ja = hull_jets(cs.hulls.first, true);
        const auto& jb = hull_jets(cs.hulls.second, true);
        ContactDerivatives cd = contact_derivatives(
            ja, jb, cs.result, params_.barrier, in_.order >= 2, false);
        out.value += kappa * cs.result.value;
        if (in_.order >= 1) out.grad += kappa * cd.grad;
        if (in_.order >= 2) out.hess += kappa * cd.hess;
      }
      return true;
    }

    // Stepping mode: broad phase at the probe state, narrow solves with
    // warm-started planes.
    std::vector<Mat3X> world(in_.hulls->size());
    for (size_t h = 0; h < in_.hulls->size(); ++h)
      world[h] =
          jet_next_->hull_world((*in_.hulls)[h].link, (*in_.hulls)[h].hull);
    in_.bvh->refit(world);
    const auto pairs = in_.bvh->overlapping_pairs(params_.support_inflate());

    ContactSolveOptions copt;
    copt.grad_tol = params_.newton.inner_grad_tol;
    copt.max_iters = params_.newton.inner_max_iters;
    for (const auto& pr : pairs) {
      const Vec4* warm = nullptr;
      auto it = in_.plane_warm->find(pr);
      if (it != in_.plane_warm->end()) warm = &it->second;
      ContactResult res =
          contact_solve(world[pr.first], world[pr.second], params_.barrier,
                        warm, copt);
      if (res.status == InnerStatus::kInfeasible) return false;
      if (res.status != InnerStatus::kConverged &&
          res.status != InnerStatus::kMaxIterations)
        return false;
      (*in_.plane_warm)[pr] = res.plane.p;
      out.value += kappa * res.value;
      if (in_.order >= 1 && res.active) {
        const auto& ja = hull_jets(pr.first, true);
        const auto& jb = hull_jets(pr.second, true);
        ContactDerivatives cd = contact_derivatives(
            ja, jb, res, params_.barrier, in_.order >= 2, false);
        out.grad += kappa * cd.grad;
        if (in_.order >= 2) out.hess += kappa * cd.hess;
      }
      out.contacts.push_back({pr, std::move(res)});
    }
    return true;
  }

  void add_friction(Assembled& out) {
    const double kappa = params_.kappa;
    const auto* states =
        in_.frictions_replay ? in_.frictions_replay : in_.frictions;
    if (states == nullptr) return;
    FrictionSolveOptions fopt;
    fopt.grad_tol = params_.newton.inner_grad_tol;
    fopt.max_iters = params_.newton.inner_max_iters;

    for (const FrictionState& fs : *states) {
      if (!fs.frame.active) continue;
      const auto& ref_a = (*in_.hulls)[fs.hulls.first];
      const auto& ref_b = (*in_.hulls)[fs.hulls.second];
      const Mat3X wa_t = jet_cur_->hull_world(ref_a.link, ref_a.hull);
      const Mat3X wb_t = jet_cur_->hull_world(ref_b.link, ref_b.hull);
      const Mat3X wa_n = jet_next_->hull_world(ref_a.link, ref_a.hull);
      const Mat3X wb_n = jet_next_->hull_world(ref_b.link, ref_b.hull);

      FrictionResult res;
      if (in_.frictions_replay) {
        res = fs.result;  // already converged at this state
      } else {
        const Vec3* warm = nullptr;
        Vec3 warm_store;
        auto it = in_.velocity_warm->find(fs.hulls);
        if (it != in_.velocity_warm->end()) {
          warm_store = it->second;
          warm = &warm_store;
        }
        res = friction_solve(fs.frame, wa_t, wb_t, wa_n, wb_n, warm, fopt);
        (*in_.velocity_warm)[fs.hulls] =
            Vec3(res.u.x(), res.u.y(), res.omega);
      }
      out.value += kappa * res.value;

      if (in_.order >= 1) {
        const auto& ja_n = hull_jets(fs.hulls.first, true);
        const auto& jb_n = hull_jets(fs.hulls.second, true);
        const auto& ja_t = hull_jets(fs.hulls.first, false);
        const auto& jb_t = hull_jets(fs.hulls.second, false);
        MatX plane_sens;
        if (in_.full_layout && fs.contact_at_cur.active) {
          ContactDerivatives cd = contact_derivatives(
              ja_t, jb_t, fs.contact_at_cur, params_.barrier, false, true);
          plane_sens = cd.plane_sens;
        }
        FrictionDerivatives fd = friction_derivatives(
            fs.frame, res, ja_t, jb_t, ja_n, jb_n, plane_sens, layout_, 0,
            in_.order >= 2);
        out.grad += kappa * fd.grad;
        if (in_.order >= 2) out.hess += kappa * fd.mixed;
      }
      FrictionState copy = fs;
      copy.result = res;
      out.frictions.push_back(std::move(copy));
    }
  }
};

}  // namespace

double inertia_energy(const Model& model, const RobotDesign& design,
                      const StepParams& params, const VecX& theta_next,
                      const VecX& theta_cur, const VecX& theta_prev,
                      VecX* grad, MatX* hess) {
  ControlSignal u;
  u.theta_target = VecX::Zero(model.dof_count());
  u.dtheta_target = VecX::Zero(model.dof_count());
  StepParams p = params;
  p.kp = p.kd = 0.0;
  AssembleInput in;
  in.model = &model;
  in.design = &design;
  in.params = &p;
  in.theta_next = theta_next;
  in.theta_cur = theta_cur;
  in.theta_prev = theta_prev;
  in.u = &u;
  in.order = hess ? 2 : (grad ? 1 : 0);
  std::vector<Bvh::LeafInfo> no_hulls;
  in.hulls = &no_hulls;
  std::vector<ContactState> no_contacts;
  in.contacts_replay = &no_contacts;
  std::vector<FrictionState> no_frictions;
  in.frictions_replay = &no_frictions;
  Assembler assembler(in);
  Assembled out = assembler.run();
  if (grad) *grad = out.grad;
  if (hess) *hess = out.hess;
  return out.value;
}

double pd_energy(const Model& model, const StepParams& params,
                 const VecX& theta_next, const VecX& theta_cur,
                 const ControlSignal& u, VecX* grad, MatX* hess) {
  const double dt = params.dt;
  double value = 0.0;
  if (grad) grad->setZero(model.dof_count());
  if (hess) hess->setZero(model.dof_count(), model.dof_count());
  for (int link = 0; link < model.link_count(); ++link) {
    const Joint& j = model.links[link].joint;
    if (!j.actuated) continue;
    for (int r = 0; r < joint_dof_count(j.kind); ++r) {
      const int i = j.dof_offset + r;
      const double ep = u.theta_target[i] - theta_next[i];
      const double ev =
          u.dtheta_target[i] - (theta_next[i] - theta_cur[i]) / dt;
      value += params.kp * ep * ep + params.kd * ev * ev;
      if (grad)
        (*grad)[i] += -2.0 * params.kp * ep - 2.0 * params.kd / dt * ev;
      if (hess)
        (*hess)(i, i) += 2.0 * params.kp + 2.0 * params.kd / (dt * dt);
    }
  }
  return value;
}

Simulator::Simulator(const Model& model, RobotDesign design,
                     StepParams params)
    : model_(&model), design_(std::move(design)), params_(params) {
  for (int link = 0; link < model.link_count(); ++link)
    for (size_t h = 0; h < model.links[link].hull_slots.size(); ++h)
      hulls_.push_back({link, static_cast<int>(h)});
}

void Simulator::set_design(const RobotDesign& design) {
  design_ = design;
  plane_warm_.clear();
  velocity_warm_.clear();
}

std::vector<Mat3X> Simulator::world_hulls(const KinematicsJet& jet) const {
  std::vector<Mat3X> world(hulls_.size());
  for (size_t h = 0; h < hulls_.size(); ++h)
    world[h] = jet.hull_world(hulls_[h].link, hulls_[h].hull);
  return world;
}

std::vector<ContactState> Simulator::contacts_at(const VecX& theta,
                                                 bool strict) {
  KinematicsJet jet(*model_, design_, theta,
                    DiffLayout{0, model_->dof_count(), 1}, -1, 0);
  auto world = world_hulls(jet);
  bvh_ = Bvh::build(world, hulls_);
  ContactSolveOptions copt;
  copt.grad_tol = params_.newton.inner_grad_tol;
  copt.max_iters = params_.newton.inner_max_iters;
  std::vector<ContactState> out;
  for (const auto& pr : bvh_.overlapping_pairs(params_.support_inflate())) {
    const Vec4* warm = nullptr;
    auto it = plane_warm_.find(pr);
    if (it != plane_warm_.end()) warm = &it->second;
    ContactResult res = contact_solve(world[pr.first], world[pr.second],
                                      params_.barrier, warm, copt);
    if (res.status == InnerStatus::kInfeasible) {
      if (strict)
        throw PenetrationError(hulls_[pr.first].link, hulls_[pr.first].hull,
                               hulls_[pr.second].link,
                               hulls_[pr.second].hull);
      continue;
    }
    plane_warm_[pr] = res.plane.p;
    out.push_back({pr, std::move(res)});
  }
  return out;
}

std::vector<FrictionState> Simulator::friction_states(
    const std::vector<ContactState>& at_cur, const VecX& theta_cur) {
  (void)theta_cur;
  std::vector<FrictionState> out;
  for (const ContactState& cs : at_cur) {
    if (!cs.result.active) continue;
    FrictionState fs;
    fs.hulls = cs.hulls;
    fs.frame =
        friction_frame(cs.result, params_.mu, params_.dt, params_.barrier);
    fs.contact_at_cur = cs.result;
    out.push_back(std::move(fs));
  }
  return out;
}

std::optional<double> Simulator::objective(
    const VecX& theta_next, const VecX& theta_cur, const VecX& theta_prev,
    const ControlSignal& u, const std::vector<FrictionState>& frictions,
    VecX* grad, MatX* hess, std::vector<ContactState>* contacts) {
  if (bvh_.leaf_count() == 0 && !hulls_.empty()) {
    KinematicsJet jet(*model_, design_, theta_next,
                      DiffLayout{0, model_->dof_count(), 1}, -1, 0);
    bvh_ = Bvh::build(world_hulls(jet), hulls_);
  }
  AssembleInput in;
  in.model = model_;
  in.design = &design_;
  in.params = &params_;
  in.theta_next = theta_next;
  in.theta_cur = theta_cur;
  in.theta_prev = theta_prev;
  in.u = &u;
  in.frictions = &frictions;
  in.order = hess ? 2 : (grad ? 1 : 0);
  in.hulls = &hulls_;
  in.bvh = &bvh_;
  in.plane_warm = &plane_warm_;
  in.velocity_warm = &velocity_warm_;
  Assembler assembler(in);
  Assembled out = assembler.run();
  if (!out.feasible) return std::nullopt;
  if (grad) *grad = out.grad;
  if (hess) *hess = out.hess;
  if (contacts) *contacts = std::move(out.contacts);
  return out.value;
}

StepOutcome Simulator::step(const VecX& theta_cur, const VecX& theta_prev,
                            const ControlSignal& u) {
  StepOutcome outcome;
  const int dof = model_->dof_count();
  if (dof == 0) {
    outcome.theta_next = theta_cur;
    return outcome;
  }

  auto contacts_cur = contacts_at(theta_cur, true);
  auto frictions = friction_states(contacts_cur, theta_cur);

  VecX theta = theta_cur;
  VecX grad(dof);
  MatX hess(dof, dof);
  std::vector<ContactState> contacts;

  auto eval = [&](const VecX& th, VecX* g, MatX* h,
                  std::vector<ContactState>* cs) {
    return objective(th, theta_cur, theta_prev, u, frictions, g, h, cs);
  };

  auto value = eval(theta, &grad, &hess, &contacts);
  if (!value.has_value())
    throw std::runtime_error("step: objective infeasible at the start state");

  const NewtonParams& np = params_.newton;
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  int iter = 0;
  for (; iter < np.max_iters; ++iter) {
    if (grad.lpNorm<Eigen::Infinity>() < np.grad_inf_tol) break;

    // Descent direction from the eigenvalue-clamped Hessian.
    Eigen::SelfAdjointEigenSolver<MatX> eig(hess);
    VecX evals = eig.eigenvalues().cwiseMax(np.eig_floor);
    VecX dir = -eig.eigenvectors() *
               (eig.eigenvectors().transpose() * grad).cwiseQuotient(evals);
    const double slope = grad.dot(dir);

    double t = 1.0;
    bool accepted = false;
    while (t >= np.ls_min_step) {
      const VecX cand = theta + t * dir;
      auto v2 = eval(cand, nullptr, nullptr, nullptr);
      if (v2.has_value() && *v2 <= *value + np.ls_c * t * slope) {
        theta = cand;
        accepted = true;
        break;
      }
      t *= np.ls_shrink;
    }
    if (!accepted && std::abs(slope) < 1e4 * kEps * (1.0 + std::abs(*value))) {
      // The Armijo decrease is below double-precision resolution of the
      // objective. Walk the Newton direction accepting any step that does
      // not measurably increase the value; the quadratic phase then
      // finishes the last few digits of the gradient.
      const double noise = 64.0 * kEps * (1.0 + std::abs(*value));
      t = 1.0;
      while (t >= np.ls_min_step) {
        const VecX cand = theta + t * dir;
        auto v2 = eval(cand, nullptr, nullptr, nullptr);
        if (v2.has_value() && *v2 <= *value + noise) {
          theta = cand;
          accepted = true;
          break;
        }
        t *= np.ls_shrink;
      }
    }
    if (!accepted) {
      outcome.status = StepStatus::kLineSearchUnderflow;
      break;
    }
    value = eval(theta, &grad, &hess, &contacts);
  }
  if (iter == np.max_iters &&
      grad.lpNorm<Eigen::Infinity>() >= np.grad_inf_tol)
    outcome.status = StepStatus::kMaxIterations;

  // Refresh friction results at the accepted state for the records.
  {
    AssembleInput in;
    in.model = model_;
    in.design = &design_;
    in.params = &params_;
    in.theta_next = theta;
    in.theta_cur = theta_cur;
    in.theta_prev = theta_prev;
    in.u = &u;
    in.frictions = &frictions;
    in.order = 0;
    in.hulls = &hulls_;
    in.bvh = &bvh_;
    in.plane_warm = &plane_warm_;
    in.velocity_warm = &velocity_warm_;
    Assembler assembler(in);
    Assembled fin = assembler.run();
    outcome.objective = fin.value;
    outcome.contacts_next = std::move(fin.contacts);
    outcome.frictions = std::move(fin.frictions);
  }
  outcome.theta_next = theta;
  outcome.newton_iterations = iter;
  for (const auto& cs : outcome.contacts_next)
    if (cs.result.active) ++outcome.active_pairs;
  outcome.min_distance = min_pair_distance(theta);
  return outcome;
}

Simulator::FullDerivs Simulator::full_derivatives(
    const VecX& theta_next, const VecX& theta_cur, const VecX& theta_prev,
    const ControlSignal& u, const std::vector<ContactState>& contacts_next,
    const std::vector<FrictionState>& frictions) {
  AssembleInput in;
  in.model = model_;
  in.design = &design_;
  in.params = &params_;
  in.theta_next = theta_next;
  in.theta_cur = theta_cur;
  in.theta_prev = theta_prev;
  in.u = &u;
  in.full_layout = true;
  in.order = 2;
  in.hulls = &hulls_;
  in.contacts_replay = &contacts_next;
  in.frictions_replay = &frictions;
  Assembler assembler(in);
  Assembled out = assembler.run();
  FullDerivs fd;
  fd.value = out.value;
  fd.grad = std::move(out.grad);
  fd.hess = std::move(out.hess);
  return fd;
}

double Simulator::min_pair_distance(const VecX& theta) {
  KinematicsJet jet(*model_, design_, theta,
                    DiffLayout{0, model_->dof_count(), 1}, -1, 0);
  auto world = world_hulls(jet);
  double best = std::numeric_limits<double>::infinity();
  for (size_t a = 0; a < world.size(); ++a)
    for (size_t b = a + 1; b < world.size(); ++b) {
      if (hulls_[a].link == hulls_[b].link) continue;
      best = std::min(best, gjk_distance(world[a], world[b]).dist);
    }
  return best;
}

}  // namespace sdrs
