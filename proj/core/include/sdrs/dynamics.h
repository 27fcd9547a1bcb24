#pragma once

#include <map>
#include <optional>
#include <vector>

#include "sdrs/contact.h"
#include "sdrs/friction.h"
#include "sdrs/geometry.h"
#include "sdrs/kinematics.h"

namespace sdrs {

struct NewtonParams {
  double grad_inf_tol = 1e-4;  // stop when the objective gradient is below
  double eig_floor = 1e-3;     // Hessian eigenvalues clamped up to this
  int max_iters = 400;
  double ls_shrink = 0.5;
  double ls_c = 1e-4;           // Armijo constant
  double ls_min_step = 1e-12;   // below this the step fails
  double inner_grad_tol = 1e-8;
  int inner_max_iters = 100;
};

struct StepParams {
  double dt = 1e-2;
  double rho = 0.0;  // per-vertex lumped mass; <= 0 gives each link unit mass
  Vec3 gravity = Vec3(0, 0, -9.81);
  double kp = 0.0, kd = 0.0;
  double mu = 0.3;
  double kappa = 1.0;  // weight on the contact + friction sum
  BarrierParams barrier;
  NewtonParams newton;

  double support_inflate() const {
    return 2.0 * barrier.s / (1.0 - barrier.s);
  }
};

/// Per-vertex lumped mass of a link. Static links (no dof on their root
/// path) are boundary geometry and carry no mass.
double vertex_mass(const Model& model, const StepParams& params, int link);

struct ControlSignal {
  VecX theta_target;
  VecX dtheta_target;
};

struct ContactState {
  std::pair<int, int> hulls;  // flattened hull ids, a < b
  ContactResult result;
};

struct FrictionState {
  std::pair<int, int> hulls;
  FrictionFrame frame;
  ContactResult contact_at_cur;  // the frame's source, kept for the
                                 // lagged-plane sensitivity chain
  FrictionResult result;
};

// Standalone energy terms (also exercised directly by tests).

double inertia_energy(const Model& model, const RobotDesign& design,
                      const StepParams& params, const VecX& theta_next,
                      const VecX& theta_cur, const VecX& theta_prev,
                      VecX* grad = nullptr, MatX* hess = nullptr);

double pd_energy(const Model& model, const StepParams& params,
                 const VecX& theta_next, const VecX& theta_cur,
                 const ControlSignal& u, VecX* grad = nullptr,
                 MatX* hess = nullptr);

enum class StepStatus {
  kConverged,
  kLineSearchUnderflow,
  kMaxIterations,
  kSingularHessian,
};

struct StepOutcome {
  StepStatus status = StepStatus::kConverged;
  VecX theta_next;
  double objective = 0.0;
  int newton_iterations = 0;
  int active_pairs = 0;
  double min_distance = std::numeric_limits<double>::infinity();
  std::vector<ContactState> contacts_next;  // converged planes at theta_next
  std::vector<FrictionState> frictions;     // frames used during the step
};

/// Position-level stepper: minimizes inertia + PD + kappa (contact +
/// friction) over the next configuration by damped Newton with eigenvalue
/// clamping and Armijo backtracking. Owns the warm-start caches that
/// persist across timesteps.
class Simulator {
 public:
  Simulator(const Model& model, RobotDesign design, StepParams params);

  const Model& model() const { return *model_; }
  const RobotDesign& design() const { return design_; }
  const StepParams& params() const { return params_; }
  void set_design(const RobotDesign& design);

  int hull_count() const { return static_cast<int>(hulls_.size()); }
  const Bvh::LeafInfo& hull(int i) const { return hulls_[i]; }

  /// Contact results for all broad-phase candidate pairs at a state.
  /// Throws PenetrationError when `strict` and a pair interpenetrates.
  std::vector<ContactState> contacts_at(const VecX& theta, bool strict);

  /// Friction states frozen from contact results at the step's start.
  std::vector<FrictionState> friction_states(
      const std::vector<ContactState>& at_cur, const VecX& theta_cur);

  StepOutcome step(const VecX& theta_cur, const VecX& theta_prev,
                   const ControlSignal& u);

  /// Full objective with derivatives in theta_next (solver layout), with
  /// friction frames held fixed. Infeasible states return nullopt.
  std::optional<double> objective(const VecX& theta_next,
                                  const VecX& theta_cur,
                                  const VecX& theta_prev,
                                  const ControlSignal& u,
                                  const std::vector<FrictionState>& frictions,
                                  VecX* grad = nullptr, MatX* hess = nullptr,
                                  std::vector<ContactState>* contacts = nullptr);

  /// Objective derivative blocks over the layout [design | th+ | th0 | th-]
  /// with Hessian rows on the theta_next leg. Replays the stored contact
  /// and friction results of a converged step, so repeated calls are
  /// bit-identical; used by the adjoint and by gradient checks.
  struct FullDerivs {
    double value = 0.0;
    VecX grad;
    MatX hess;  // dof x (design + 3 dof)
  };
  FullDerivs full_derivatives(const VecX& theta_next, const VecX& theta_cur,
                              const VecX& theta_prev, const ControlSignal& u,
                              const std::vector<ContactState>& contacts_next,
                              const std::vector<FrictionState>& frictions);

  /// Smallest hull-hull distance over all different-link pairs.
  double min_pair_distance(const VecX& theta);

 private:
  std::vector<Mat3X> world_hulls(const KinematicsJet& jet) const;

  const Model* model_;
  RobotDesign design_;
  StepParams params_;
  std::vector<Bvh::LeafInfo> hulls_;
  Bvh bvh_;
  std::map<std::pair<int, int>, Vec4> plane_warm_;
  std::map<std::pair<int, int>, Vec3> velocity_warm_;
};

}  // namespace sdrs
