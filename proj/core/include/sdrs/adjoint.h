#pragma once

#include <memory>
#include <vector>

#include "sdrs/dynamics.h"

namespace sdrs {

/// Differentiable control policy u^t = pi(theta^t, theta^{t-1}, t, c).
/// The signal is the stacked target vector [theta_target; dtheta_target].
class ControlPolicy {
 public:
  virtual ~ControlPolicy() = default;
  virtual int param_count() const = 0;
  virtual VecX params() const = 0;
  virtual void set_params(const VecX& c) = 0;
  /// Derivative outputs (2 dof rows each) are filled on demand:
  /// du_dc: x param_count, du_dcur / du_dprev: x dof.
  virtual ControlSignal eval(const VecX& theta_cur, const VecX& theta_prev,
                             int t, MatX* du_dc = nullptr,
                             MatX* du_dcur = nullptr,
                             MatX* du_dprev = nullptr) const = 0;
};

/// Differentiable terminal loss L(theta^H). COM-style losses also depend
/// on the design directly; that direct term is surfaced separately.
class TerminalLoss {
 public:
  virtual ~TerminalLoss() = default;
  virtual double eval(const Model& model, const RobotDesign& design,
                      const VecX& theta, VecX* d_theta = nullptr,
                      VecX* d_design = nullptr) const = 0;
};

struct StepRecord {
  VecX theta_next;
  ControlSignal u;
  std::vector<ContactState> contacts_next;
  std::vector<FrictionState> frictions;
  double objective = 0.0;
  int newton_iterations = 0;
  int active_pairs = 0;
  double min_distance = std::numeric_limits<double>::infinity();
};

struct Trajectory {
  VecX theta_init;       // theta^0
  VecX theta_init_prev;  // theta^{-1} = theta^0 - dt dtheta^0
  std::vector<StepRecord> steps;

  int horizon() const { return static_cast<int>(steps.size()); }
  const VecX& theta(int t) const {
    if (t <= -1) return theta_init_prev;
    if (t == 0) return theta_init;
    return steps[t - 1].theta_next;
  }
};

class StepFailure : public std::runtime_error {
 public:
  StepFailure(int step, StepStatus status)
      : std::runtime_error("step " + std::to_string(step) + " failed (" +
                           std::to_string(static_cast<int>(status)) + ")"),
        step(step), status(status) {}
  int step;
  StepStatus status;
};

class SensitivityFailure : public std::runtime_error {
 public:
  explicit SensitivityFailure(const std::string& what)
      : std::runtime_error(what + "; reduce dt to keep the step objective "
                                  "strictly convex") {}
};

/// Rolls the simulator forward for `horizon` steps under the policy.
/// Throws StepFailure on a non-converged step.
Trajectory rollout(Simulator& sim, const VecX& theta0, const VecX& dtheta0,
                   const ControlPolicy& policy, int horizon);

/// Sensitivities of one converged step via the implicit function theorem
/// on the unclamped objective Hessian (the eigenvalue clamp is a solver
/// device only and never enters here).
struct StepSensitivities {
  MatX j_prev;   // d theta_next / d theta_cur
  MatX j_prev2;  // d theta_next / d theta_prev
  MatX j_u;      // d theta_next / d [theta_target; dtheta_target]
  MatX j_d;      // d theta_next / d design
};

StepSensitivities step_sensitivities(Simulator& sim, const VecX& theta_next,
                                     const VecX& theta_cur,
                                     const VecX& theta_prev,
                                     const ControlSignal& u,
                                     const StepRecord& record);

struct TrajectoryGradient {
  double loss = 0.0;
  VecX d_design;
  VecX d_control;
};

/// Reverse sweep over the two-step recurrence, propagating the terminal
/// loss adjoint through the per-step sensitivities and the policy.
TrajectoryGradient trajectory_gradient(Simulator& sim,
                                       const Trajectory& traj,
                                       const TerminalLoss& loss,
                                       const ControlPolicy& policy);

}  // namespace sdrs
