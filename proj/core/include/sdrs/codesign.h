#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sdrs/adjoint.h"

namespace sdrs {

// Control policies. All are open loop in time; state-feedback derivative
// hooks are wired but zero.

/// Fixed pose target: u^t = (theta_star, 0) for every t.
class ConstantTargetPolicy : public ControlPolicy {
 public:
  explicit ConstantTargetPolicy(VecX theta_star)
      : theta_star_(std::move(theta_star)) {}
  int param_count() const override {
    return static_cast<int>(theta_star_.size());
  }
  VecX params() const override { return theta_star_; }
  void set_params(const VecX& c) override { theta_star_ = c; }
  ControlSignal eval(const VecX& theta_cur, const VecX& theta_prev, int t,
                     MatX* du_dc, MatX* du_dcur,
                     MatX* du_dprev) const override;

 private:
  VecX theta_star_;
};

/// Per dof: a bias plus four harmonics of a learnable base frequency,
/// each with learnable magnitude and phase shift. The velocity target is
/// the analytic time derivative. Parameters per dof:
/// [bias, freq, mag x4, phase x4].
class SineSuperpositionPolicy : public ControlPolicy {
 public:
  static constexpr int kWaves = 4;
  static constexpr int kPerDof = 2 + 2 * kWaves;

  SineSuperpositionPolicy(int dof, double dt);
  int param_count() const override { return dof_ * kPerDof; }
  VecX params() const override { return c_; }
  void set_params(const VecX& c) override { c_ = c; }
  ControlSignal eval(const VecX& theta_cur, const VecX& theta_prev, int t,
                     MatX* du_dc, MatX* du_dcur,
                     MatX* du_dprev) const override;

 private:
  int dof_;
  double dt_;
  VecX c_;
};

/// Cubic polynomial position target per dof, four coefficients in the
/// physical time tau = t dt.
class CubicSplinePolicy : public ControlPolicy {
 public:
  CubicSplinePolicy(int dof, double dt);
  int param_count() const override { return 4 * dof_; }
  VecX params() const override { return c_; }
  void set_params(const VecX& c) override { c_ = c; }
  ControlSignal eval(const VecX& theta_cur, const VecX& theta_prev, int t,
                     MatX* du_dc, MatX* du_dcur,
                     MatX* du_dprev) const override;

 private:
  int dof_;
  double dt_;
  VecX c_;
};

// Terminal losses.

/// |theta^H - theta_star|^2 over an optional dof subset.
class JointTargetLoss : public TerminalLoss {
 public:
  explicit JointTargetLoss(VecX theta_star)
      : theta_star_(std::move(theta_star)) {}
  double eval(const Model& model, const RobotDesign& design,
              const VecX& theta, VecX* d_theta,
              VecX* d_design) const override;

 private:
  VecX theta_star_;
};

/// Mass-weighted center of mass of a link subset.
Vec3 center_of_mass(const Model& model, const RobotDesign& design,
                    const StepParams& params, const VecX& theta,
                    const std::vector<int>& links, MatX* d_theta = nullptr,
                    MatX* d_design = nullptr);

/// |COM(links) - target|^2.
class ComTargetLoss : public TerminalLoss {
 public:
  ComTargetLoss(StepParams params, std::vector<int> links, Vec3 target)
      : params_(std::move(params)), links_(std::move(links)),
        target_(target) {}
  double eval(const Model& model, const RobotDesign& design,
              const VecX& theta, VecX* d_theta,
              VecX* d_design) const override;

 private:
  StepParams params_;
  std::vector<int> links_;
  Vec3 target_;
};

/// |COM(links_a) - COM(links_b)|^2; the grasp-style penalty on relative
/// motion between an object and a gripper.
class RelativeComLoss : public TerminalLoss {
 public:
  RelativeComLoss(StepParams params, std::vector<int> links_a,
                  std::vector<int> links_b)
      : params_(std::move(params)), links_a_(std::move(links_a)),
        links_b_(std::move(links_b)) {}
  double eval(const Model& model, const RobotDesign& design,
              const VecX& theta, VecX* d_theta,
              VecX* d_design) const override;

 private:
  StepParams params_;
  std::vector<int> links_a_, links_b_;
};

/// World position of a specific hull vertex; |vertex - target|^2 reacher
/// loss.
class VertexTargetLoss : public TerminalLoss {
 public:
  VertexTargetLoss(int link, int hull, int m, Vec3 target)
      : link_(link), hull_(hull), m_(m), target_(target) {}
  double eval(const Model& model, const RobotDesign& design,
              const VecX& theta, VecX* d_theta,
              VecX* d_design) const override;

 private:
  int link_, hull_, m_;
  Vec3 target_;
};

/// Euclidean projection onto the probability simplex (sorted-threshold).
VecX project_to_simplex(const VecX& w);

/// Which design coordinates the optimizer may move. Attachment weight
/// blocks are always re-projected onto the simplex after an update, and
/// shared vertices stay shared structurally.
enum class DesignScope { kNone, kAttachments, kVertices, kAll };

/// Zero out masked coordinates of a design-space gradient.
void apply_design_scope(const Model& model, DesignScope scope, VecX* grad);

/// Project the weight blocks of a packed design vector onto their
/// simplices.
void project_design(const Model& model, VecX* d);

enum class OptimizerKind { kProjectedGradient, kAdam };

struct AdamState {
  VecX m, v;
  int step = 0;
};

struct UpdateOptions {
  double alpha_d = 1e-2;
  double alpha_c = 1e-1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

/// One trust-region update: optimizer step, norm clamp to the radius,
/// then design-space projection. Masked design coordinates do not move.
void project_update(const Model& model, DesignScope scope,
                    const UpdateOptions& opt, const VecX& grad_d,
                    const VecX& grad_c, VecX* d, VecX* c, AdamState* adam_d,
                    AdamState* adam_c);

struct CodesignOptions {
  int iterations = 100;
  int horizon = 50;
  UpdateOptions update;
  DesignScope scope = DesignScope::kAll;
  std::uint64_t seed = 0;
  int max_retries = 5;
};

struct CodesignIterate {
  double loss = 0.0;
  VecX design;
  VecX control;
};

/// Gradient-based co-design: rollout, adjoint gradient, projected update.
/// A failing rollout rejects the iteration, halves both trust radii, and
/// retries from the previous accepted iterate.
std::vector<CodesignIterate> codesign_optimize(Simulator& sim,
                                               ControlPolicy& policy,
                                               const TerminalLoss& loss,
                                               const VecX& theta0,
                                               const VecX& dtheta0,
                                               const CodesignOptions& opt);

}  // namespace sdrs
