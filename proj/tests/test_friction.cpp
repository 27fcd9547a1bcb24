#include "sdrs/friction.h"

#include <gtest/gtest.h>

#include <random>

#include "contact_oracles.h"
#include "model_builders.h"
#include "test_util.h"

namespace sdrs {
namespace {

const BarrierParams kBp{0.1, 1e-6};
const double kMu = 0.4;
const double kDt = 0.01;

// Two free-floating boxes in active contact at theta_cur; theta_next adds
// a small relative motion. Exercises the full lagged-frame chain.
struct FrictionFixture {
  test::TestRobot robot;
  VecX theta_cur, theta_next;
  DiffLayout layout;  // [design | theta_next | theta_cur]

  explicit FrictionFixture(unsigned seed, double gap = 0.05,
                           double motion = 0.004) {
    Model& model = robot.model;
    Mat3X slots(3, 0);
    for (int i = 0; i < 2; ++i) {
      Link link;
      link.name = i == 0 ? "a" : "b";
      link.hull_slots.push_back(
          test::add_box_slots(slots, Vec3::Zero(), Vec3(0.5, 0.4, 0.45)));
      link.joint.kind = JointKind::kFree6;
      link.joint.parent = -1;
      model.links.push_back(link);
    }
    model.n_slots = static_cast<int>(slots.cols());
    model.finalize();
    robot.design.slots = slots;
    robot.design.weights.resize(0);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    theta_cur = VecX::Zero(model.dof_count());
    theta_cur[6] = 1.0 + gap;
    for (int i = 0; i < theta_cur.size(); ++i)
      theta_cur[i] += 0.01 * u(rng);
    theta_next = theta_cur;
    for (int i = 0; i < theta_next.size(); ++i)
      theta_next[i] += motion * u(rng);
    layout = DiffLayout{model.design_dim(), model.dof_count(), 2};
  }

  Mat3X world(const RobotDesign& d, const VecX& th, int link) const {
    KinematicsJet jet(robot.model, d, th,
                      DiffLayout{0, robot.model.dof_count(), 1}, -1, 0);
    return jet.hull_world(link, 0);
  }

  ContactResult contact_at(const RobotDesign& d, const VecX& th) const {
    return contact_solve(world(d, th, 0), world(d, th, 1), kBp);
  }

  // Full pipeline value: contact at theta_cur -> frame -> friction min.
  double value(const VecX& v) const {
    RobotDesign d;
    d.unpack(robot.model, v.head(layout.n_design));
    const VecX tn = v.segment(layout.state_offset(0), layout.n_dof);
    const VecX tc = v.segment(layout.state_offset(1), layout.n_dof);
    ContactResult res = contact_at(d, tc);
    FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
    FrictionResult fr =
        friction_solve(frame, world(d, tc, 0), world(d, tc, 1),
                       world(d, tn, 0), world(d, tn, 1));
    return fr.value;
  }

  VecX pack() const {
    VecX v(layout.size());
    v << robot.design.pack(), theta_next, theta_cur;
    return v;
  }

  FrictionDerivatives derivs(const VecX& v, bool with_mixed,
                             FrictionResult* result_out = nullptr) const {
    RobotDesign d;
    d.unpack(robot.model, v.head(layout.n_design));
    const VecX tn = v.segment(layout.state_offset(0), layout.n_dof);
    const VecX tc = v.segment(layout.state_offset(1), layout.n_dof);
    const Model& model = robot.model;

    ContactResult res = contact_at(d, tc);
    FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
    FrictionResult fr =
        friction_solve(frame, world(d, tc, 0), world(d, tc, 1),
                       world(d, tn, 0), world(d, tn, 1));
    if (result_out) *result_out = fr;

    KinematicsJet jet_next(model, d, tn, layout, 0,
                           with_mixed ? 2 : 1, layout.state_offset(0),
                           layout.n_dof);
    KinematicsJet jet_cur(model, d, tc, layout, 1, 1);
    std::vector<PointJet> ja_t, jb_t, ja_n, jb_n;
    for (int m = 0; m < 8; ++m) {
      const int sa = model.links[0].hull_slots[0][m];
      const int sb = model.links[1].hull_slots[0][m];
      ja_t.push_back(jet_cur.point(0, d.slots.col(sa), sa));
      jb_t.push_back(jet_cur.point(1, d.slots.col(sb), sb));
      ja_n.push_back(jet_next.point(0, d.slots.col(sa), sa));
      jb_n.push_back(jet_next.point(1, d.slots.col(sb), sb));
    }
    MatX plane_sens;
    if (res.active)
      plane_sens =
          contact_derivatives(ja_t, jb_t, res, kBp, false, true).plane_sens;
    return friction_derivatives(frame, fr, ja_t, jb_t, ja_n, jb_n,
                                plane_sens, layout, 0, with_mixed);
  }
};

TEST(FrictionFrame, InactivePairContributesNothing) {
  FrictionFixture fx(1, 0.5);  // gap beyond the support radius
  ContactResult res = fx.contact_at(fx.robot.design, fx.theta_cur);
  EXPECT_FALSE(res.active);
  FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
  EXPECT_FALSE(frame.active);
  FrictionResult fr = friction_solve(
      frame, fx.world(fx.robot.design, fx.theta_cur, 0),
      fx.world(fx.robot.design, fx.theta_cur, 1),
      fx.world(fx.robot.design, fx.theta_next, 0),
      fx.world(fx.robot.design, fx.theta_next, 1));
  EXPECT_EQ(fr.value, 0.0);
  EXPECT_EQ(fr.u.norm(), 0.0);
  EXPECT_EQ(fr.omega, 0.0);
}

TEST(FrictionFrame, BasisConventionAndOrthonormality) {
  Mat32 b = tangent_basis(Vec3::UnitZ());
  EXPECT_LE((b.col(0) - Vec3::UnitX()).norm(), 1e-15);
  EXPECT_LE((b.col(1) - Vec3::UnitY()).norm(), 1e-15);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 1);
  for (int i = 0; i < 50; ++i) {
    Vec3 n(g(rng), g(rng), g(rng));
    n.normalize();
    Mat32 bb = tangent_basis(n);
    EXPECT_LE((bb.transpose() * bb - Mat2::Identity()).norm(), 1e-10);
    EXPECT_LE((bb.transpose() * n).norm(), 1e-10);
  }
}

TEST(FrictionInnerEnergy, StaticContactClosedForm) {
  FrictionFixture fx(5, 0.05, 0.0);  // theta_next == theta_cur
  ContactResult res = fx.contact_at(fx.robot.design, fx.theta_cur);
  ASSERT_TRUE(res.active);
  FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
  const Mat3X wa = fx.world(fx.robot.design, fx.theta_cur, 0);
  const Mat3X wb = fx.world(fx.robot.design, fx.theta_cur, 1);
  const double v =
      friction_inner_energy(frame, wa, wb, wa, wb, Vec2::Zero(), 0.0);
  double expect = 0.0;
  const Vec3 n = res.plane.n();
  for (int m = 0; m < res.qa.size(); ++m)
    expect += kMu * kDt * smooth_norm((barrier_grad(res.qa[m], kBp.s) * n).eval(), kBp.eps) *
              std::sqrt(kBp.eps);
  for (int m = 0; m < res.qb.size(); ++m)
    expect += kMu * kDt * smooth_norm((barrier_grad(res.qb[m], kBp.s) * n).eval(), kBp.eps) *
              std::sqrt(kBp.eps);
  EXPECT_LE(test::rel_err(v, expect), 1e-12);
}

TEST(FrictionInnerEnergy, RigidTranslationCancellation) {
  // Both hulls translated by v dt with u = B^T v, omega = 0: same value as
  // the static case.
  FrictionFixture fx(7, 0.05, 0.0);
  ContactResult res = fx.contact_at(fx.robot.design, fx.theta_cur);
  ASSERT_TRUE(res.active);
  FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
  const Mat3X wa = fx.world(fx.robot.design, fx.theta_cur, 0);
  const Mat3X wb = fx.world(fx.robot.design, fx.theta_cur, 1);
  const Vec3 vel(0.3, -0.2, 0.15);
  const Mat3X wa2 = wa.colwise() + vel * kDt;
  const Mat3X wb2 = wb.colwise() + vel * kDt;
  const double v_static =
      friction_inner_energy(frame, wa, wb, wa, wb, Vec2::Zero(), 0.0);
  const Vec2 u = frame.basis.transpose() * vel;
  const double v_moving = friction_inner_energy(frame, wa, wb, wa2, wb2, u,
                                                0.0);
  EXPECT_LE(test::rel_err(v_moving, v_static), 1e-12);
}

TEST(FrictionInnerEnergy, GradHessMatchFiniteDifferences) {
  FrictionFixture fx(9);
  ContactResult res = fx.contact_at(fx.robot.design, fx.theta_cur);
  ASSERT_TRUE(res.active);
  FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
  const Mat3X wa = fx.world(fx.robot.design, fx.theta_cur, 0);
  const Mat3X wb = fx.world(fx.robot.design, fx.theta_cur, 1);
  const Mat3X wan = fx.world(fx.robot.design, fx.theta_next, 0);
  const Mat3X wbn = fx.world(fx.robot.design, fx.theta_next, 1);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0, 0.5);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 z(g(rng), g(rng), g(rng));
    Vec3 grad;
    Mat3 hess;
    friction_inner_energy(frame, wa, wb, wan, wbn, z.head<2>(), z[2], 0.0,
                          &grad, &hess);
    const double h = 1e-7;
    for (int i = 0; i < 3; ++i) {
      Vec3 zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      Vec3 gp, gm;
      const double vp = friction_inner_energy(frame, wa, wb, wan, wbn,
                                              zp.head<2>(), zp[2], 0.0, &gp);
      const double vm = friction_inner_energy(frame, wa, wb, wan, wbn,
                                              zm.head<2>(), zm[2], 0.0, &gm);
      EXPECT_LE(test::rel_err((vp - vm) / (2 * h), grad[i], 1e-10), 1e-6);
      EXPECT_LE(test::rel_err(((gp - gm) / (2 * h)).eval(), hess.col(i),
                              1e-10),
                1e-5);
    }
  }
}

TEST(FrictionSolve, SingleSlidingVertexClosedForm) {
  // One active vertex: u* equals the tangential velocity exactly, omega is
  // pinned to zero, and the value is mu dt A_eps(f) sqrt(eps).
  Mat3X a(3, 1), b(3, 4);
  a.col(0) = Vec3(0, 0, 0.05);
  b.col(0) = Vec3(-2, -2, -1);
  b.col(1) = Vec3(2, -2, -1);
  b.col(2) = Vec3(0, 2, -1);
  b.col(3) = Vec3(0, 0, -0.002);
  ContactResult res = contact_solve(a, b, kBp);
  ASSERT_TRUE(res.active);
  FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
  const Vec3 slide(0.25, -0.4, 0.0);
  Mat3X a_next = a;
  a_next.col(0) += slide * kDt;
  FrictionResult fr = friction_solve(frame, a, b, a_next, b);
  EXPECT_TRUE(fr.omega_reduced);
  EXPECT_EQ(fr.omega, 0.0);
  // Expected: only a's vertex is active (b's far corners are outside the
  // support); if b's near vertex is active too, skip the closed form.
  int active_b = 0;
  for (int m = 0; m < res.qb.size(); ++m)
    if (res.qb[m] < kBp.s) ++active_b;
  if (active_b == 0) {
    const Vec2 expect_u = frame.basis.transpose() * slide;
    EXPECT_LE((fr.u - expect_u).norm(), 1e-9);
    const double a_eps =
        smooth_norm((barrier_grad(res.qa[0], kBp.s) * res.plane.n()).eval(),
                    kBp.eps);
    EXPECT_LE(
        test::rel_err(fr.value, kMu * kDt * a_eps * std::sqrt(kBp.eps)),
        1e-9);
  }
}

TEST(FrictionSolve, MatchesGridPolishOracle) {
  FrictionFixture fx(13);
  ContactResult res = fx.contact_at(fx.robot.design, fx.theta_cur);
  ASSERT_TRUE(res.active);
  FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
  const Mat3X wa = fx.world(fx.robot.design, fx.theta_cur, 0);
  const Mat3X wb = fx.world(fx.robot.design, fx.theta_cur, 1);
  const Mat3X wan = fx.world(fx.robot.design, fx.theta_next, 0);
  const Mat3X wbn = fx.world(fx.robot.design, fx.theta_next, 1);
  FrictionResult fr = friction_solve(frame, wa, wb, wan, wbn);
  ASSERT_EQ(fr.status, InnerStatus::kConverged);
  auto energy = [&](const Vec3& z) {
    return friction_inner_energy(frame, wa, wb, wan, wbn, z.head<2>(), z[2]);
  };
  const double oracle = test::friction_grid_polish(energy);
  EXPECT_LE(test::rel_err(fr.value, oracle), 1e-6);
}

TEST(FrictionSolve, MdpConsistency) {
  FrictionFixture fx(17);
  ContactResult res = fx.contact_at(fx.robot.design, fx.theta_cur);
  ASSERT_TRUE(res.active);
  FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
  const Mat3X wa = fx.world(fx.robot.design, fx.theta_cur, 0);
  const Mat3X wb = fx.world(fx.robot.design, fx.theta_cur, 1);
  const Mat3X wan = fx.world(fx.robot.design, fx.theta_next, 0);
  const Mat3X wbn = fx.world(fx.robot.design, fx.theta_next, 1);
  FrictionResult fr = friction_solve(frame, wa, wb, wan, wbn);
  std::mt19937_64 rng(19);
  std::normal_distribution<double> g(0, 1);
  for (int i = 0; i < 100; ++i) {
    const Vec2 u(g(rng), g(rng));
    const double w = g(rng);
    EXPECT_LE(fr.value,
              friction_inner_energy(frame, wa, wb, wan, wbn, u, w) + 1e-12);
  }
}

TEST(FrictionSolve, AlphaShiftInvariance) {
  FrictionFixture fx(23);
  ContactResult res = fx.contact_at(fx.robot.design, fx.theta_cur);
  ASSERT_TRUE(res.active);
  FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
  const Mat3X wa = fx.world(fx.robot.design, fx.theta_cur, 0);
  const Mat3X wb = fx.world(fx.robot.design, fx.theta_cur, 1);
  const Mat3X wan = fx.world(fx.robot.design, fx.theta_next, 0);
  const Mat3X wbn = fx.world(fx.robot.design, fx.theta_next, 1);
  FrictionResult base = friction_solve(frame, wa, wb, wan, wbn);
  for (double alpha : {1.0, 10.0}) {
    FrictionSolveOptions opt;
    opt.alpha_shift = alpha;
    FrictionResult shifted =
        friction_solve(frame, wa, wb, wan, wbn, nullptr, opt);
    EXPECT_LE(std::abs(shifted.value - base.value), 1e-9)
        << "alpha " << alpha;
  }
}

TEST(FrictionDerivatives, InactiveFrameGivesZeros) {
  FrictionFixture fx(27, 0.5);
  FrictionDerivatives fd = fx.derivs(fx.pack(), true);
  EXPECT_EQ(fd.grad.norm(), 0.0);
  EXPECT_EQ(fd.mixed.norm(), 0.0);
}

TEST(FrictionDerivatives, GradientMatchesFiniteDifferences) {
  for (unsigned seed : {29u, 31u, 37u}) {
    FrictionFixture fx(seed);
    FrictionDerivatives fd = fx.derivs(fx.pack(), false);
    auto f = [&](const VecX& v) { return fx.value(v); };
    VecX fdg = test::fd_gradient(f, fx.pack(), 1e-7);
    EXPECT_LE(test::rel_err(fdg, fd.grad), 1e-4) << "seed " << seed;
  }
}

TEST(FrictionDerivatives, MixedSecondDerivativeMatchesFiniteDifferences) {
  FrictionFixture fx(41);
  FrictionDerivatives fd = fx.derivs(fx.pack(), true);
  // FD of the analytic gradient along theta_next directions gives the
  // mixed rows.
  const double h = 1e-6;
  const int tb = fx.layout.state_offset(0);
  MatX fd_mixed(fx.layout.n_dof, fx.layout.size());
  for (int i = 0; i < fx.layout.n_dof; ++i) {
    VecX vp = fx.pack(), vm = fx.pack();
    vp[tb + i] += h;
    vm[tb + i] -= h;
    fd_mixed.row(i) =
        ((fx.derivs(vp, false).grad - fx.derivs(vm, false).grad) / (2 * h))
            .transpose();
  }
  EXPECT_LE(test::rel_err(fd_mixed, fd.mixed), 1e-3);
  // The (theta_next, theta_next) block of the mixed matrix is symmetric.
  MatX block = fd.mixed.middleCols(tb, fx.layout.n_dof);
  EXPECT_LE((block - block.transpose()).norm(),
            1e-10 * std::max(1.0, block.norm()));
}

TEST(FrictionDerivatives, MomentumPreservation) {
  int checked = 0;
  for (unsigned seed = 50; seed < 120 && checked < 30; ++seed) {
    FrictionFixture fx(seed);
    ContactResult res = fx.contact_at(fx.robot.design, fx.theta_cur);
    if (!res.active) continue;
    FrictionFrame frame = friction_frame(res, kMu, kDt, kBp);
    const Mat3X wa = fx.world(fx.robot.design, fx.theta_cur, 0);
    const Mat3X wb = fx.world(fx.robot.design, fx.theta_cur, 1);
    const Mat3X wan = fx.world(fx.robot.design, fx.theta_next, 0);
    const Mat3X wbn = fx.world(fx.robot.design, fx.theta_next, 1);
    FrictionResult fr = friction_solve(frame, wa, wb, wan, wbn);
    if (fr.omega_reduced) continue;  // torque balance needs the omega leg
    ++checked;
    Mat3X fa, fb;
    friction_vertex_forces(frame, fr, wa, wb, wan, wbn, &fa, &fb);
    const double scale = std::max(
        {1.0, fa.colwise().norm().maxCoeff(),
         fb.colwise().norm().maxCoeff()});
    EXPECT_LE((fa.rowwise().sum() + fb.rowwise().sum()).norm(),
              1e-8 * scale);
    Vec3 torque = Vec3::Zero();
    for (int m = 0; m < wa.cols(); ++m) torque += wa.col(m).cross(fa.col(m));
    for (int m = 0; m < wb.cols(); ++m) torque += wb.col(m).cross(fb.col(m));
    EXPECT_LE(std::abs(frame.plane.head<3>().normalized().dot(torque)),
              1e-8 * scale)
        << "seed " << seed;
  }
  EXPECT_GE(checked, 20);
}

}  // namespace
}  // namespace sdrs
