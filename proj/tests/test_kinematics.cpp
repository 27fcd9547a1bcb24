#include "sdrs/kinematics.h"

#include <gtest/gtest.h>

#include <random>

#include "model_builders.h"
#include "test_util.h"

namespace sdrs {
namespace {

using test::TestRobot;

TEST(ExpMap, MatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 30; ++trial) {
    Vec3 w(u(rng), u(rng), u(rng));
    if (trial == 0) w.setZero();
    if (trial == 1) w = Vec3(1e-6, -2e-6, 3e-7);  // series branch
    RotationJet jet = expmap_jet(w, true);
    EXPECT_LE((jet.R.transpose() * jet.R - Mat3::Identity()).norm(), 1e-11);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i) {
      Vec3 wp = w, wm = w;
      wp[i] += h;
      wm[i] -= h;
      Mat3 fd = (expmap_jet(wp, false).R - expmap_jet(wm, false).R) / (2 * h);
      EXPECT_LE((fd - jet.dR[i]).norm() / std::max(1.0, jet.dR[i].norm()),
                1e-8)
          << "dR[" << i << "] trial " << trial;
      for (int j = 0; j < 3; ++j) {
        Mat3 fd2 =
            (expmap_jet(wp, true).dR[j] - expmap_jet(wm, true).dR[j]) /
            (2 * h);
        EXPECT_LE((fd2 - jet.d2R[j][i]).norm() / std::max(1.0, 1e-6), 2e-7)
            << "d2R[" << j << "][" << i << "] trial " << trial;
      }
    }
  }
}

TEST(ForwardKinematics, IdentityChain) {
  Model model;
  Mat3X slots(3, 0);
  for (int i = 0; i < 3; ++i) {
    Link link;
    link.hull_slots.push_back(
        test::add_box_slots(slots, Vec3::Zero(), Vec3(0.5, 0.5, 0.5)));
    link.joint.kind = i == 0 ? JointKind::kFixed : JointKind::kRevolute;
    link.joint.parent = i - 1;
    link.joint.axis = Vec3::UnitZ();
    link.name = "l" + std::to_string(i);
    model.links.push_back(link);
  }
  model.n_slots = static_cast<int>(slots.cols());
  model.finalize();
  RobotDesign design;
  design.slots = slots;
  design.weights.resize(0);

  VecX theta = VecX::Zero(model.dof_count());
  auto tf = forward_transforms(model, design, theta);
  for (const Mat4& t : tf)
    EXPECT_LE((t - Mat4::Identity()).norm(), 1e-14);
}

TEST(ForwardKinematics, SingleRevoluteQuarterTurn) {
  Model model;
  Mat3X slots(3, 0);
  Link link;
  link.hull_slots.push_back(
      test::add_box_slots(slots, Vec3::Zero(), Vec3(0.5, 0.5, 0.5)));
  link.joint.kind = JointKind::kRevolute;
  link.joint.parent = -1;
  link.joint.axis = Vec3::UnitZ();
  model.links.push_back(link);
  model.n_slots = static_cast<int>(slots.cols());
  model.finalize();
  RobotDesign design{slots, VecX()};

  VecX theta(1);
  theta << M_PI / 2.0;
  KinematicsJet jet(model, design, theta, DiffLayout{0, 1, 1}, -1, 0);
  Vec3 p = (jet.link_transform(0) * Vec4(1, 0, 0, 1)).head<3>();
  EXPECT_LE((p - Vec3(0, 1, 0)).norm(), 1e-12);
}

TEST(ForwardKinematics, TwoLinkChainMatchesExplicitProduct) {
  std::mt19937_64 rng(11);
  TestRobot robot = test::random_chain(rng, 2, true, JointKind::kRevolute);
  VecX theta = test::random_theta(rng, robot.model);
  auto tf = forward_transforms(robot.model, robot.design, theta);

  // Hand-composed product of four matrices for link 1:
  // T1 = A0 * B0 * A1 * B1.
  const Joint& j0 = robot.model.links[0].joint;
  const Joint& j1 = robot.model.links[1].joint;
  auto rot4 = [](const Mat3& r, const Vec3& t) {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = t;
    return m;
  };
  Mat4 a0 = rot4(j0.design_rotation,
                 robot.design.attachment_point(robot.model, 0));
  Mat3 kz = skew(j0.axis);
  Mat4 b0 = rot4(Mat3::Identity() + std::sin(theta[0]) * kz +
                     (1 - std::cos(theta[0])) * kz * kz,
                 Vec3::Zero());
  Mat4 a1 = rot4(j1.design_rotation,
                 robot.design.attachment_point(robot.model, 1));
  Mat3 k1 = skew(j1.axis);
  Mat4 b1 = rot4(Mat3::Identity() + std::sin(theta[1]) * k1 +
                     (1 - std::cos(theta[1])) * k1 * k1,
                 Vec3::Zero());
  EXPECT_LE((tf[1] - a0 * b0 * a1 * b1).norm(), 1e-12);
}

TEST(ForwardKinematics, WorldVertexOracles) {
  std::mt19937_64 rng(13);
  TestRobot robot = test::random_chain(rng, 3, true);
  VecX theta = test::random_theta(rng, robot.model);
  auto tf = forward_transforms(robot.model, robot.design, theta);
  for (int m = 0; m < 8; ++m) {
    const int slot = robot.model.links[2].hull_slots[0][m];
    Vec3 expect = tf[2].topLeftCorner<3, 3>() * robot.design.slots.col(slot) +
                  tf[2].topRightCorner<3, 1>();
    Vec3 got = world_vertex(robot.model, robot.design, theta, 2, 0, m);
    EXPECT_LE((expect - got).norm(), 1e-13);
  }
}

TEST(ForwardKinematics, OrthonormalityAfterComposition) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    TestRobot robot = test::random_chain(rng, 6, true);
    VecX theta = test::random_theta(rng, robot.model, 1.2);
    auto tf = forward_transforms(robot.model, robot.design, theta);
    for (const Mat4& t : tf)
      EXPECT_LE(rotation_orthonormality_error(t), 1e-10);
  }
}

TEST(ForwardKinematics, RigidMotionConsistency) {
  std::mt19937_64 rng(19);
  TestRobot robot = test::random_chain(rng, 4, true, JointKind::kFree6);
  VecX theta = test::random_theta(rng, robot.model);
  theta.head<6>().setZero();
  auto tf0 = forward_transforms(robot.model, robot.design, theta);

  Vec3 t(0.3, -0.7, 0.2), w(0.4, 0.2, -0.5);
  VecX theta_g = theta;
  theta_g.head<3>() = t;
  theta_g.segment<3>(3) = w;
  Mat4 g = Mat4::Identity();
  g.topLeftCorner<3, 3>() = expmap_jet(w, false).R;
  g.topRightCorner<3, 1>() = t;
  auto tfg = forward_transforms(robot.model, robot.design, theta_g);
  for (int link = 0; link < robot.model.link_count(); ++link) {
    for (int m = 0; m < 8; ++m) {
      const int slot = robot.model.links[link].hull_slots[0][m];
      Vec4 local(robot.design.slots(0, slot), robot.design.slots(1, slot),
                 robot.design.slots(2, slot), 1.0);
      Vec3 moved = (tfg[link] * local).head<3>();
      Vec3 mapped = (g * tf0[link] * local).head<3>();
      EXPECT_LE((moved - mapped).norm(), 1e-10);
    }
  }
}

TEST(KinematicsJet, TreeSparsity) {
  std::mt19937_64 rng(23);
  TestRobot robot = test::random_chain(rng, 4, false);
  VecX theta = test::random_theta(rng, robot.model);
  DiffLayout layout{0, robot.model.dof_count(), 1};
  KinematicsJet jet(robot.model, robot.design, theta, layout, 0, 1);
  // Link 1's vertices must not depend on dofs of links 2, 3.
  PointJet p = jet.point(1, Vec3(0.1, 0.2, 0.3));
  const int after = robot.model.links[2].joint.dof_offset;
  EXPECT_GT(p.J.leftCols(after).norm(), 0.0);
  EXPECT_EQ(p.J.rightCols(layout.size() - after).norm(), 0.0);
}

TEST(KinematicsJet, RevoluteClosedFormDerivatives) {
  Model model;
  Mat3X slots(3, 0);
  Link link;
  link.hull_slots.push_back(
      test::add_box_slots(slots, Vec3::Zero(), Vec3(0.5, 0.5, 0.5)));
  link.joint.kind = JointKind::kRevolute;
  link.joint.parent = -1;
  link.joint.axis = Vec3::UnitZ();
  model.links.push_back(link);
  model.n_slots = static_cast<int>(slots.cols());
  model.finalize();
  RobotDesign design{slots, VecX()};
  VecX theta = VecX::Zero(1);
  KinematicsJet jet(model, design, theta, DiffLayout{0, 1, 1}, 0, 2);
  PointJet p = jet.point(0, Vec3(1, 0, 0));
  EXPECT_LE((p.J.col(0) - Vec3(0, 1, 0)).norm(), 1e-14);
  Vec3 second(p.H[0](0, 0), p.H[1](0, 0), p.H[2](0, 0));
  EXPECT_LE((second - Vec3(-1, 0, 0)).norm(), 1e-14);
}

// Jacobians and Hessians against central finite differences over chains of
// 2-6 mixed joints, perturbing both theta and the design vector.
TEST(KinematicsJet, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(29);
  const double h = 1e-6;
  for (int sample = 0; sample < 50; ++sample) {
    const int n_links = 2 + static_cast<int>(rng() % 5);
    TestRobot robot = test::random_chain(rng, n_links, true);
    const Model& model = robot.model;
    VecX theta = test::random_theta(rng, model);
    VecX d0 = robot.design.pack();

    DiffLayout layout{model.design_dim(), model.dof_count(), 1};
    KinematicsJet jet(model, robot.design, theta, layout, 0, 2);

    const int link = n_links - 1;
    const int hull_m = static_cast<int>(rng() % 8);
    const int slot = model.links[link].hull_slots[0][hull_m];
    PointJet p = jet.point(link, robot.design.slots.col(slot), slot);

    auto value = [&](const VecX& v) -> VecX {
      RobotDesign d;
      d.unpack(model, v.head(model.design_dim()));
      VecX th = v.tail(model.dof_count());
      KinematicsJet j2(model, d, th, DiffLayout{0, model.dof_count(), 1}, -1,
                       0);
      return (j2.link_transform(link) *
              Vec4(d.slots(0, slot), d.slots(1, slot), d.slots(2, slot), 1.0))
          .head<3>();
    };
    VecX v0(layout.size());
    v0 << d0, theta;
    MatX fdJ = test::fd_jacobian(value, v0, h);
    EXPECT_LE(test::rel_err(fdJ, p.J), 1e-5) << "sample " << sample;

    // Hessian rows against finite differences of the analytic Jacobian.
    auto jac_row = [&](const VecX& v, int comp) -> VecX {
      RobotDesign d;
      d.unpack(model, v.head(model.design_dim()));
      VecX th = v.tail(model.dof_count());
      KinematicsJet j2(model, d, th, layout, 0, 1);
      PointJet q = j2.point(link, d.slots.col(slot), slot);
      return q.J.row(comp).transpose();
    };
    for (int comp = 0; comp < 3; ++comp) {
      auto f = [&](const VecX& v) { return jac_row(v, comp); };
      MatX fdH = test::fd_jacobian(f, v0, h);
      EXPECT_LE(test::rel_err(fdH, p.H[comp]), 1e-5)
          << "sample " << sample << " comp " << comp;
    }
  }
}

// The Hessian row window must agree with the corresponding rows of the
// full Hessian.
TEST(KinematicsJet, HessianRowWindow) {
  std::mt19937_64 rng(31);
  TestRobot robot = test::random_chain(rng, 3, true);
  const Model& model = robot.model;
  VecX theta = test::random_theta(rng, model);
  DiffLayout layout{model.design_dim(), model.dof_count(), 2};
  KinematicsJet full(model, robot.design, theta, layout, 0, 2);
  const int begin = layout.state_offset(0);
  KinematicsJet window(model, robot.design, theta, layout, 0, 2, begin,
                       layout.n_dof);
  const int slot = model.links[2].hull_slots[0][3];
  PointJet pf = full.point(2, robot.design.slots.col(slot), slot);
  PointJet pw = window.point(2, robot.design.slots.col(slot), slot);
  for (int c = 0; c < 3; ++c)
    EXPECT_LE(
        (pf.H[c].middleRows(begin, layout.n_dof) - pw.H[c]).norm(), 1e-14);
}

}  // namespace
}  // namespace sdrs
