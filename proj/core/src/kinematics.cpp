#include "sdrs/kinematics.h"

#include <cmath>

namespace sdrs {

int joint_dof_count(JointKind kind) {
  switch (kind) {
    case JointKind::kFixed: return 0;
    case JointKind::kRevolute: return 1;
    case JointKind::kPrismatic: return 1;
    case JointKind::kBall: return 3;
    case JointKind::kFree6: return 6;
  }
  return 0;
}

const char* joint_kind_name(JointKind kind) {
  switch (kind) {
    case JointKind::kFixed: return "fixed";
    case JointKind::kRevolute: return "revolute";
    case JointKind::kPrismatic: return "prismatic";
    case JointKind::kBall: return "ball";
    case JointKind::kFree6: return "free6";
  }
  return "?";
}

void Model::finalize() {
  n_dof_ = 0;
  n_weights_ = 0;
  static_link_.assign(links.size(), false);
  for (int i = 0; i < link_count(); ++i) {
    Link& link = links[i];
    Joint& j = link.joint;
    if (j.parent >= i)
      throw SceneError("joints[" + std::to_string(i) + "].parent",
                       "must precede the link (tree order)");
    if (j.parent < -1 || j.parent >= link_count())
      throw SceneError("joints[" + std::to_string(i) + "].parent",
                       "out of range");
    if ((j.kind == JointKind::kRevolute || j.kind == JointKind::kPrismatic) &&
        j.axis.norm() < 1e-12)
      throw SceneError("joints[" + std::to_string(i) + "].axis",
                       "must be nonzero");
    j.axis.normalize();
    j.dof_offset = n_dof_;
    n_dof_ += joint_dof_count(j.kind);
    if (j.attachment_hull >= 0) {
      if (j.parent < 0)
        throw SceneError("joints[" + std::to_string(i) + "].attachment",
                         "root link cannot attach to a parent hull");
      const auto& parent_hulls = links[j.parent].hull_slots;
      if (j.attachment_hull >= static_cast<int>(parent_hulls.size()))
        throw SceneError("joints[" + std::to_string(i) + "].attachment.hull",
                         "hull index out of range on parent link");
      j.weight_offset = n_weights_;
      n_weights_ +=
          static_cast<int>(parent_hulls[j.attachment_hull].size());
    } else {
      j.weight_offset = -1;
    }
    for (const auto& hull : link.hull_slots) {
      if (hull.empty())
        throw SceneError("links[" + std::to_string(i) + "].hulls",
                         "hull must have at least one vertex");
      for (int slot : hull)
        if (slot < 0 || slot >= n_slots)
          throw SceneError("links[" + std::to_string(i) + "].hulls",
                           "vertex slot index out of range");
    }
    const bool own_dofs = joint_dof_count(j.kind) > 0;
    static_link_[i] = !own_dofs && (j.parent < 0 || static_link_[j.parent]);
  }
}

int Model::link_vertex_count(int i) const {
  int n = 0;
  for (const auto& hull : links[i].hull_slots)
    n += static_cast<int>(hull.size());
  return n;
}

bool Model::link_is_static(int i) const { return static_link_[i]; }

VecX RobotDesign::pack() const {
  VecX d(3 * slots.cols() + weights.size());
  for (int i = 0; i < slots.cols(); ++i) d.segment<3>(3 * i) = slots.col(i);
  d.tail(weights.size()) = weights;
  return d;
}

void RobotDesign::unpack(const Model& model, const VecX& d) {
  slots.resize(3, model.n_slots);
  for (int i = 0; i < model.n_slots; ++i) slots.col(i) = d.segment<3>(3 * i);
  weights = d.tail(model.weight_dim());
}

Vec3 RobotDesign::attachment_point(const Model& model, int link) const {
  const Joint& j = model.links[link].joint;
  if (j.attachment_hull < 0) return j.fixed_offset;
  const auto& slot_ids =
      model.links[j.parent].hull_slots[j.attachment_hull];
  Vec3 t = Vec3::Zero();
  for (size_t r = 0; r < slot_ids.size(); ++r)
    t += weights[j.weight_offset + static_cast<int>(r)] *
         slots.col(slot_ids[r]);
  return t;
}

Eigen::VectorBlock<const VecX> RobotDesign::weight_block(const Model& model,
                                                         int link) const {
  const Joint& j = model.links[link].joint;
  const int n = j.attachment_hull < 0
                    ? 0
                    : static_cast<int>(model.links[j.parent]
                                           .hull_slots[j.attachment_hull]
                                           .size());
  return weights.segment(j.weight_offset < 0 ? 0 : j.weight_offset, n);
}

namespace {

// Rodrigues coefficients a(u) = sin(phi)/phi, b(u) = (1 - cos(phi))/phi^2
// as functions of u = phi^2, with first and second derivatives. Series
// below the switch point; the closed forms cancel catastrophically there.
struct RodriguesCoeffs {
  double a, b, da, db, dda, ddb;
};

RodriguesCoeffs rodrigues_coeffs(double u) {
  RodriguesCoeffs c;
  if (u < 0.25) {
    const double u2 = u * u, u3 = u2 * u, u4 = u3 * u;
    c.a = 1.0 - u / 6 + u2 / 120 - u3 / 5040 + u4 / 362880;
    c.da = -1.0 / 6 + u / 60 - u2 / 1680 + u3 / 90720 - u4 / 7983360;
    c.dda = 1.0 / 60 - u / 840 + u2 / 30240 - u3 / 1995840 + u4 / 207567360;
    c.b = 0.5 - u / 24 + u2 / 720 - u3 / 40320 + u4 / 3628800;
    c.db = -1.0 / 24 + u / 360 - u2 / 13440 + u3 / 907200 - u4 / 95800320;
    c.ddb = 1.0 / 360 - u / 6720 + u2 / 302400 - u3 / 23950080 +
            u4 / 2905943040.0;
  } else {
    const double phi = std::sqrt(u);
    const double s = std::sin(phi), co = std::cos(phi);
    const double phi3 = phi * u, phi4 = u * u, phi5 = phi4 * phi,
                 phi6 = phi4 * u;
    c.a = s / phi;
    c.da = (phi * co - s) / (2.0 * phi3);
    c.dda = (3.0 * s - 3.0 * phi * co - u * s) / (4.0 * phi5);
    c.b = (1.0 - co) / u;
    c.db = (phi * s / 2.0 + co - 1.0) / phi4;
    c.ddb = (8.0 - 8.0 * co - 5.0 * phi * s + u * co) / (4.0 * phi6);
  }
  return c;
}

const std::array<Mat3, 3>& skew_basis() {
  static const std::array<Mat3, 3> basis = {skew(Vec3::UnitX()),
                                            skew(Vec3::UnitY()),
                                            skew(Vec3::UnitZ())};
  return basis;
}

Mat4 make_transform(const Mat3& r, const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

Mat4 rotation_only(const Mat3& r) { return make_transform(r, Vec3::Zero()); }

}  // namespace

RotationJet expmap_jet(const Vec3& w, bool second_order) {
  RotationJet jet;
  const double u = w.squaredNorm();
  const RodriguesCoeffs c = rodrigues_coeffs(u);
  const Mat3 K = skew(w);
  const Mat3 K2 = K * K;
  const auto& E = skew_basis();
  jet.R = Mat3::Identity() + c.a * K + c.b * K2;
  std::array<Mat3, 3> KE;
  for (int i = 0; i < 3; ++i) KE[i] = E[i] * K + K * E[i];
  for (int i = 0; i < 3; ++i)
    jet.dR[i] = 2.0 * w[i] * (c.da * K + c.db * K2) + c.a * E[i] + c.b * KE[i];
  if (second_order) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        Mat3 m = 4.0 * w[i] * w[j] * (c.dda * K + c.ddb * K2);
        if (i == j) m += 2.0 * (c.da * K + c.db * K2);
        m += 2.0 * w[i] * (c.da * E[j] + c.db * KE[j]);
        m += 2.0 * w[j] * (c.da * E[i] + c.db * KE[i]);
        m += c.b * (E[i] * E[j] + E[j] * E[i]);
        jet.d2R[i][j] = m;
      }
  }
  return jet;
}

double rotation_orthonormality_error(const Mat4& t) {
  const Mat3 r = t.topLeftCorner<3, 3>();
  return (r.transpose() * r - Mat3::Identity()).norm();
}

std::vector<Mat4> forward_transforms(const Model& model,
                                     const RobotDesign& design,
                                     const VecX& theta) {
  KinematicsJet jet(model, design, theta, DiffLayout{0, model.dof_count(), 1},
                    -1, 0);
  std::vector<Mat4> out(model.link_count());
  for (int i = 0; i < model.link_count(); ++i) out[i] = jet.link_transform(i);
  return out;
}

Vec3 world_vertex(const Model& model, const RobotDesign& design,
                  const VecX& theta, int link, int hull, int m) {
  const auto tf = forward_transforms(model, design, theta);
  const int slot = model.links[link].hull_slots[hull][m];
  return tf[link].topLeftCorner<3, 3>() * design.slots.col(slot) +
         tf[link].topRightCorner<3, 1>();
}

KinematicsJet::KinematicsJet(const Model& model, const RobotDesign& design,
                             const VecX& theta, const DiffLayout& layout,
                             int state_index, int order, int hess_row_begin,
                             int hess_row_count)
    : model_(model),
      design_(design),
      theta_(theta),
      layout_(layout),
      state_index_(state_index),
      order_(order),
      hess_row_begin_(hess_row_begin),
      hess_row_count_(hess_row_count < 0 ? layout.size() : hess_row_count) {
  if (theta_.size() != model.dof_count())
    throw std::invalid_argument("theta dimension mismatch");
  link_tf_.resize(model.link_count());
  chains_.resize(model.link_count());
  for (int i = 0; i < model.link_count(); ++i) build_chain(i);
}

void KinematicsJet::local_jet(
    int link, Mat4* L, std::vector<std::pair<int, Mat4>>* dL,
    std::vector<std::tuple<int, int, Mat4>>* d2L) const {
  const Joint& joint = model_.links[link].joint;
  const int nd = joint_dof_count(joint.kind);
  const Mat4 A = make_transform(joint.design_rotation,
                                design_.attachment_point(model_, link));

  // Joint motion B(theta) with derivatives per own dof.
  Mat4 B = Mat4::Identity();
  std::vector<Mat4> dB(nd, Mat4::Zero());
  std::vector<std::vector<Mat4>> d2B;
  const bool second = order_ >= 2 && d2L != nullptr;
  if (second) d2B.assign(nd, std::vector<Mat4>(nd, Mat4::Zero()));
  const auto dofs = theta_.segment(joint.dof_offset, nd);

  switch (joint.kind) {
    case JointKind::kFixed:
      break;
    case JointKind::kRevolute: {
      const Mat3 K = skew(joint.axis);
      const Mat3 K2 = K * K;
      const double th = dofs[0];
      B = rotation_only(Mat3::Identity() + std::sin(th) * K +
                        (1.0 - std::cos(th)) * K2);
      dB[0].setZero();
      dB[0].topLeftCorner<3, 3>() = std::cos(th) * K + std::sin(th) * K2;
      if (second) {
        d2B[0][0].setZero();
        d2B[0][0].topLeftCorner<3, 3>() =
            -std::sin(th) * K + std::cos(th) * K2;
      }
      break;
    }
    case JointKind::kPrismatic: {
      B = make_transform(Mat3::Identity(), joint.axis * dofs[0]);
      dB[0] = Mat4::Zero();
      dB[0].topRightCorner<3, 1>() = joint.axis;
      break;
    }
    case JointKind::kBall: {
      const RotationJet rj = expmap_jet(dofs, second);
      B = rotation_only(rj.R);
      for (int i = 0; i < 3; ++i) {
        dB[i].setZero();
        dB[i].topLeftCorner<3, 3>() = rj.dR[i];
      }
      if (second)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) {
            d2B[i][j].setZero();
            d2B[i][j].topLeftCorner<3, 3>() = rj.d2R[i][j];
          }
      break;
    }
    case JointKind::kFree6: {
      const RotationJet rj = expmap_jet(dofs.tail(3), second);
      B = make_transform(rj.R, dofs.head(3));
      for (int i = 0; i < 3; ++i) {
        dB[i].setZero();
        dB[i].topRightCorner<3, 1>() = Vec3::Unit(i);
      }
      for (int i = 0; i < 3; ++i) {
        dB[3 + i].setZero();
        dB[3 + i].topLeftCorner<3, 3>() = rj.dR[i];
      }
      if (second)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) {
            d2B[3 + i][3 + j].setZero();
            d2B[3 + i][3 + j].topLeftCorner<3, 3>() = rj.d2R[i][j];
          }
      break;
    }
  }

  *L = A * B;
  if (order_ < 1 || dL == nullptr) return;

  const bool theta_cols = state_index_ >= 0;
  const int theta_base =
      theta_cols ? layout_.state_offset(state_index_) + joint.dof_offset : 0;
  if (theta_cols)
    for (int r = 0; r < nd; ++r) dL->emplace_back(theta_base + r, A * dB[r]);

  // Design columns: attachment weights and the parent-hull slot coordinates
  // they multiply. The translation t = sum_r w_r * slot_r is bilinear.
  std::vector<std::pair<int, Mat4>> dA_atoms;
  if (layout_.with_design() && joint.attachment_hull >= 0) {
    const auto& slot_ids =
        model_.links[joint.parent].hull_slots[joint.attachment_hull];
    const int wbase = layout_.design_offset() + 3 * model_.n_slots +
                      joint.weight_offset;
    for (size_t r = 0; r < slot_ids.size(); ++r) {
      const int ri = static_cast<int>(r);
      Mat4 dA = Mat4::Zero();
      dA.topRightCorner<3, 1>() = design_.slots.col(slot_ids[r]);
      dA_atoms.emplace_back(wbase + ri, dA);
      const double w = design_.weights[joint.weight_offset + ri];
      for (int c = 0; c < 3; ++c) {
        Mat4 dAc = Mat4::Zero();
        dAc(c, 3) = w;
        dA_atoms.emplace_back(layout_.design_offset() + 3 * slot_ids[r] + c,
                              dAc);
      }
    }
    for (const auto& [col, dA] : dA_atoms) dL->emplace_back(col, dA * B);
  }

  if (!second) return;

  if (theta_cols)
    for (int r = 0; r < nd; ++r)
      for (int q = r; q < nd; ++q)
        d2L->emplace_back(theta_base + r, theta_base + q, A * d2B[r][q]);

  if (layout_.with_design() && joint.attachment_hull >= 0) {
    const auto& slot_ids =
        model_.links[joint.parent].hull_slots[joint.attachment_hull];
    const int wbase = layout_.design_offset() + 3 * model_.n_slots +
                      joint.weight_offset;
    // (weight, matching slot coordinate) bilinear pairs.
    for (size_t r = 0; r < slot_ids.size(); ++r)
      for (int c = 0; c < 3; ++c) {
        Mat4 d2A = Mat4::Zero();
        d2A(c, 3) = 1.0;
        d2L->emplace_back(wbase + static_cast<int>(r),
                          layout_.design_offset() + 3 * slot_ids[r] + c,
                          d2A * B);
      }
    // (design, own theta) cross terms: dA * dB.
    if (theta_cols)
      for (const auto& [col, dA] : dA_atoms)
        for (int r = 0; r < nd; ++r)
          d2L->emplace_back(col, theta_base + r, dA * dB[r]);
  }
}

void KinematicsJet::build_chain(int link) {
  LinkChain& chain = chains_[link];
  // Path root..link.
  std::vector<int> rev;
  for (int k = link; k >= 0; k = model_.links[k].joint.parent)
    rev.push_back(k);
  chain.path.assign(rev.rbegin(), rev.rend());
  const int depth = static_cast<int>(chain.path.size());

  chain.locals.resize(depth);
  std::vector<std::vector<std::pair<int, Mat4>>> dLs(depth);
  std::vector<std::vector<std::tuple<int, int, Mat4>>> d2Ls(depth);
  for (int k = 0; k < depth; ++k)
    local_jet(chain.path[k], &chain.locals[k],
              order_ >= 1 ? &dLs[k] : nullptr,
              order_ >= 2 ? &d2Ls[k] : nullptr);

  chain.prefix.resize(depth);
  chain.suffix.resize(depth);
  Mat4 acc = Mat4::Identity();
  for (int k = 0; k < depth; ++k) {
    chain.prefix[k] = acc;
    acc = acc * chain.locals[k];
  }
  link_tf_[link] = acc;
  acc = Mat4::Identity();
  for (int k = depth - 1; k >= 0; --k) {
    chain.suffix[k] = acc;
    acc = chain.locals[k] * acc;
  }

  if (order_ < 1) return;
  for (int k = 0; k < depth; ++k) {
    for (const auto& [col, dl] : dLs[k]) {
      Atom a;
      a.col = col;
      a.level = k;
      a.dL = dl;
      a.left = chain.prefix[k] * dl;
      a.dT = a.left * chain.suffix[k];
      chain.atoms.push_back(a);
    }
    if (order_ >= 2)
      for (const auto& [ca, cb, d2l] : d2Ls[k]) {
        Atom2 a2;
        a2.col_a = ca;
        a2.col_b = cb;
        a2.level = k;
        a2.pre_d2l = chain.prefix[k] * d2l * chain.suffix[k];
        chain.atoms2.push_back(a2);
      }
  }
}

PointJet KinematicsJet::point(int link, const Vec3& local, int slot) const {
  const LinkChain& chain = chains_[link];
  const Mat4& T = link_tf_[link];
  Vec4 xt(local.x(), local.y(), local.z(), 1.0);

  PointJet jet;
  jet.x = (T * xt).head<3>();
  jet.hess_row_begin = hess_row_begin_;
  if (order_ < 1) return jet;

  const int nv = layout_.size();
  jet.J.setZero(3, nv);
  const bool track_slot = slot >= 0 && layout_.with_design();
  const int slot_col = track_slot ? layout_.design_offset() + 3 * slot : -1;

  for (const Atom& a : chain.atoms) {
    const Vec4 v = a.dT * xt;
    jet.J.col(a.col) += v.head<3>();
  }
  if (track_slot)
    for (int c = 0; c < 3; ++c)
      jet.J.col(slot_col + c) += T.block<3, 1>(0, c);

  if (order_ < 2) return jet;

  const int nr = hess_row_count_;
  for (int c = 0; c < 3; ++c) jet.H[c].setZero(nr, nv);
  const auto in_rows = [&](int col) {
    return col >= hess_row_begin_ && col < hess_row_begin_ + nr;
  };
  const auto add = [&](int ra, int cb, const Vec3& v) {
    if (!in_rows(ra)) return;
    for (int c = 0; c < 3; ++c) jet.H[c](ra - hess_row_begin_, cb) += v[c];
  };

  const int depth = static_cast<int>(chain.path.size());
  // Per-level suffix-transformed point.
  std::vector<Vec4> s(depth);
  for (int k = 0; k < depth; ++k) s[k] = chain.suffix[k] * xt;

  // Group atoms by level once.
  std::vector<std::vector<const Atom*>> by_level(depth);
  for (const Atom& a : chain.atoms) by_level[a.level].push_back(&a);

  // Cross-level pairs: prefix_k dL_a M_{k,l} dL_b s_l via the running
  // vector m_k = M_{k,l} dL_b s_l, updated m_{k-1} = L_k m_k.
  for (int l = 0; l < depth; ++l) {
    for (const Atom* b : by_level[l]) {
      Vec4 m = b->dL * s[l];
      for (int k = l - 1; k >= 0; --k) {
        for (const Atom* a : by_level[k]) {
          const Vec3 v = (a->left * m).head<3>();
          add(a->col, b->col, v);
          add(b->col, a->col, v);
        }
        m = chain.locals[k] * m;
      }
    }
  }
  // Same-level second derivatives.
  for (const Atom2& a2 : chain.atoms2) {
    const Vec3 v = (a2.pre_d2l * xt).head<3>();
    add(a2.col_a, a2.col_b, v);
    if (a2.col_a != a2.col_b) add(a2.col_b, a2.col_a, v);
  }
  // Mixed terms with the point's own slot coordinates.
  if (track_slot)
    for (const Atom& a : chain.atoms)
      for (int c = 0; c < 3; ++c) {
        const Vec3 v = a.dT.block<3, 1>(0, c);
        add(a.col, slot_col + c, v);
        add(slot_col + c, a.col, v);
      }
  return jet;
}

Mat3X KinematicsJet::hull_world(int link, int hull) const {
  const auto& slot_ids = model_.links[link].hull_slots[hull];
  const Mat4& T = link_tf_[link];
  Mat3X out(3, static_cast<Eigen::Index>(slot_ids.size()));
  for (size_t m = 0; m < slot_ids.size(); ++m)
    out.col(static_cast<Eigen::Index>(m)) =
        T.topLeftCorner<3, 3>() * design_.slots.col(slot_ids[m]) +
        T.topRightCorner<3, 1>();
  return out;
}

}  // namespace sdrs
