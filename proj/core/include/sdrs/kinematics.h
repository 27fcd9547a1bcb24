#pragma once

#include <array>
#include <string>
#include <vector>

#include "sdrs/types.h"

namespace sdrs {

enum class JointKind { kFixed, kRevolute, kPrismatic, kBall, kFree6 };

int joint_dof_count(JointKind kind);
const char* joint_kind_name(JointKind kind);

/// Joint connecting a link to its parent. The local transform is
/// A(d) * B(theta): A carries the fixed design rotation and the
/// design-dependent attachment translation, B the joint motion.
struct Joint {
  JointKind kind = JointKind::kFixed;
  int parent = -1;                          // parent link index, -1 at root
  Vec3 axis = Vec3::UnitZ();                // revolute / prismatic
  Mat3 design_rotation = Mat3::Identity();  // fixed per scene
  Vec3 fixed_offset = Vec3::Zero();         // used when attachment_hull < 0
  int attachment_hull = -1;  // hull index on the parent link
  int dof_offset = 0;
  int weight_offset = -1;  // block offset into the design weight region
  bool actuated = true;
};

struct Link {
  std::string name;
  std::vector<std::vector<int>> hull_slots;  // per hull: vertex slot ids
  double rho = -1.0;  // per-vertex lumped mass; < 0 selects 1 / vertex count
  Joint joint;
};

/// Topology: links, joints, hull-to-slot maps, dof and design layouts.
/// Shared vertices are expressed structurally by referencing one slot id
/// from several hulls, so connectivity constraints hold by construction.
class Model {
 public:
  std::vector<Link> links;
  int n_slots = 0;

  /// Assigns dof and weight offsets, checks tree order and index ranges.
  void finalize();

  int dof_count() const { return n_dof_; }
  int weight_dim() const { return n_weights_; }
  int design_dim() const { return 3 * n_slots + n_weights_; }
  int link_count() const { return static_cast<int>(links.size()); }

  int link_vertex_count(int i) const;
  /// True when no dof anywhere on the path from the root moves this link.
  bool link_is_static(int i) const;

 private:
  int n_dof_ = 0;
  int n_weights_ = 0;
  std::vector<bool> static_link_;
};

/// The design variables d: shared vertex slot coordinates plus attachment
/// barycentric weights, packed as [slot coords (3S) | weight blocks].
struct RobotDesign {
  Mat3X slots;   // 3 x S
  VecX weights;  // concatenated simplex blocks, Model::weight_dim()

  VecX pack() const;
  void unpack(const Model& model, const VecX& d);

  /// Attachment translation of link i in the parent frame.
  Vec3 attachment_point(const Model& model, int link) const;
  /// Weight block view for link i (empty if no attachment).
  Eigen::VectorBlock<const VecX> weight_block(const Model& model,
                                              int link) const;
};

std::vector<Mat4> forward_transforms(const Model& model,
                                     const RobotDesign& design,
                                     const VecX& theta);

Vec3 world_vertex(const Model& model, const RobotDesign& design,
                  const VecX& theta, int link, int hull, int m);

double rotation_orthonormality_error(const Mat4& t);

/// Rotation exp([w]x) with analytic first and second derivatives.
struct RotationJet {
  Mat3 R;
  std::array<Mat3, 3> dR;
  std::array<std::array<Mat3, 3>, 3> d2R;
};
RotationJet expmap_jet(const Vec3& w, bool second_order);

/// Column layout of the differentiation variable vector
/// V = [design (optional) | theta_state_0 | theta_state_1 | ...].
struct DiffLayout {
  int n_design = 0;  // 0 when design is not differentiated
  int n_dof = 0;
  int n_states = 1;

  int size() const { return n_design + n_states * n_dof; }
  int design_offset() const { return 0; }
  int state_offset(int s) const { return n_design + s * n_dof; }
  bool with_design() const { return n_design > 0; }
};

/// World point of a link-local point, with derivatives over a DiffLayout.
/// Hessians are stored per world coordinate, restricted to a row window
/// of the layout (mixed blocks need only one differentiation leg).
struct PointJet {
  Vec3 x = Vec3::Zero();
  Mat3X J;                // 3 x layout.size()
  std::array<MatX, 3> H;  // hess_rows x layout.size() per coordinate
  int hess_row_begin = 0;
};

/// Derivative data for every link transform of one configuration.
///
/// order 0: transforms only. order 1: adds dT/dv per active variable.
/// order 2: adds the per-point second derivatives. state_index chooses the
/// theta block of the layout this configuration's dofs map into; pass -1
/// for a frozen configuration that is not differentiated.
class KinematicsJet {
 public:
  KinematicsJet(const Model& model, const RobotDesign& design,
                const VecX& theta, const DiffLayout& layout, int state_index,
                int order, int hess_row_begin = 0, int hess_row_count = -1);

  const Mat4& link_transform(int link) const { return link_tf_[link]; }
  const DiffLayout& layout() const { return layout_; }
  int hess_rows() const { return hess_row_count_; }
  int hess_row_begin() const { return hess_row_begin_; }

  /// slot >= 0 marks the local point as design slot `slot`, adding the
  /// direct dependence of the point coordinates on the design vector.
  PointJet point(int link, const Vec3& local, int slot = -1) const;

  /// World positions of every vertex of hull (link, hull).
  Mat3X hull_world(int link, int hull) const;

 private:
  struct Atom {
    int col;      // layout column
    int level;    // index into the link's path
    Mat4 left;    // prefix * dL
    Mat4 dT;      // prefix * dL * suffix
    Mat4 dL;
  };
  struct Atom2 {
    int col_a, col_b;
    int level;
    Mat4 pre_d2l;  // prefix * d2L
  };
  struct LinkChain {
    std::vector<int> path;       // link ids, root..link
    std::vector<Mat4> locals;    // L_k per level
    std::vector<Mat4> prefix;    // product of L before level k
    std::vector<Mat4> suffix;    // product of L after level k
    std::vector<Atom> atoms;
    std::vector<Atom2> atoms2;
  };

  void build_chain(int link);
  void local_jet(int link, Mat4* L, std::vector<std::pair<int, Mat4>>* dL,
                 std::vector<std::tuple<int, int, Mat4>>* d2L) const;

  const Model& model_;
  const RobotDesign& design_;
  VecX theta_;
  DiffLayout layout_;
  int state_index_;
  int order_;
  int hess_row_begin_;
  int hess_row_count_;
  std::vector<Mat4> link_tf_;
  std::vector<LinkChain> chains_;
};

}  // namespace sdrs
