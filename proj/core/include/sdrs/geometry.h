#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "sdrs/types.h"

namespace sdrs {

/// Convex polyhedron in V-representation: the hull of a finite vertex set.
/// Vertices are stored in the owning link's local frame.
struct ConvexHull {
  Mat3X vertices;  // 3 x M, M >= 1
  int link_index = -1;
  int hull_index = -1;
};

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  static Aabb of(const Mat3X& pts);
  void expand(const Aabb& o);
  Aabb inflated(double r) const;
  bool overlaps(const Aabb& o) const;
  bool contains(const Aabb& o) const;
  double longest_axis_length(int* axis) const;
};

struct GjkResult {
  double dist = 0.0;
  Vec3 witness_a = Vec3::Zero();
  Vec3 witness_b = Vec3::Zero();
  // Witnesses are meaningless below the near-touching threshold; they are
  // only consumed for separating-plane initialization, which needs them
  // strictly separated.
  bool witnesses_reliable = true;
};

/// Exact distance between the convex hulls of two world-space vertex sets,
/// with the closest pair of points. dist == 0 iff the hulls intersect.
/// Handles degenerate inputs (points, segments, planar sets).
GjkResult gjk_distance(const Mat3X& a, const Mat3X& b);

/// Binary AABB tree over world-space hulls. Immutable topology after build;
/// refit() re-derives boxes from moved vertices.
class Bvh {
 public:
  struct LeafInfo {
    int link = -1;
    int hull = -1;
  };

  Bvh() = default;

  /// Builds by median split along the longest axis of the centroid bounds.
  static Bvh build(const std::vector<Mat3X>& world_hulls,
                   const std::vector<LeafInfo>& info);

  /// Recomputes all boxes from moved hulls; topology unchanged.
  void refit(const std::vector<Mat3X>& world_hulls);

  /// All hull index pairs whose boxes, each bulged by `inflate`, overlap.
  /// Pairs within the same link are excluded. Output is sorted and each
  /// unordered pair appears once as (i, j) with i < j in hull-id order.
  std::vector<std::pair<int, int>> overlapping_pairs(double inflate) const;

  int leaf_count() const { return static_cast<int>(leaf_info_.size()); }
  const LeafInfo& leaf(int i) const { return leaf_info_[i]; }

 private:
  struct Node {
    Aabb box;
    int left = -1;   // internal child, or -1 for leaf
    int right = -1;
    int leaf = -1;   // hull id for leaves
  };
  std::vector<Node> nodes_;
  std::vector<LeafInfo> leaf_info_;
  int root_ = -1;

  int build_recurse(std::vector<int>& ids, int begin, int end,
                    const std::vector<Aabb>& boxes,
                    const std::vector<Vec3>& centroids);
  void refit_recurse(int node, const std::vector<Aabb>& boxes);
  void pair_recurse(int na, int nb, double inflate,
                    std::vector<std::pair<int, int>>& out) const;
};

/// Uniformly scattered vertices on a sphere of the given radius; used by
/// randomized tests and the contact-cost benchmark.
Mat3X random_hull(std::mt19937_64& rng, int vertex_count,
                  const Vec3& center, double radius);

}  // namespace sdrs
