#include "sdrs/geometry.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace sdrs {

Aabb Aabb::of(const Mat3X& pts) {
  Aabb b;
  b.min = pts.rowwise().minCoeff();
  b.max = pts.rowwise().maxCoeff();
  return b;
}

void Aabb::expand(const Aabb& o) {
  min = min.cwiseMin(o.min);
  max = max.cwiseMax(o.max);
}

Aabb Aabb::inflated(double r) const {
  Aabb b;
  b.min = min.array() - r;
  b.max = max.array() + r;
  return b;
}

bool Aabb::overlaps(const Aabb& o) const {
  return (min.array() <= o.max.array()).all() &&
         (o.min.array() <= max.array()).all();
}

bool Aabb::contains(const Aabb& o) const {
  return (min.array() <= o.min.array()).all() &&
         (o.max.array() <= max.array()).all();
}

double Aabb::longest_axis_length(int* axis) const {
  Vec3 ext = max - min;
  int a;
  double len = ext.maxCoeff(&a);
  if (axis) *axis = a;
  return len;
}

namespace {

constexpr double kGapTol = 1e-10;       // support-gap termination
constexpr double kTouchTol = 1e-12;     // below this, hulls treated as touching
constexpr int kMaxGjkIters = 256;

int support_index(const Mat3X& pts, const Vec3& dir) {
  int best = 0;
  double best_dot = pts.col(0).dot(dir);
  for (int i = 1; i < pts.cols(); ++i) {
    double d = pts.col(i).dot(dir);
    if (d > best_dot) {
      best_dot = d;
      best = i;
    }
  }
  return best;
}

struct SimplexVertex {
  Vec3 p;  // a - b in Minkowski-difference space
  Vec3 a;
  Vec3 b;
};

// Closest point of the simplex spanned by pts to the origin, by
// enumerating all faces. For each subset, barycentric coordinates come
// from the affine projection system; only subsets with nonnegative
// coordinates describe points inside the face.
struct FaceProjection {
  double sq_dist = std::numeric_limits<double>::infinity();
  std::vector<int> members;
  VecX lambda;
};

FaceProjection closest_on_simplex(const std::vector<SimplexVertex>& verts) {
  const int n = static_cast<int>(verts.size());
  FaceProjection best;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) members.push_back(i);
    const int k = static_cast<int>(members.size());

    VecX lambda(k);
    if (k == 1) {
      lambda[0] = 1.0;
    } else {
      // Minimize |P lambda|^2 subject to sum(lambda) = 1 via the bordered
      // Gram system. Rank-deficient subsets (duplicate/affinely dependent
      // points) are skipped; their faces are covered by smaller subsets.
      MatX sys(k + 1, k + 1);
      sys.setZero();
      for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c)
          sys(r, c) = verts[members[r]].p.dot(verts[members[c]].p);
      sys.block(k, 0, 1, k).setOnes();
      sys.block(0, k, k, 1).setOnes();
      VecX rhs = VecX::Zero(k + 1);
      rhs[k] = 1.0;
      Eigen::FullPivLU<MatX> lu(sys);
      if (!lu.isInvertible()) continue;
      VecX sol = lu.solve(rhs);
      lambda = sol.head(k);
    }
    if ((lambda.array() < -1e-12).any()) continue;

    Vec3 v = Vec3::Zero();
    for (int r = 0; r < k; ++r) v += lambda[r] * verts[members[r]].p;
    double sq = v.squaredNorm();
    if (sq < best.sq_dist) {
      best.sq_dist = sq;
      best.members = members;
      best.lambda = lambda;
    }
  }
  return best;
}

}  // namespace

GjkResult gjk_distance(const Mat3X& a, const Mat3X& b) {
  GjkResult res;

  // Initial direction: centroid difference, or x if coincident.
  Vec3 dir = a.rowwise().mean() - b.rowwise().mean();
  if (dir.squaredNorm() < 1e-30) dir = Vec3::UnitX();

  std::vector<SimplexVertex> simplex;
  auto add_support = [&](const Vec3& d) {
    SimplexVertex sv;
    sv.a = a.col(support_index(a, -d));
    sv.b = b.col(support_index(b, d));
    sv.p = sv.a - sv.b;
    simplex.push_back(sv);
  };
  add_support(dir);

  FaceProjection proj;
  for (int iter = 0; iter < kMaxGjkIters; ++iter) {
    proj = closest_on_simplex(simplex);

    // Reduce the simplex to the supporting face.
    std::vector<SimplexVertex> reduced;
    for (size_t r = 0; r < proj.members.size(); ++r)
      reduced.push_back(simplex[proj.members[r]]);
    simplex = std::move(reduced);
    for (int r = 0; r < static_cast<int>(simplex.size()); ++r)
      proj.members[r] = r;

    double dist = std::sqrt(proj.sq_dist);
    if (dist < kTouchTol) {
      res.dist = 0.0;
      res.witnesses_reliable = false;
      break;
    }

    Vec3 v = Vec3::Zero();
    for (size_t r = 0; r < proj.members.size(); ++r)
      v += proj.lambda[r] * simplex[proj.members[r]].p;

    // New support of the Minkowski difference toward the origin; stop when
    // it cannot improve the current distance.
    Vec3 d = -v;
    SimplexVertex sv;
    sv.a = a.col(support_index(a, d));
    sv.b = b.col(support_index(b, -d));
    sv.p = sv.a - sv.b;

    double gap = (proj.sq_dist - v.dot(sv.p)) / dist;
    if (gap <= kGapTol) break;

    // Guard against cycling on degenerate geometry: if the support point
    // is already in the simplex, no progress is possible.
    bool dup = false;
    for (const auto& s : simplex)
      if ((s.p - sv.p).squaredNorm() < 1e-28) dup = true;
    if (dup) break;
    if (simplex.size() == 4) break;  // full simplex containing progress stall
    simplex.push_back(sv);
  }

  if (res.witnesses_reliable) {
    res.dist = std::sqrt(proj.sq_dist);
    res.witness_a.setZero();
    res.witness_b.setZero();
    for (size_t r = 0; r < proj.members.size(); ++r) {
      res.witness_a += proj.lambda[r] * simplex[proj.members[r]].a;
      res.witness_b += proj.lambda[r] * simplex[proj.members[r]].b;
    }
    if (res.dist < kTouchTol) res.witnesses_reliable = false;
  }
  return res;
}

Bvh Bvh::build(const std::vector<Mat3X>& world_hulls,
               const std::vector<LeafInfo>& info) {
  Bvh bvh;
  bvh.leaf_info_ = info;
  const int n = static_cast<int>(world_hulls.size());
  if (n == 0) return bvh;

  std::vector<Aabb> boxes(n);
  std::vector<Vec3> centroids(n);
  for (int i = 0; i < n; ++i) {
    boxes[i] = Aabb::of(world_hulls[i]);
    centroids[i] = 0.5 * (boxes[i].min + boxes[i].max);
  }
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  bvh.nodes_.reserve(2 * n);
  bvh.root_ = bvh.build_recurse(ids, 0, n, boxes, centroids);
  return bvh;
}

int Bvh::build_recurse(std::vector<int>& ids, int begin, int end,
                       const std::vector<Aabb>& boxes,
                       const std::vector<Vec3>& centroids) {
  Node node;
  for (int i = begin; i < end; ++i) node.box.expand(boxes[ids[i]]);
  if (end - begin == 1) {
    node.leaf = ids[begin];
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }
  Aabb cbox;
  for (int i = begin; i < end; ++i) {
    cbox.min = cbox.min.cwiseMin(centroids[ids[i]]);
    cbox.max = cbox.max.cwiseMax(centroids[ids[i]]);
  }
  int axis = 0;
  cbox.longest_axis_length(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(ids.begin() + begin, ids.begin() + mid, ids.begin() + end,
                   [&](int l, int r) {
                     return centroids[l][axis] < centroids[r][axis];
                   });
  int left = build_recurse(ids, begin, mid, boxes, centroids);
  int right = build_recurse(ids, mid, end, boxes, centroids);
  node.left = left;
  node.right = right;
  nodes_.push_back(node);
  return static_cast<int>(nodes_.size()) - 1;
}

void Bvh::refit(const std::vector<Mat3X>& world_hulls) {
  std::vector<Aabb> boxes(world_hulls.size());
  for (size_t i = 0; i < world_hulls.size(); ++i)
    boxes[i] = Aabb::of(world_hulls[i]);
  if (root_ >= 0) refit_recurse(root_, boxes);
}

void Bvh::refit_recurse(int node, const std::vector<Aabb>& boxes) {
  Node& n = nodes_[node];
  if (n.leaf >= 0) {
    n.box = boxes[n.leaf];
    return;
  }
  refit_recurse(n.left, boxes);
  refit_recurse(n.right, boxes);
  n.box = nodes_[n.left].box;
  n.box.expand(nodes_[n.right].box);
}

std::vector<std::pair<int, int>> Bvh::overlapping_pairs(double inflate) const {
  std::vector<std::pair<int, int>> out;
  if (root_ < 0) return out;
  pair_recurse(root_, root_, inflate, out);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void Bvh::pair_recurse(int na, int nb, double inflate,
                       std::vector<std::pair<int, int>>& out) const {
  const Node& a = nodes_[na];
  const Node& b = nodes_[nb];
  if (!a.box.inflated(inflate).overlaps(b.box.inflated(inflate))) return;
  if (a.leaf >= 0 && b.leaf >= 0) {
    if (a.leaf == b.leaf) return;
    if (leaf_info_[a.leaf].link == leaf_info_[b.leaf].link) return;
    out.emplace_back(std::min(a.leaf, b.leaf), std::max(a.leaf, b.leaf));
    return;
  }
  // Descend the larger node.
  if (a.leaf >= 0) {
    pair_recurse(na, b.left, inflate, out);
    pair_recurse(na, b.right, inflate, out);
  } else if (b.leaf >= 0) {
    pair_recurse(a.left, nb, inflate, out);
    pair_recurse(a.right, nb, inflate, out);
  } else if (na == nb) {
    pair_recurse(a.left, a.left, inflate, out);
    pair_recurse(a.left, a.right, inflate, out);
    pair_recurse(a.right, a.right, inflate, out);
  } else {
    pair_recurse(a.left, b.left, inflate, out);
    pair_recurse(a.left, b.right, inflate, out);
    pair_recurse(a.right, b.left, inflate, out);
    pair_recurse(a.right, b.right, inflate, out);
  }
}

Mat3X random_hull(std::mt19937_64& rng, int vertex_count, const Vec3& center,
                  double radius) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat3X pts(3, vertex_count);
  for (int i = 0; i < vertex_count; ++i) {
    Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    double n = v.norm();
    if (n < 1e-12) v = Vec3::UnitX(), n = 1.0;
    pts.col(i) = center + radius * v / n;
  }
  return pts;
}

}  // namespace sdrs
