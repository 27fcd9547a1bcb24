#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>

namespace sdrs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using VecX = Eigen::VectorXd;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using MatX = Eigen::MatrixXd;
using Mat3X = Eigen::Matrix3Xd;
using Mat32 = Eigen::Matrix<double, 3, 2>;

/// Raised on malformed scene files; carries the offending field name.
class SceneError : public std::runtime_error {
 public:
  SceneError(std::string field, const std::string& what)
      : std::runtime_error("scene field '" + field + "': " + what),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Raised when an initial or externally supplied state has interpenetrating
/// hulls. Barrier states must be penetration-free.
class PenetrationError : public std::runtime_error {
 public:
  PenetrationError(int link_a, int hull_a, int link_b, int hull_b)
      : std::runtime_error(
            "hulls penetrate: link " + std::to_string(link_a) + " hull " +
            std::to_string(hull_a) + " vs link " + std::to_string(link_b) +
            " hull " + std::to_string(hull_b)),
        link_a(link_a), hull_a(hull_a), link_b(link_b), hull_b(hull_b) {}
  int link_a, hull_a, link_b, hull_b;
};

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(),
       v.z(), 0, -v.x(),
      -v.y(), v.x(), 0;
  return m;
}

}  // namespace sdrs
