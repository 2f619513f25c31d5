#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmt/error.hpp"

namespace mmt {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Wraps an angle into [0, 2*pi).
inline double wrap_angle(double theta) {
  double t = std::fmod(theta, kTwoPi);
  if (t < 0.0) t += kTwoPi;
  if (t >= kTwoPi) t = 0.0;  // fmod + 2pi can round up to exactly 2pi
  return t;
}

/// Rigid transform x_world = rotation * x_local + translation.
struct RigidPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidPose identity() { return {}; }

  Vec3 apply(const Vec3& local) const { return rotation * local + translation; }

  bool is_finite() const { return rotation.allFinite() && translation.allFinite(); }

  /// Throws unless the rotation is orthonormal with det +1 (within tol).
  void validate(double tol = 1e-9) const {
    require(is_finite(), ErrorKind::input, "pose contains non-finite values");
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    require(ortho <= tol, ErrorKind::input,
            "pose rotation is not orthonormal (deviation " + std::to_string(ortho) + ")");
    require(std::abs(rotation.determinant() - 1.0) <= tol, ErrorKind::input,
            "pose rotation determinant is not +1");
  }

  /// Row-major [R|t], 12 numbers.
  static RigidPose from_row_major(std::span<const double> v) {
    require(v.size() == 12, ErrorKind::input, "pose needs 12 numbers (row-major R|t)");
    RigidPose p;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) p.rotation(i, j) = v[4 * i + j];
      p.translation(i) = v[4 * i + 3];
    }
    return p;
  }

  std::vector<double> to_row_major() const {
    std::vector<double> v(12);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) v[4 * i + j] = rotation(i, j);
      v[4 * i + 3] = translation(i);
    }
    return v;
  }
};

using ScanPose = RigidPose;
using ProbePose = RigidPose;

/// Longitudinal patient axis plus the angular reference (theta = 0) direction.
struct BodyAxis {
  Vec3 origin = Vec3::Zero();
  Vec3 z_direction = Vec3::UnitZ();
  Vec3 x_direction = Vec3::UnitX();

  Vec3 y_direction() const { return z_direction.cross(x_direction); }

  void validate() const {
    require(origin.allFinite() && z_direction.allFinite() && x_direction.allFinite(),
            ErrorKind::input, "body axis contains non-finite values");
    require(std::abs(z_direction.norm() - 1.0) <= 1e-12, ErrorKind::input,
            "body axis z_direction must be unit length");
    require(std::abs(x_direction.norm() - 1.0) <= 1e-12, ErrorKind::input,
            "body axis x_direction must be unit length");
    require(std::abs(x_direction.dot(z_direction)) <= 1e-12, ErrorKind::input,
            "body axis x_direction must be orthogonal to z_direction");
  }

  /// Applies a rigid transform to the frame.
  BodyAxis transformed(const RigidPose& pose) const {
    return {pose.apply(origin), pose.rotation * z_direction, pose.rotation * x_direction};
  }
};

struct CylindricalPoint {
  double r = 0.0;
  double theta = 0.0;  // [0, 2pi)
  double z = 0.0;
};

inline CylindricalPoint to_cylindrical(const Vec3& p, const BodyAxis& axis) {
  const Vec3 d = p - axis.origin;
  const double z = d.dot(axis.z_direction);
  const double x = d.dot(axis.x_direction);
  const double y = d.dot(axis.y_direction());
  const double r = std::hypot(x, y);
  if (r == 0.0) return {0.0, 0.0, z};
  return {r, wrap_angle(std::atan2(y, x)), z};
}

inline std::vector<CylindricalPoint> to_cylindrical(std::span<const Vec3> points, const BodyAxis& axis) {
  axis.validate();
  std::vector<CylindricalPoint> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(to_cylindrical(p, axis));
  return out;
}

inline Vec3 from_cylindrical(const CylindricalPoint& c, const BodyAxis& axis) {
  return axis.origin + c.z * axis.z_direction +
         c.r * (std::cos(c.theta) * axis.x_direction + std::sin(c.theta) * axis.y_direction());
}

/// Rotation by `angle` radians about a unit axis.
inline Mat3 rotation_about(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

}  // namespace mmt
