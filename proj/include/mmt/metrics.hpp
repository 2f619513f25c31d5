#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "mmt/geometry.hpp"

namespace mmt {

/// Forces with a norm below this are excluded from angle statistics.
inline constexpr double kAngleForceFloor = 1e-6;

/// | |f_est| - |f_meas| | in Newtons.
inline double magnitude_error(const Vec3& estimated, const Vec3& measured) {
  return std::abs(estimated.norm() - measured.norm());
}

/// Angle between the two force vectors in degrees, or nullopt when either
/// norm is below kAngleForceFloor.
inline std::optional<double> angle_error(const Vec3& estimated, const Vec3& measured) {
  const double a = estimated.norm();
  const double b = measured.norm();
  if (a < kAngleForceFloor || b < kAngleForceFloor) return std::nullopt;
  const double c = std::clamp(estimated.dot(measured) / (a * b), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

}  // namespace mmt
