#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>
#include <string>

namespace op2 {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using Pose = Eigen::Isometry3d;

inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A vector or matrix argument has the wrong size.
class DimensionError : public Error {
 public:
  using Error::Error;
};

inline void require_size(Eigen::Index actual, Eigen::Index expected,
                         const char* what) {
  if (actual != expected) {
    throw DimensionError(std::string(what) + ": expected size " +
                         std::to_string(expected) + ", got " +
                         std::to_string(actual));
  }
}

/// Wraps an angle to [-pi, pi).
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

inline double sign_or_zero(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace op2
