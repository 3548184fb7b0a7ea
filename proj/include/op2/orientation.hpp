#pragma once

#include "op2/common.hpp"

namespace op2 {

/// Fused angles of a body-to-world rotation.
struct FusedAngles {
  double yaw = 0.0;    // (-pi, pi]
  double pitch = 0.0;  // [-pi/2, pi/2]
  double roll = 0.0;   // [-pi/2, pi/2]
  int hemisphere = 1;  // sign of body z . world z; +1 when level or above
};

class DomainError : public Error {
 public:
  using Error::Error;
};

FusedAngles quat_to_fused(const Quat& q);

/// Throws DomainError when sin^2(pitch) + sin^2(roll) > 1.
Quat fused_to_quat(const FusedAngles& f);

/// Angle between body z and world z.
double tilt_angle(const Quat& q);

struct ImuSample {
  Vec3 gyro = Vec3::Zero();   // rad/s, body frame
  Vec3 accel = Vec3::Zero();  // m/s^2, body frame (specific force)
  double dt = 0.01;           // s, in (0, 0.1]
};

struct FilterGains {
  double kp = 2.0;
  double ki = 0.05;
};

struct FilterState {
  Quat q = Quat::Identity();       // body-to-world estimate
  Vec3 gyro_bias = Vec3::Zero();   // rad/s
  FilterGains gains;
};

/// One step of the passive nonlinear complementary filter. The accelerometer
/// correction is skipped while |accel| < 1 m/s^2.
FilterState filter_update(const FilterState& state, const ImuSample& sample);

}  // namespace op2
