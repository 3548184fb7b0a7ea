#include "op2/orientation.hpp"

#include <algorithm>

namespace op2 {

namespace {

// Wraps to (-pi, pi].
double wrap_half_open_above(double a) {
  const double w = wrap_angle(a);
  return w == -kPi ? kPi : w;
}

}  // namespace

FusedAngles quat_to_fused(const Quat& q_in) {
  const Quat q = q_in.normalized();
  const Mat3 r = q.toRotationMatrix();
  // Third row of R: world z expressed in body coordinates.
  const double zx = r(2, 0), zy = r(2, 1), zz = r(2, 2);
  FusedAngles f;
  f.yaw = wrap_half_open_above(2.0 * std::atan2(q.z(), q.w()));
  f.pitch = std::atan2(-zx, std::hypot(zy, zz));
  f.roll = std::atan2(zy, std::hypot(zx, zz));
  f.hemisphere = zz >= 0.0 ? 1 : -1;
  return f;
}

Quat fused_to_quat(const FusedAngles& f) {
  const double st = std::sin(f.pitch);
  const double sp = std::sin(f.roll);
  const double s2 = st * st + sp * sp;
  if (s2 > 1.0 + 1e-12) {
    throw DomainError("fused pitch and roll out of domain: sin^2 sum " +
                      std::to_string(s2) + " > 1");
  }
  const double sa = std::sqrt(std::min(s2, 1.0));
  const double ca = (f.hemisphere >= 0 ? 1.0 : -1.0) * std::sqrt(std::max(0.0, 1.0 - s2));
  const double alpha = std::atan2(sa, ca);
  const double gamma = std::atan2(st, sp);
  const Quat tilt(Eigen::AngleAxisd(alpha, Vec3(std::cos(gamma), std::sin(gamma), 0.0)));
  const Quat yaw(Eigen::AngleAxisd(f.yaw, Vec3::UnitZ()));
  return (yaw * tilt).normalized();
}

double tilt_angle(const Quat& q) {
  const Vec3 z = q.normalized() * Vec3::UnitZ();
  return std::atan2(std::hypot(z.x(), z.y()), z.z());
}

FilterState filter_update(const FilterState& state, const ImuSample& s) {
  if (!(s.dt > 0.0 && s.dt <= 0.1)) {
    throw Error("IMU sample dt must be in (0, 0.1] s, got " + std::to_string(s.dt));
  }
  FilterState out = state;
  Vec3 omega = s.gyro - state.gyro_bias;
  const double a = s.accel.norm();
  if (a >= 1.0) {
    const Vec3 measured = s.accel / a;
    const Vec3 predicted = state.q.conjugate() * Vec3::UnitZ();
    const Vec3 e = measured.cross(predicted);
    omega += state.gains.kp * e;
    out.gyro_bias -= state.gains.ki * e * s.dt;
  }
  const Vec3 half = 0.5 * omega * s.dt;
  const double n = half.norm();
  Quat dq;
  if (n < 1e-12) {
    dq = Quat(1.0, half.x(), half.y(), half.z());
  } else {
    const Vec3 v = std::sin(n) / n * half;
    dq = Quat(std::cos(n), v.x(), v.y(), v.z());
  }
  out.q = (state.q * dq).normalized();
  return out;
}

}  // namespace op2
