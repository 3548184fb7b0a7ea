#pragma once

#include "op2/dynamics.hpp"
#include "op2/servo_bus.hpp"

#include <vector>

namespace op2 {

struct FFParams {
  double k_t = bus::MotorParams{}.k_t;    // N m per (gain rad)
  double mu_c = bus::MotorParams{}.mu_c;  // N m
  double mu_v = bus::MotorParams{}.mu_v;  // N m s / rad
  double v_nominal = 14.8;                // V
  int p_gain_top = 64;                    // gain at effort 1
  int p_gain_floor = 2;

  /// Constants copied from an emulated servo, so compensation is exact
  /// in-model.
  static FFParams matching(const bus::MotorParams& motor, int top = 64);
};

/// round(floor + clamp(effort, 0, 1) * (top - floor)).
int effort_to_pgain(double effort, const FFParams& params);

/// Position offset (rad) that makes a proportional servo settle on target
/// under `torque`:
///   (tau + mu_c sgn(qd) + mu_v qd) * (v_nominal / v_bus) / (k_t gain)
/// Throws Error when gain < p_gain_floor or v_bus is outside [10, 17] V.
double feedforward_offset(double torque, double velocity, double v_bus,
                          int gain, const FFParams& params);

struct ComposeOptions {
  Vec3 gravity = kStandardGravity;
  Support support;          // who reacts the base wrench
  bool feedforward = true;  // false: plain position commands
};

struct ActuatorCommands {
  std::vector<int> ticks;   // goal positions
  std::vector<int> p_gain;
  Vec position;             // rad, before quantization
  Vec offset;               // rad, feed-forward part
  Vec torque;               // expected actuator torque, N m
};

/// Inverse dynamics -> actuator torques -> per-actuator offset added to the
/// mapped positions -> ticks. Actuator gains use the largest effort among the
/// joints each actuator drives.
ActuatorCommands compose_command(const RobotModel& model, const Vec& q_des,
                                 const Vec& qd_des, const Vec& qdd_des,
                                 const Vec& efforts, double v_bus,
                                 const FFParams& params,
                                 const ComposeOptions& options = {});

}  // namespace op2
