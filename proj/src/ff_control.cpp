#include "op2/ff_control.hpp"

#include <algorithm>

namespace op2 {

FFParams FFParams::matching(const bus::MotorParams& motor, int top) {
  FFParams p;
  p.k_t = motor.k_t;
  p.mu_c = motor.mu_c;
  p.mu_v = motor.mu_v;
  p.v_nominal = motor.spec.nominal_voltage;
  p.p_gain_floor = motor.gains.floor;
  p.p_gain_top = std::min(top, motor.gains.ceiling);
  return p;
}

int effort_to_pgain(double effort, const FFParams& params) {
  const double e = std::clamp(effort, 0.0, 1.0);
  const double g = params.p_gain_floor + e * (params.p_gain_top - params.p_gain_floor);
  return std::max(params.p_gain_floor, static_cast<int>(std::lround(g)));
}

double feedforward_offset(double torque, double velocity, double v_bus,
                          int gain, const FFParams& params) {
  if (gain < params.p_gain_floor) {
    throw Error("feed-forward gain " + std::to_string(gain) + " below floor " +
                std::to_string(params.p_gain_floor));
  }
  if (!(v_bus >= 10.0 && v_bus <= 17.0)) {
    throw Error("bus voltage " + std::to_string(v_bus) + " V outside [10, 17] V");
  }
  const double load = torque + params.mu_c * sign_or_zero(velocity) + params.mu_v * velocity;
  return load * (params.v_nominal / v_bus) / (params.k_t * gain);
}

ActuatorCommands compose_command(const RobotModel& model, const Vec& q_des,
                                 const Vec& qd_des, const Vec& qdd_des,
                                 const Vec& efforts, double v_bus,
                                 const FFParams& params,
                                 const ComposeOptions& options) {
  require_size(efforts.size(), model.dof(), "efforts");
  const CouplingMatrix& c = model.coupling();
  const int n = model.actuator_count();
  ActuatorCommands out;
  out.position = serial_to_actuators(c, q_des);
  out.offset = Vec::Zero(n);
  out.torque = Vec::Zero(n);
  out.p_gain.resize(n);
  out.ticks.resize(n);

  for (int i = 0; i < n; ++i) {
    double e = 0.0;
    for (int j = 0; j < model.dof(); ++j) {
      if (c.signs()(i, j) != 0.0) e = std::max(e, efforts[j]);
    }
    out.p_gain[i] = effort_to_pgain(e, params);
  }

  if (options.feedforward) {
    const DynamicsState state{q_des, qd_des, qdd_des, options.gravity};
    const Vec tau = supported_inverse_dynamics(model, state, options.support);
    out.torque = serial_torques_to_actuators(c, tau);
    const Vec velocity = c.matrix() * qd_des;
    for (int i = 0; i < n; ++i) {
      out.offset[i] = feedforward_offset(out.torque[i], velocity[i], v_bus,
                                         out.p_gain[i], params);
    }
    out.position += out.offset;
  }
  const int res = model.servo_spec().encoder_resolution;
  for (int i = 0; i < n; ++i) out.ticks[i] = bus::rad_to_ticks(out.position[i], res);
  return out;
}

}  // namespace op2
