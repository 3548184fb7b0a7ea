#include "op2/gait.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace op2 {
namespace {

double side_sign(Leg leg) { return leg == Leg::left ? 1.0 : -1.0; }

void require(bool ok, const char* what) {
  if (!ok) throw GaitError(what);
}

Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }
Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }

}  // namespace

void GaitParams::validate() const {
  require(std::isfinite(step_frequency) && step_frequency > 0.0,
          "gait.step_frequency must be positive");
  require(leg_extension > 0.0 && leg_extension <= 1.0,
          "gait.leg_extension must be in (0, 1]");
  require(leg_length > 0.0, "gait.leg_length must be positive");
  require(swing_fraction > 0.0 && swing_fraction <= 0.5,
          "gait.swing_fraction must be in (0, 0.5]");
  require(swing_height >= 0.0 && swing_height < leg_extension,
          "gait.swing_height must be in [0, leg_extension)");
  require(sway_amplitude >= 0.0, "gait.sway_amplitude must be non-negative");
  require(v_max > 0.0 && omega_max > 0.0, "gait.v_max and gait.omega_max must be positive");
}

GaitState advance_phase(GaitState state, double dt) {
  const double step = 2.0 * kPi * state.params.step_frequency * dt;
  // At most half a cycle per call, or the leg phases become ambiguous.
  if (!(dt > 0.0 && step <= kPi)) {
    throw GaitError("advance_phase: dt must be positive and advance at most half a cycle");
  }
  state.phase = wrap_angle(state.phase + step);
  return state;
}

double leg_phase(double mu, Leg leg) {
  double u = (mu + kPi) / (2.0 * kPi);
  u -= std::floor(u);
  if (leg == Leg::right) {
    u += 0.5;
    if (u >= 1.0) u -= 1.0;
  }
  return u >= 1.0 ? 0.0 : u;
}

void check_command(const GaitCommand& cmd, const GaitParams& params) {
  if (!std::isfinite(cmd.vx) || !std::isfinite(cmd.vy) || !std::isfinite(cmd.omega)) {
    throw GaitError("gait command must be finite");
  }
  if (std::hypot(cmd.vx, cmd.vy) > params.v_max) {
    std::ostringstream msg;
    msg << "gait command speed " << std::hypot(cmd.vx, cmd.vy) << " m/s exceeds v_max "
        << params.v_max;
    throw GaitError(msg.str());
  }
  if (std::abs(cmd.omega) > params.omega_max) {
    std::ostringstream msg;
    msg << "gait command yaw rate " << cmd.omega << " rad/s exceeds omega_max "
        << params.omega_max;
    throw GaitError(msg.str());
  }
}

void leg_waveform(double u, Leg leg, const GaitCommand& cmd, const GaitParams& p,
                  LegTargets& out_leg, ArmTargets& out_arm) {
  const double s = side_sign(leg);
  const double sw = p.swing_fraction;
  // Stride per step: the support foot travels back by v * support duration.
  const double support_time = (1.0 - sw) / p.step_frequency;
  const double dx = p.gain_x * cmd.vx * support_time;
  const double dy = p.gain_y * cmd.vy * support_time;
  const double dyaw = p.gain_yaw * cmd.omega * support_time;

  double stride;  // -1/2 .. +1/2 of the stride
  double lift = 0.0;
  if (u < sw) {
    // Hermite swing whose end slopes match the support travel, so foot
    // velocity is continuous at lift-off and touch-down.
    const double k = u / sw;
    const double m = -sw / (1.0 - sw);
    const double k2 = k * k, k3 = k2 * k;
    stride = (2 * k3 - 3 * k2 + 1) * -0.5 + (-2 * k3 + 3 * k2) * 0.5 +
             (k3 - 2 * k2 + k) * m + (k3 - k2) * m;
    const double sl = std::sin(kPi * k);
    lift = sl * sl;
  } else {
    const double k = (u - sw) / (1.0 - sw);
    stride = 0.5 - k;
  }
  const double x = stride * dx;
  const double y = stride * dy + s * p.sway_amplitude * std::cos(2.0 * kPi * (u - 0.5 * sw));
  const double yaw = stride * dyaw;

  out_leg = LegTargets{};
  out_leg.extension = p.leg_extension - p.swing_height * lift;
  out_leg.yaw = yaw;
  const double len = out_leg.extension * p.leg_length;
  // Undo the leg yaw, then solve pitch and roll for the displacement.
  const double c = std::cos(yaw), sn = std::sin(yaw);
  const double lx = c * x + sn * y;
  const double ly = -sn * x + c * y;
  out_leg.pitch = std::asin(std::clamp(-lx / len, -1.0, 1.0));
  out_leg.roll = std::asin(std::clamp(ly / (len * std::cos(out_leg.pitch)), -1.0, 1.0));

  out_arm.pitch = p.arm_swing * x;
  out_arm.roll = s * p.arm_roll;
  out_arm.elbow = p.elbow;
}

AbstractPose stand_pose(const GaitParams& p) {
  AbstractPose pose;
  for (Leg leg : {Leg::left, Leg::right}) {
    pose.leg(leg) = LegTargets{};
    pose.leg(leg).extension = p.leg_extension;
    pose.arm(leg) = ArmTargets{0.0, side_sign(leg) * p.arm_roll, p.elbow};
  }
  return pose;
}

AbstractPose abstract_pose(const GaitState& state, const GaitCommand& cmd) {
  check_command(cmd, state.params);
  if (!cmd.walking) return stand_pose(state.params);
  AbstractPose pose;
  for (Leg leg : {Leg::left, Leg::right}) {
    leg_waveform(leg_phase(state.phase, leg), leg, cmd, state.params, pose.leg(leg),
                 pose.arm(leg));
  }
  return pose;
}

Eigen::Vector2d leg_displacement(const LegTargets& t, double leg_length) {
  const Vec3 d = rot_z(t.yaw) * rot_x(t.roll) * rot_y(t.pitch) * Vec3(0, 0, -1);
  return t.extension * leg_length * d.head<2>();
}

// ---------------------------------------------------------------------------

FeedbackGains FeedbackGains::zero() {
  FeedbackGains g;
  g.arm_pitch = g.arm_roll = g.hip_pitch = g.hip_roll = PD{};
  g.foot_pitch = g.foot_roll = g.extension = PD{};
  return g;
}

void FeedbackGains::validate() const {
  for (const PD& g : {arm_pitch, arm_roll, hip_pitch, hip_roll, foot_pitch, foot_roll,
                      extension}) {
    require(std::isfinite(g.p) && std::isfinite(g.d) && g.p >= 0.0 && g.d >= 0.0,
            "feedback gains must be finite and non-negative");
  }
  require(derivative_cutoff > 0.0, "feedback derivative cutoff must be positive");
}

AbstractPose apply_feedback(const AbstractPose& targets, const FusedAngles& est,
                            const FusedAngles& ref, const FeedbackGains& gains,
                            FeedbackState& state, double dt) {
  const Eigen::Vector2d dev(est.pitch - ref.pitch, est.roll - ref.roll);
  if (dt > 0.0) {
    if (state.primed) {
      const double alpha = 1.0 - std::exp(-2.0 * kPi * gains.derivative_cutoff * dt);
      state.rate += alpha * ((dev - state.last) / dt - state.rate);
    }
    state.last = dev;
    state.primed = true;
  }
  const auto k = [&](const PD& g, int axis) {
    return g.p * dev[axis] + g.d * state.rate[axis];
  };

  AbstractPose out = targets;
  for (Leg leg : {Leg::left, Leg::right}) {
    out.arm(leg).pitch += k(gains.arm_pitch, 0);
    out.arm(leg).roll += k(gains.arm_roll, 1);
    out.leg(leg).pitch -= k(gains.hip_pitch, 0);
    out.leg(leg).roll -= k(gains.hip_roll, 1);
    out.leg(leg).foot_pitch += k(gains.foot_pitch, 0);
    out.leg(leg).foot_roll += k(gains.foot_roll, 1);
  }
  out.leg(Leg::left).extension -= k(gains.extension, 1);
  out.leg(Leg::right).extension += k(gains.extension, 1);
  return out;
}

// ---------------------------------------------------------------------------

std::pair<double, double> extension_range(const RobotModel& model) {
  const LegGeometry& g = model.leg_geometry();
  double knee_max = kPi;
  for (const char* name : {"left_knee_pitch", "right_knee_pitch"}) {
    const int j = model.joint_index(name);
    if (j >= 0) knee_max = std::min(knee_max, model.joints()[j].max);
  }
  const double l1 = g.thigh, l2 = g.shank;
  const double d_min = std::sqrt(l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * std::cos(knee_max));
  return {d_min / (l1 + l2), 1.0};
}

JointTargets abstract_to_joints(const RobotModel& model, const AbstractPose& pose) {
  if (!model.humanoid_layout()) throw GaitError("abstract_to_joints needs the humanoid layout");
  const LegGeometry& g = model.leg_geometry();
  const auto [eta_min, eta_max] = extension_range(model);

  JointTargets out;
  out.q = Vec::Zero(model.dof());
  const auto clamp_joint = [&](int j, double v) {
    const JointSpec& js = model.joints()[j];
    const double c = std::clamp(v, js.min, js.max);
    if (c != v) out.saturated = true;
    out.q[j] = c;
  };

  for (Leg leg : {Leg::left, Leg::right}) {
    const LegTargets& t = pose.leg(leg);
    double eta = t.extension;
    if (!(eta >= eta_min && eta <= eta_max)) {
      eta = std::clamp(std::isfinite(eta) ? eta : eta_min, eta_min, eta_max);
      out.saturated = true;
    }
    const double len = eta * (g.thigh + g.shank);
    const Mat3 yaw = rot_z(t.yaw);
    const Vec3 ankle = hip_position(model, leg) +
                       len * (yaw * rot_x(t.roll) * rot_y(t.pitch) * Vec3(0, 0, -1));
    Pose sole = Pose::Identity();
    sole.linear() = yaw * rot_x(t.foot_roll) * rot_y(t.foot_pitch);
    sole.translation() = ankle + sole.linear() * Vec3(0, 0, -g.foot_offset);
    const LegIkResult ik = leg_inverse_kinematics(model, sole, leg);
    const auto idx = model.chain_joints(leg == Leg::left ? Chain::left_leg : Chain::right_leg);
    for (int k = 0; k < 6; ++k) clamp_joint(idx[k], ik.q[k]);

    const auto arm = model.chain_joints(leg == Leg::left ? Chain::left_arm : Chain::right_arm);
    clamp_joint(arm[0], pose.arm(leg).pitch);
    clamp_joint(arm[1], pose.arm(leg).roll);
    clamp_joint(arm[2], pose.arm(leg).elbow);
  }
  return out;
}

Vec mirror_joints(const RobotModel& model, const Vec& q) {
  require_size(q.size(), model.dof(), "mirror_joints q");
  Vec out = q;
  const auto flip = [&](int j) {
    const Vec3& a = model.joints()[j].axis;
    return std::abs(a.x()) > 0.5 || std::abs(a.z()) > 0.5;
  };
  for (int j : model.chain_joints(Chain::neck)) out[j] = flip(j) ? -q[j] : q[j];
  for (auto [a, b] : {std::pair{Chain::left_arm, Chain::right_arm},
                      std::pair{Chain::left_leg, Chain::right_leg}}) {
    const auto l = model.chain_joints(a);
    const auto r = model.chain_joints(b);
    for (std::size_t k = 0; k < l.size() && k < r.size(); ++k) {
      out[l[k]] = flip(r[k]) ? -q[r[k]] : q[r[k]];
      out[r[k]] = flip(l[k]) ? -q[l[k]] : q[l[k]];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

GaitEngine::GaitEngine(const RobotModel& model, GaitParams params, FeedbackGains gains)
    : model_(&model), gains_(gains) {
  params.leg_length = model.leg_geometry().thigh + model.leg_geometry().shank;
  params.validate();
  gains_.validate();
  state_.params = params;
  targets_ = stand_pose(params);
}

void GaitEngine::reset(double phase) {
  state_.phase = wrap_angle(phase);
  feedback_ = FeedbackState{};
  targets_ = stand_pose(state_.params);
}

JointTargets GaitEngine::step(const GaitCommand& cmd, double dt, const FusedAngles* est) {
  check_command(cmd, state_.params);
  if (cmd.walking) state_ = advance_phase(state_, dt);
  targets_ = abstract_pose(state_, cmd);
  if (est) targets_ = apply_feedback(targets_, *est, FusedAngles{}, gains_, feedback_, dt);
  return abstract_to_joints(*model_, targets_);
}

void write_targets_csv_header(std::ostream& os) {
  os << "t";
  for (const char* side : {"l", "r"}) {
    for (const char* f : {"eta", "roll", "pitch", "yaw", "foot_pitch", "foot_roll"}) {
      os << ',' << side << '_' << f;
    }
  }
  for (const char* side : {"l", "r"}) {
    for (const char* f : {"arm_pitch", "arm_roll", "elbow"}) os << ',' << side << '_' << f;
  }
  os << '\n';
}

void write_targets_csv_row(std::ostream& os, double t, const AbstractPose& pose) {
  char buf[32];
  const auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.9f", v);
    os << buf;
  };
  std::snprintf(buf, sizeof buf, "%.6f", t);
  os << buf;
  for (const LegTargets& l : pose.legs) {
    for (double v : {l.extension, l.roll, l.pitch, l.yaw, l.foot_pitch, l.foot_roll}) put(v);
  }
  for (const ArmTargets& a : pose.arms) {
    for (double v : {a.pitch, a.roll, a.elbow}) put(v);
  }
  os << '\n';
}

}  // namespace op2
