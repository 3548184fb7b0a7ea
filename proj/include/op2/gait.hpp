#pragma once

// Open-loop omnidirectional gait in abstract leg space.
//
// Each leg runs its own phase u in [0, 1): swing on [0, swing_fraction),
// support on the rest. The right leg lags the left by half a cycle, so one
// cycle of the gait phase mu is two steps.
//
// Abstract leg: extension eta (hip-ankle distance over thigh + shank), leg
// angle (roll, pitch, yaw) of the hip-ankle line and foot angle (pitch, roll)
// relative to the trunk. Leg direction is Rz(yaw) Rx(roll) Ry(pitch) (0,0,-1).

#include "op2/common.hpp"
#include "op2/orientation.hpp"
#include "op2/robot_model.hpp"

#include <array>
#include <iosfwd>

namespace op2 {

class GaitError : public Error {
 public:
  using Error::Error;
};

struct GaitCommand {
  double vx = 0.0;     // m/s
  double vy = 0.0;     // m/s
  double omega = 0.0;  // rad/s
  bool walking = true;
};

/// Shape parameters. Defaults were tuned in simulation and are not measured
/// robot values.
struct GaitParams {
  double step_frequency = 2.4;   // Hz, one full phase cycle per 1/f
  double leg_extension = 0.9;    // nominal eta
  double leg_length = 0.56;      // m, thigh + shank
  double swing_fraction = 0.45;  // per leg; double support = 1 - 2 * this
  double swing_height = 0.06;    // eta reduction at mid swing
  double gain_x = 1.0;           // stride scale per axis
  double gain_y = 1.0;
  double gain_yaw = 1.0;
  double sway_amplitude = 0.02;  // m, lateral hip swing
  double arm_swing = 1.5;        // rad per m of same-side foot travel
  double arm_roll = 0.1;         // rad, outward
  double elbow = -0.3;           // rad
  double v_max = 0.5;            // m/s
  double omega_max = 1.0;        // rad/s

  /// Throws GaitError on non-positive frequency or out-of-range shape values.
  void validate() const;
};

struct GaitState {
  double phase = -kPi;  // mu in [-pi, pi)
  GaitParams params;
};

/// mu += 2 pi f dt, wrapped. dt > 0 with f dt <= 1/2.
GaitState advance_phase(GaitState state, double dt);

/// Leg phase in [0, 1) of each leg for gait phase mu.
double leg_phase(double mu, Leg leg);

struct LegTargets {
  double extension = 1.0;
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  double foot_pitch = 0.0;
  double foot_roll = 0.0;

  bool operator==(const LegTargets&) const = default;
};

struct ArmTargets {
  double pitch = 0.0;  // positive swings the arm back
  double roll = 0.0;
  double elbow = 0.0;

  bool operator==(const ArmTargets&) const = default;
};

struct AbstractPose {
  std::array<LegTargets, 2> legs;  // indexed by Leg
  std::array<ArmTargets, 2> arms;

  LegTargets& leg(Leg l) { return legs[static_cast<int>(l)]; }
  const LegTargets& leg(Leg l) const { return legs[static_cast<int>(l)]; }
  ArmTargets& arm(Leg l) { return arms[static_cast<int>(l)]; }
  const ArmTargets& arm(Leg l) const { return arms[static_cast<int>(l)]; }

  bool operator==(const AbstractPose&) const = default;
};

/// Throws GaitError when the command exceeds v_max / omega_max.
void check_command(const GaitCommand& cmd, const GaitParams& params);

/// Targets of one leg and its same-side arm at leg phase u.
void leg_waveform(double u, Leg leg, const GaitCommand& cmd,
                  const GaitParams& params, LegTargets& out_leg,
                  ArmTargets& out_arm);

AbstractPose abstract_pose(const GaitState& state, const GaitCommand& cmd);

/// Standing pose: nominal extension, zero leg angles, nominal arms.
AbstractPose stand_pose(const GaitParams& params);

/// Horizontal ankle displacement (x, y) from the hip for a leg target.
Eigen::Vector2d leg_displacement(const LegTargets& t, double leg_length);

// ---------------------------------------------------------------------------
// Feedback

struct PD {
  double p = 0.0;
  double d = 0.0;
};

/// Fused pitch/roll deviation -> corrective offsets (all non-negative).
struct FeedbackGains {
  PD arm_pitch{0.8, 0.02};
  PD arm_roll{0.4, 0.01};
  PD hip_pitch{0.2, 0.01};
  PD hip_roll{0.2, 0.01};
  PD foot_pitch{0.2, 0.0};
  PD foot_roll{0.2, 0.0};
  PD extension{0.1, 0.0};
  double derivative_cutoff = 10.0;  // Hz

  static FeedbackGains zero();
  void validate() const;
};

struct FeedbackState {
  Eigen::Vector2d last = Eigen::Vector2d::Zero();  // (pitch, roll) deviation
  Eigen::Vector2d rate = Eigen::Vector2d::Zero();  // filtered derivative
  bool primed = false;
};

/// Adds P+D corrections for d = (pitch_est - pitch_ref, roll_est - roll_ref).
/// Sign table (k = P d + D d'):
///   +pitch: arm pitch +k, leg pitch -k, foot pitch +k
///   +roll:  arm roll +k, leg roll -k, foot roll +k, left eta -k, right eta +k
/// `state` carries the derivative filter; dt <= 0 skips the derivative.
AbstractPose apply_feedback(const AbstractPose& targets, const FusedAngles& est,
                            const FusedAngles& ref, const FeedbackGains& gains,
                            FeedbackState& state, double dt);

// ---------------------------------------------------------------------------
// Conversion to serial joints

struct JointTargets {
  Vec q;
  bool saturated = false;  // extension clamped or IK result clamped to limits
};

/// Extension range reachable with the knee inside its limits.
std::pair<double, double> extension_range(const RobotModel& model);

JointTargets abstract_to_joints(const RobotModel& model, const AbstractPose& pose);

/// Serial mirror: swaps left/right chains and negates roll and yaw joints.
Vec mirror_joints(const RobotModel& model, const Vec& q);

// ---------------------------------------------------------------------------

/// One control-loop instance.
class GaitEngine {
 public:
  GaitEngine(const RobotModel& model, GaitParams params = {},
             FeedbackGains gains = {});

  /// Advances by dt (when walking) and returns serial joint targets.
  /// `est` enables feedback against an upright reference.
  JointTargets step(const GaitCommand& cmd, double dt,
                    const FusedAngles* est = nullptr);

  const GaitState& state() const { return state_; }
  const AbstractPose& targets() const { return targets_; }
  void reset(double phase = -kPi);

 private:
  const RobotModel* model_;
  GaitState state_;
  FeedbackGains gains_;
  FeedbackState feedback_;
  AbstractPose targets_;
};

void write_targets_csv_header(std::ostream& os);
void write_targets_csv_row(std::ostream& os, double t, const AbstractPose& pose);

}  // namespace op2
