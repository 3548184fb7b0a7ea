#pragma once

// Scenario runner: emulated servo bus, fixed-base or kinematic-walk physics,
// synthetic IMU, supervisor, tracking log and metrics.

#include "op2/ff_control.hpp"
#include "op2/gait.hpp"
#include "op2/motion.hpp"
#include "op2/orientation.hpp"
#include "op2/servo_bus.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace op2 {

class ScenarioError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Config

/// Tunables shared by the CLI, the service and scenarios. Keys are dotted
/// paths: gait.*, feedback.*, ff.*, orientation.*, motor.*.
struct SimConfig {
  GaitParams gait;
  FeedbackGains feedback;
  FFParams ff;
  FilterGains orientation;
  bus::MotorParams motor;

  /// Accepts nested objects or flat dotted keys. Throws ScenarioError on
  /// unknown keys or non-numeric values.
  void apply(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Synthetic IMU

struct ImuNoise {
  Vec3 gyro_bias = Vec3::Zero();  // rad/s
  double gyro_sigma = 0.0;        // rad/s
  double accel_sigma = 0.0;       // m/s^2
};

class ImuSynth {
 public:
  ImuSynth(ImuNoise noise, std::uint64_t seed);

  /// Sample over one interval of a body-to-world trajectory: gyro is the
  /// body rate taking `from` to `to` in dt, accel the specific force of a
  /// body at rest in orientation `to`.
  ImuSample sample(const Quat& from, const Quat& to, double dt);

 private:
  ImuNoise noise_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// N + 1 orientations -> N samples.
std::vector<ImuSample> synthesize_imu(const std::vector<Quat>& trajectory,
                                      const ImuNoise& noise, double dt,
                                      std::uint64_t seed);

// ---------------------------------------------------------------------------
// Supervisor

enum class SupervisorState { relaxed, fading_in, faded, running, fading_out };
enum class SupervisorEvent { fade_in, fade_out, start_behavior, stop_behavior, emergency_relax };

const char* to_string(SupervisorState s);
const char* to_string(SupervisorEvent e);
std::optional<SupervisorEvent> supervisor_event_from_string(std::string_view name);

struct Transition {
  bool accepted = false;
  SupervisorState state = SupervisorState::relaxed;
};

/// relaxed -fade_in-> fading_in -> faded -start-> running -stop-> faded;
/// fade_out from faded/running/fading_in -> fading_out -> relaxed;
/// emergency_relax from anywhere -> relaxed.
class Supervisor {
 public:
  explicit Supervisor(double fade_time = 1.0);

  SupervisorState state() const { return state_; }
  Transition event(SupervisorEvent e);
  /// Advances an active fade; completes it once fade_time has passed.
  void tick(double dt);
  /// Effort scale in [0, 1]: 0 relaxed, ramps during fades.
  double effort_scale() const;
  bool torque_on() const { return state_ != SupervisorState::relaxed; }
  bool behavior_active() const { return state_ == SupervisorState::running; }

 private:
  double fade_time_;
  SupervisorState state_ = SupervisorState::relaxed;
  std::optional<EffortFade> fade_;
  double fade_elapsed_ = 0.0;
};

// ---------------------------------------------------------------------------
// Scenario

enum class SimMode { fixed_base_dynamics, kinematic_walk };

const char* to_string(SimMode m);

struct Disturbance {
  double t = 0.0;
  FusedAxis axis = FusedAxis::pitch;
  double impulse = 0.0;  // N m s on the trunk tilt
};

struct ScheduledEvent {
  double t = 0.0;
  SupervisorEvent event = SupervisorEvent::emergency_relax;
};

/// Static pose held with constant effort.
struct HoldBehavior {
  std::map<std::string, double> pose;  // joint -> rad, others 0
  double effort = 1.0;
  SupportFoot support = SupportFoot::both;
};

/// Trunk tilt per axis:
///   a'' = wn^2 (atan(d / h) - a) - 2 zeta wn a' + impulses / inertia
/// with d the horizontal CoM offset from the support centre.
struct PendulumParams {
  double natural_frequency = 1.2;  // Hz
  double damping_ratio = 0.5;
  double com_height = 0.55;        // m, h above the soles
  double inertia = 0.0;            // kg m^2, 0 = total mass * h^2
};

struct Scenario {
  std::string name;
  SimMode mode = SimMode::fixed_base_dynamics;
  double duration = 1.0;
  int control_rate = 100;
  int physics_rate = 1000;
  std::uint64_t seed = 0;
  bool ff_enabled = true;
  double bus_voltage = 14.8;
  double fade_in = 0.0;        // s, 0 starts running with torque on

  // Exactly one behavior.
  std::optional<GaitCommand> gait;
  std::string motion;          // name, resolved through the motions dir
  std::optional<HoldBehavior> hold;

  std::vector<Disturbance> disturbances;
  std::vector<ScheduledEvent> events;
  ImuNoise imu;
  PendulumParams pendulum;
  double metrics_from = 0.0;   // s, start of the error statistics window
  nlohmann::json config = nlohmann::json::object();

  int ticks() const;
  /// Throws ScenarioError naming the offending field.
  void validate() const;
};

Scenario scenario_from_json(const nlohmann::json& doc);
Scenario load_scenario_file(const std::string& path);
nlohmann::json scenario_to_json(const Scenario& s);

// ---------------------------------------------------------------------------
// Log and metrics

struct TickRecord {
  int tick = 0;
  double t = 0.0;
  SupervisorState state = SupervisorState::relaxed;
  std::vector<int> commanded;  // goal ticks
  std::vector<int> actual;     // present position ticks
  Vec q_des;                   // serial targets
  Vec error;                   // q_des - fused feedback, serial
  FusedAngles estimate;        // orientation filter
  FusedAngles truth;           // simulated trunk
  double voltage = 0.0;
  int torque_on = 0;           // devices with torque enabled
  Eigen::Vector2d position = Eigen::Vector2d::Zero();  // odometry, m
  double heading = 0.0;
};

struct JointErrorStats {
  std::string joint;
  double max_abs = 0.0;
  double rms = 0.0;
};

struct Metrics {
  int ticks = 0;
  double duration = 0.0;
  std::vector<JointErrorStats> joints;  // model order, over the metrics window
  double max_error = 0.0;
  double mean_forward_speed = 0.0;      // m/s, along the initial heading
  double max_tilt = 0.0;                // rad, simulated trunk
  int window_ticks = 0;
  std::string final_state;

  nlohmann::json to_json() const;
};

/// Column layout (one row per control tick):
///   tick, t, state, torque_on, voltage, fused est pitch/roll/yaw, true pitch/roll,
///   odom x/y/heading, cmd_<actuator>..., act_<actuator>..., err_<joint>...
void write_log_header(std::ostream& os, const RobotModel& model);
void write_log_row(std::ostream& os, const TickRecord& r);

struct RunResult {
  Metrics metrics;
  std::vector<TickRecord> log;
};

struct RunOptions {
  std::string motions_dir;  // for scenario.motion
  SimConfig base_config;    // scenario.config is applied on top
  /// Called after every control tick in order; return false to stop early.
  std::function<bool(const TickRecord&)> on_tick;
  bool keep_log = true;
};

RunResult run_scenario(const RobotModel& model, const Scenario& scenario,
                       const RunOptions& options = {});

/// Log CSV text for a run (header + rows).
std::string log_to_csv(const RobotModel& model, const std::vector<TickRecord>& log);

}  // namespace op2
