#include "op2/sim.hpp"

#include "op2/canonical_json.hpp"
#include "op2/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace op2 {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

struct ConfigSlot {
  double* d = nullptr;
  int* i = nullptr;
};

std::map<std::string, ConfigSlot> config_slots(SimConfig& c) {
  std::map<std::string, ConfigSlot> m;
  const auto d = [&](const std::string& k, double& v) { m[k].d = &v; };
  GaitParams& g = c.gait;
  d("gait.step_frequency", g.step_frequency);
  d("gait.leg_extension", g.leg_extension);
  d("gait.leg_length", g.leg_length);
  d("gait.swing_fraction", g.swing_fraction);
  d("gait.swing_height", g.swing_height);
  d("gait.gain_x", g.gain_x);
  d("gait.gain_y", g.gain_y);
  d("gait.gain_yaw", g.gain_yaw);
  d("gait.sway_amplitude", g.sway_amplitude);
  d("gait.arm_swing", g.arm_swing);
  d("gait.arm_roll", g.arm_roll);
  d("gait.elbow", g.elbow);
  d("gait.v_max", g.v_max);
  d("gait.omega_max", g.omega_max);
  FeedbackGains& f = c.feedback;
  const std::pair<const char*, PD*> pds[] = {
      {"arm_pitch", &f.arm_pitch}, {"arm_roll", &f.arm_roll},
      {"hip_pitch", &f.hip_pitch}, {"hip_roll", &f.hip_roll},
      {"foot_pitch", &f.foot_pitch}, {"foot_roll", &f.foot_roll},
      {"extension", &f.extension}};
  for (const auto& [name, pd] : pds) {
    d(std::string("feedback.") + name + ".p", pd->p);
    d(std::string("feedback.") + name + ".d", pd->d);
  }
  d("feedback.derivative_cutoff", f.derivative_cutoff);
  d("ff.k_t", c.ff.k_t);
  d("ff.mu_c", c.ff.mu_c);
  d("ff.mu_v", c.ff.mu_v);
  d("ff.v_nominal", c.ff.v_nominal);
  m["ff.p_gain_top"].i = &c.ff.p_gain_top;
  m["ff.p_gain_floor"].i = &c.ff.p_gain_floor;
  d("orientation.kp", c.orientation.kp);
  d("orientation.ki", c.orientation.ki);
  d("motor.k_t", c.motor.k_t);
  d("motor.mu_c", c.motor.mu_c);
  d("motor.mu_v", c.motor.mu_v);
  return m;
}

void flatten(const json& doc, const std::string& prefix, std::map<std::string, json>& out) {
  if (doc.is_object()) {
    for (const auto& [k, v] : doc.items()) {
      flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    }
  } else {
    out[prefix] = doc;
  }
}

}  // namespace

void SimConfig::apply(const json& doc) {
  if (!doc.is_object()) throw ScenarioError("config: expected an object");
  std::map<std::string, json> flat;
  flatten(doc, "", flat);
  auto slots = config_slots(*this);
  for (const auto& [key, value] : flat) {
    const auto it = slots.find(key);
    if (it == slots.end()) throw ScenarioError("config." + key + ": unknown key");
    if (!value.is_number()) throw ScenarioError("config." + key + ": expected a number");
    if (it->second.d) {
      *it->second.d = value.get<double>();
    } else {
      if (!value.is_number_integer()) throw ScenarioError("config." + key + ": expected an integer");
      *it->second.i = value.get<int>();
    }
  }
  gait.validate();
  feedback.validate();
  if (!(ff.k_t > 0.0 && ff.mu_c >= 0.0 && ff.mu_v >= 0.0 && ff.v_nominal > 0.0)) {
    throw ScenarioError("config.ff: constants must be positive");
  }
  if (!(ff.p_gain_floor >= 1 && ff.p_gain_top > ff.p_gain_floor && ff.p_gain_top <= 254)) {
    throw ScenarioError("config.ff: need 1 <= p_gain_floor < p_gain_top <= 254");
  }
  if (!(orientation.kp >= 0.0 && orientation.ki >= 0.0)) {
    throw ScenarioError("config.orientation: gains must be non-negative");
  }
  if (!(motor.k_t > 0.0 && motor.mu_c >= 0.0 && motor.mu_v > 0.0)) {
    throw ScenarioError("config.motor: constants must be positive");
  }
}

json SimConfig::to_json() const {
  SimConfig copy = *this;
  json out = json::object();
  for (const auto& [key, slot] : config_slots(copy)) {
    json* node = &out;
    std::size_t start = 0, dot;
    while ((dot = key.find('.', start)) != std::string::npos) {
      node = &(*node)[key.substr(start, dot - start)];
      start = dot + 1;
    }
    (*node)[key.substr(start)] = slot.d ? json(*slot.d) : json(*slot.i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// IMU

ImuSynth::ImuSynth(ImuNoise noise, std::uint64_t seed) : noise_(noise), rng_(seed) {}

ImuSample ImuSynth::sample(const Quat& from, const Quat& to, double dt) {
  // Body rate: from * exp(w dt) = to.
  const Eigen::AngleAxisd delta(from.conjugate() * to);
  Vec3 w = delta.axis() * delta.angle() / dt;
  if (delta.angle() > kPi) w = delta.axis() * (delta.angle() - 2.0 * kPi) / dt;
  ImuSample s;
  s.dt = dt;
  s.gyro = w + noise_.gyro_bias;
  s.accel = to.conjugate() * Vec3(0.0, 0.0, 9.81);
  for (int k = 0; k < 3; ++k) s.gyro[k] += noise_.gyro_sigma * normal_(rng_);
  for (int k = 0; k < 3; ++k) s.accel[k] += noise_.accel_sigma * normal_(rng_);
  return s;
}

std::vector<ImuSample> synthesize_imu(const std::vector<Quat>& trajectory,
                                      const ImuNoise& noise, double dt,
                                      std::uint64_t seed) {
  if (!(dt > 0.0)) throw Error("synthesize_imu: dt must be positive");
  std::vector<ImuSample> out;
  if (trajectory.size() < 2) return out;
  ImuSynth synth(noise, seed);
  out.reserve(trajectory.size() - 1);
  for (std::size_t i = 0; i + 1 < trajectory.size(); ++i) {
    out.push_back(synth.sample(trajectory[i], trajectory[i + 1], dt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Supervisor

const char* to_string(SupervisorState s) {
  switch (s) {
    case SupervisorState::relaxed: return "relaxed";
    case SupervisorState::fading_in: return "fading_in";
    case SupervisorState::faded: return "faded";
    case SupervisorState::running: return "running";
    case SupervisorState::fading_out: return "fading_out";
  }
  return "?";
}

const char* to_string(SupervisorEvent e) {
  switch (e) {
    case SupervisorEvent::fade_in: return "fade_in";
    case SupervisorEvent::fade_out: return "fade_out";
    case SupervisorEvent::start_behavior: return "start_behavior";
    case SupervisorEvent::stop_behavior: return "stop_behavior";
    case SupervisorEvent::emergency_relax: return "emergency_relax";
  }
  return "?";
}

std::optional<SupervisorEvent> supervisor_event_from_string(std::string_view name) {
  for (auto e : {SupervisorEvent::fade_in, SupervisorEvent::fade_out,
                 SupervisorEvent::start_behavior, SupervisorEvent::stop_behavior,
                 SupervisorEvent::emergency_relax}) {
    if (name == to_string(e)) return e;
  }
  return std::nullopt;
}

Supervisor::Supervisor(double fade_time) : fade_time_(fade_time) {
  if (!(fade_time >= 0.0)) throw Error("supervisor fade time must be >= 0");
}

Transition Supervisor::event(SupervisorEvent e) {
  using S = SupervisorState;
  const auto reject = [&] { return Transition{false, state_}; };
  switch (e) {
    case SupervisorEvent::fade_in:
      if (state_ != S::relaxed) return reject();
      state_ = S::fading_in;
      fade_elapsed_ = 0.0;
      if (fade_time_ == 0.0) {
        state_ = S::faded;
      } else {
        fade_.emplace(Vec::Zero(1), 1.0, fade_time_);
      }
      break;
    case SupervisorEvent::fade_out:
      if (state_ != S::faded && state_ != S::running && state_ != S::fading_in) return reject();
      fade_elapsed_ = 0.0;
      if (fade_time_ == 0.0) {
        fade_.reset();
        state_ = S::relaxed;
      } else {
        fade_.emplace(Vec::Constant(1, effort_scale()), 0.0, fade_time_);
        state_ = S::fading_out;
      }
      break;
    case SupervisorEvent::start_behavior:
      if (state_ != S::faded) return reject();
      state_ = S::running;
      break;
    case SupervisorEvent::stop_behavior:
      if (state_ != S::running) return reject();
      state_ = S::faded;
      break;
    case SupervisorEvent::emergency_relax:
      fade_.reset();
      state_ = S::relaxed;
      break;
  }
  return {true, state_};
}

void Supervisor::tick(double dt) {
  if (!fade_) return;
  fade_elapsed_ += dt;
  if (fade_elapsed_ >= fade_time_) {
    state_ = state_ == SupervisorState::fading_in ? SupervisorState::faded
                                                  : SupervisorState::relaxed;
    fade_.reset();
  }
}

double Supervisor::effort_scale() const {
  switch (state_) {
    case SupervisorState::relaxed: return 0.0;
    case SupervisorState::faded:
    case SupervisorState::running: return 1.0;
    default: return fade_ ? fade_->at(fade_elapsed_)[0] : 0.0;
  }
}

// ---------------------------------------------------------------------------
// Scenario

const char* to_string(SimMode m) {
  return m == SimMode::fixed_base_dynamics ? "fixed_base_dynamics" : "kinematic_walk";
}

int Scenario::ticks() const {
  return std::max(1, static_cast<int>(std::lround(duration * control_rate)));
}

void Scenario::validate() const {
  const auto fail = [](const std::string& field, const std::string& msg) {
    throw ScenarioError(field + ": " + msg);
  };
  if (!(duration > 0.0) || !std::isfinite(duration)) fail("duration", "must be > 0");
  if (control_rate <= 0) fail("control_rate", "must be > 0");
  if (physics_rate <= 0 || physics_rate % control_rate != 0) {
    fail("physics_rate", "must be a positive multiple of control_rate");
  }
  if (physics_rate < 100) fail("physics_rate", "must be >= 100 Hz");
  const int behaviors = (gait ? 1 : 0) + (motion.empty() ? 0 : 1) + (hold ? 1 : 0);
  if (behaviors != 1) fail("behavior", "exactly one of gait, motion, hold is required");
  if (mode == SimMode::kinematic_walk && !gait) fail("mode", "kinematic_walk needs a gait command");
  if (!(bus_voltage >= 10.0 && bus_voltage <= 17.0)) fail("bus_voltage", "outside [10, 17] V");
  if (!(fade_in >= 0.0)) fail("fade_in", "must be >= 0");
  if (hold && !(hold->effort >= 0.0 && hold->effort <= 1.0)) fail("hold.effort", "outside [0, 1]");
  for (std::size_t i = 0; i < disturbances.size(); ++i) {
    if (!(disturbances[i].t >= 0.0)) fail("disturbances[" + std::to_string(i) + "].t", "must be >= 0");
  }
  if (!(pendulum.natural_frequency > 0.0 && pendulum.damping_ratio >= 0.0 &&
        pendulum.com_height > 0.0 && pendulum.inertia >= 0.0)) {
    fail("pendulum", "parameters must be positive");
  }
  if (!(imu.gyro_sigma >= 0.0 && imu.accel_sigma >= 0.0)) fail("imu", "noise must be >= 0");
}

namespace {

template <class T>
T get_field(const json& doc, const std::string& path, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ScenarioError(path + key + ": wrong type");
  }
}

FusedAxis axis_from(const std::string& s, const std::string& field) {
  if (s == "pitch") return FusedAxis::pitch;
  if (s == "roll") return FusedAxis::roll;
  throw ScenarioError(field + ": expected pitch or roll");
}

SupportFoot support_from(const std::string& s, const std::string& field) {
  for (auto f : {SupportFoot::left, SupportFoot::right, SupportFoot::both, SupportFoot::none}) {
    if (s == to_string(f)) return f;
  }
  throw ScenarioError(field + ": expected left, right, both or none");
}

}  // namespace

Scenario scenario_from_json(const json& doc) {
  if (!doc.is_object()) throw ScenarioError("scenario: expected an object");
  static const char* known[] = {"name", "mode", "duration", "control_rate", "physics_rate",
                                "seed", "ff_enabled", "bus_voltage", "fade_in", "gait",
                                "motion", "hold", "disturbances", "events", "imu",
                                "pendulum", "metrics_from", "config"};
  for (const auto& [k, v] : doc.items()) {
    if (std::find(std::begin(known), std::end(known), k) == std::end(known)) {
      throw ScenarioError(k + ": unknown field");
    }
  }
  Scenario s;
  s.name = get_field<std::string>(doc, "", "name", "");
  const auto mode = get_field<std::string>(doc, "", "mode", "fixed_base_dynamics");
  if (mode == "fixed_base_dynamics") {
    s.mode = SimMode::fixed_base_dynamics;
  } else if (mode == "kinematic_walk") {
    s.mode = SimMode::kinematic_walk;
  } else {
    throw ScenarioError("mode: expected fixed_base_dynamics or kinematic_walk");
  }
  s.duration = get_field(doc, "", "duration", s.duration);
  s.control_rate = get_field(doc, "", "control_rate", s.control_rate);
  s.physics_rate = get_field(doc, "", "physics_rate", s.physics_rate);
  s.seed = get_field<std::uint64_t>(doc, "", "seed", 0);
  s.ff_enabled = get_field(doc, "", "ff_enabled", s.ff_enabled);
  s.bus_voltage = get_field(doc, "", "bus_voltage", s.bus_voltage);
  s.fade_in = get_field(doc, "", "fade_in", s.fade_in);
  s.metrics_from = get_field(doc, "", "metrics_from", s.metrics_from);
  if (doc.contains("gait")) {
    const json& g = doc.at("gait");
    if (!g.is_object()) throw ScenarioError("gait: expected an object");
    GaitCommand c;
    c.vx = get_field(g, "gait.", "vx", 0.0);
    c.vy = get_field(g, "gait.", "vy", 0.0);
    c.omega = get_field(g, "gait.", "omega", 0.0);
    c.walking = get_field(g, "gait.", "walking", true);
    s.gait = c;
  }
  s.motion = get_field<std::string>(doc, "", "motion", "");
  if (doc.contains("hold")) {
    const json& h = doc.at("hold");
    if (!h.is_object()) throw ScenarioError("hold: expected an object");
    HoldBehavior b;
    b.pose = get_field(h, "hold.", "pose", b.pose);
    b.effort = get_field(h, "hold.", "effort", b.effort);
    b.support = support_from(get_field<std::string>(h, "hold.", "support", "both"), "hold.support");
    s.hold = b;
  }
  if (doc.contains("disturbances")) {
    const json& arr = doc.at("disturbances");
    if (!arr.is_array()) throw ScenarioError("disturbances: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "disturbances[" + std::to_string(i) + "].";
      Disturbance d;
      d.t = get_field(arr[i], p, "t", 0.0);
      d.axis = axis_from(get_field<std::string>(arr[i], p, "axis", "pitch"), p + "axis");
      d.impulse = get_field(arr[i], p, "impulse", 0.0);
      s.disturbances.push_back(d);
    }
  }
  if (doc.contains("events")) {
    const json& arr = doc.at("events");
    if (!arr.is_array()) throw ScenarioError("events: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "events[" + std::to_string(i) + "].";
      ScheduledEvent e;
      e.t = get_field(arr[i], p, "t", 0.0);
      const auto name = get_field<std::string>(arr[i], p, "event", "");
      const auto ev = supervisor_event_from_string(name);
      if (!ev) throw ScenarioError(p + "event: unknown event '" + name + "'");
      e.event = *ev;
      s.events.push_back(e);
    }
  }
  if (doc.contains("imu")) {
    const json& m = doc.at("imu");
    const double bias = get_field(m, "imu.", "gyro_bias", 0.0);
    s.imu.gyro_bias = Vec3::Constant(bias);
    s.imu.gyro_sigma = get_field(m, "imu.", "gyro_sigma", 0.0);
    s.imu.accel_sigma = get_field(m, "imu.", "accel_sigma", 0.0);
  }
  if (doc.contains("pendulum")) {
    const json& m = doc.at("pendulum");
    PendulumParams& p = s.pendulum;
    p.natural_frequency = get_field(m, "pendulum.", "natural_frequency", p.natural_frequency);
    p.damping_ratio = get_field(m, "pendulum.", "damping_ratio", p.damping_ratio);
    p.com_height = get_field(m, "pendulum.", "com_height", p.com_height);
    p.inertia = get_field(m, "pendulum.", "inertia", p.inertia);
  }
  if (doc.contains("config")) s.config = doc.at("config");
  s.validate();
  return s;
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ScenarioError(path + ": " + e.what());
  }
  return scenario_from_json(doc);
}

json scenario_to_json(const Scenario& s) {
  json doc;
  doc["name"] = s.name;
  doc["mode"] = to_string(s.mode);
  doc["duration"] = s.duration;
  doc["control_rate"] = s.control_rate;
  doc["physics_rate"] = s.physics_rate;
  doc["seed"] = s.seed;
  doc["ff_enabled"] = s.ff_enabled;
  doc["bus_voltage"] = s.bus_voltage;
  doc["fade_in"] = s.fade_in;
  doc["metrics_from"] = s.metrics_from;
  if (s.gait) {
    doc["gait"] = {{"vx", s.gait->vx}, {"vy", s.gait->vy}, {"omega", s.gait->omega},
                   {"walking", s.gait->walking}};
  }
  if (!s.motion.empty()) doc["motion"] = s.motion;
  if (s.hold) {
    doc["hold"] = {{"pose", s.hold->pose}, {"effort", s.hold->effort},
                   {"support", to_string(s.hold->support)}};
  }
  doc["disturbances"] = json::array();
  for (const auto& d : s.disturbances) {
    doc["disturbances"].push_back(
        {{"t", d.t}, {"axis", d.axis == FusedAxis::pitch ? "pitch" : "roll"}, {"impulse", d.impulse}});
  }
  doc["events"] = json::array();
  for (const auto& e : s.events) doc["events"].push_back({{"t", e.t}, {"event", to_string(e.event)}});
  doc["imu"] = {{"gyro_bias", s.imu.gyro_bias.x()}, {"gyro_sigma", s.imu.gyro_sigma},
                {"accel_sigma", s.imu.accel_sigma}};
  doc["pendulum"] = {{"natural_frequency", s.pendulum.natural_frequency},
                     {"damping_ratio", s.pendulum.damping_ratio},
                     {"com_height", s.pendulum.com_height},
                     {"inertia", s.pendulum.inertia}};
  doc["config"] = s.config;
  return doc;
}

// ---------------------------------------------------------------------------
// Log

json Metrics::to_json() const {
  json doc;
  doc["ticks"] = ticks;
  doc["duration"] = duration;
  doc["window_ticks"] = window_ticks;
  doc["max_error"] = max_error;
  doc["mean_forward_speed"] = mean_forward_speed;
  doc["max_tilt"] = max_tilt;
  doc["final_state"] = final_state;
  json j = json::object();
  for (const auto& s : joints) j[s.joint] = {{"max_abs", s.max_abs}, {"rms", s.rms}};
  doc["joints"] = j;
  return doc;
}

void write_log_header(std::ostream& os, const RobotModel& model) {
  os << "tick,t,state,torque_on,voltage,est_pitch,est_roll,est_yaw,true_pitch,true_roll,"
        "odom_x,odom_y,odom_heading";
  for (const auto& a : model.actuators()) os << ",cmd_" << a.name;
  for (const auto& a : model.actuators()) os << ",act_" << a.name;
  for (const auto& j : model.joints()) os << ",err_" << j.name;
  os << '\n';
}

void write_log_row(std::ostream& os, const TickRecord& r) {
  char buf[48];
  const auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.9f", v);
    os << buf;
  };
  std::snprintf(buf, sizeof buf, "%d,%.6f,", r.tick, r.t);
  os << buf << to_string(r.state) << ',' << r.torque_on;
  put(r.voltage);
  put(r.estimate.pitch);
  put(r.estimate.roll);
  put(r.estimate.yaw);
  put(r.truth.pitch);
  put(r.truth.roll);
  put(r.position.x());
  put(r.position.y());
  put(r.heading);
  for (int v : r.commanded) os << ',' << v;
  for (int v : r.actual) os << ',' << v;
  for (Eigen::Index i = 0; i < r.error.size(); ++i) put(r.error[i]);
  os << '\n';
}

std::string log_to_csv(const RobotModel& model, const std::vector<TickRecord>& log) {
  std::ostringstream os;
  write_log_header(os, model);
  for (const auto& r : log) write_log_row(os, r);
  return os.str();
}

// ---------------------------------------------------------------------------
// Runner

namespace {

/// Emulated robot: servo bus plus the trunk state.
class Plant {
 public:
  Plant(const RobotModel& model, const Scenario& sc, const SimConfig& cfg, const Vec& q0)
      : model_(model), sc_(sc), c_(model.coupling()) {
    bus::MotorParams motor = cfg.motor;
    motor.spec = model.servo_spec();
    const Vec a0 = serial_to_actuators(c_, q0);
    for (int i = 0; i < model.actuator_count(); ++i) {
      bus_.add(bus::ServoDevice(static_cast<std::uint8_t>(model.actuators()[i].id), motor, a0[i]));
    }
    const double h = sc.pendulum.com_height;
    inertia_ = sc.pendulum.inertia > 0.0 ? sc.pendulum.inertia : model.total_mass() * h * h;
  }

  bus::Bus& bus() { return bus_; }

  Quat tilt() const { return fused_to_quat({0.0, pitch_, roll_, 1}); }
  double pitch() const { return pitch_; }
  double roll() const { return roll_; }

  void impulse(FusedAxis axis, double j) {
    (axis == FusedAxis::pitch ? pitch_rate_ : roll_rate_) += j / inertia_;
  }

  /// Physics substep: loads from inverse dynamics of the current shaft
  /// state, then the servos and the trunk tilt advance by dt.
  void step(const Vec& qdd, Support support, double dt) {
    const int n = model_.actuator_count();
    Vec pos(n), vel(n);
    for (int i = 0; i < n; ++i) {
      pos[i] = bus_.devices()[i].position();
      vel[i] = bus_.devices()[i].velocity();
    }
    const Mat& pinv = c_.pseudo_inverse();
    const Vec q = pinv * (pos - c_.offsets());
    const Vec qd = pinv * vel;
    Vec3 g = kStandardGravity;
    if (sc_.mode == SimMode::kinematic_walk) g = tilt().conjugate() * kStandardGravity;
    const Vec tau = supported_inverse_dynamics(model_, DynamicsState{q, qd, qdd, g}, support);
    const Vec load = serial_torques_to_actuators(c_, tau);
    for (int i = 0; i < n; ++i) bus_.devices()[i].step(load[i], dt, sc_.bus_voltage);
    if (sc_.mode == SimMode::kinematic_walk) pendulum_step(q, support, dt);
  }

 private:
  void pendulum_step(const Vec& q, Support support, double dt) {
    const PoseTable poses = forward_kinematics(model_, q);
    const Vec3 com = center_of_mass(model_, poses);
    Vec3 centre = Vec3::Zero();
    const double w = support.left + support.right;
    if (w > 0.0) {
      centre = (support.left * sole_pose(model_, poses, Leg::left).translation() +
                support.right * sole_pose(model_, poses, Leg::right).translation()) / w;
    }
    const double h = sc_.pendulum.com_height;
    const double wn = 2.0 * kPi * sc_.pendulum.natural_frequency;
    const double z = sc_.pendulum.damping_ratio;
    // CoM ahead of the support leans forward; CoM to the right (-y) leans right.
    const double pitch_eq = std::atan((com.x() - centre.x()) / h);
    const double roll_eq = std::atan(-(com.y() - centre.y()) / h);
    pitch_rate_ += dt * (wn * wn * (pitch_eq - pitch_) - 2.0 * z * wn * pitch_rate_);
    roll_rate_ += dt * (wn * wn * (roll_eq - roll_) - 2.0 * z * wn * roll_rate_);
    pitch_ += dt * pitch_rate_;
    roll_ += dt * roll_rate_;
    const double lim = 1.2;
    pitch_ = std::clamp(pitch_, -lim, lim);
    roll_ = std::clamp(roll_, -lim, lim);
  }

  const RobotModel& model_;
  const Scenario& sc_;
  const CouplingMatrix& c_;
  bus::Bus bus_;
  double inertia_ = 1.0;
  double pitch_ = 0.0, roll_ = 0.0;
  double pitch_rate_ = 0.0, roll_rate_ = 0.0;
};

Support phase_support(const GaitState& s) {
  const double sw = s.params.swing_fraction;
  const bool l = leg_phase(s.phase, Leg::left) >= sw;
  const bool r = leg_phase(s.phase, Leg::right) >= sw;
  if (l && r) return Support::both();
  if (l) return {1.0, 0.0};
  if (r) return {0.0, 1.0};
  return Support::both();
}

bus::Bytes u16_bytes(int v) {
  return {static_cast<std::uint8_t>(v & 0xFF), static_cast<std::uint8_t>((v >> 8) & 0xFF)};
}

void write_all(bus::Bus& b, std::uint8_t addr, std::uint8_t value) {
  b.transact(bus::Packet{bus::kBroadcastId, bus::instr::write, {addr, value}});
}

/// Behavior wrapper: one command per control tick.
struct BehaviorOut {
  Vec q, qd, effort;
  Support support;
  bool saturated = false;
};

}  // namespace

RunResult run_scenario(const RobotModel& model, const Scenario& sc, const RunOptions& options) {
  sc.validate();
  SimConfig cfg = options.base_config;
  cfg.apply(sc.config);
  FFParams ff = cfg.ff;

  const int dof = model.dof();
  const int nact = model.actuator_count();
  const double dt = 1.0 / sc.control_rate;
  const int substeps = sc.physics_rate / sc.control_rate;
  const double dt_p = 1.0 / sc.physics_rate;
  const CouplingMatrix& c = model.coupling();

  // Behavior setup and initial pose.
  std::optional<GaitEngine> gait;
  std::optional<MotionPlayer> player;
  Vec q0 = Vec::Zero(dof);
  Vec hold_q = Vec::Zero(dof);
  if (sc.gait) {
    gait.emplace(model, cfg.gait, cfg.feedback);
    q0 = abstract_to_joints(model, stand_pose(cfg.gait)).q;
  } else if (!sc.motion.empty()) {
    const std::string dir = options.motions_dir.empty() ? "." : options.motions_dir;
    Motion m = load_motion_file(dir + "/" + sc.motion + ".motion");
    PlayerOptions po;
    po.rate = sc.control_rate;
    po.base_q = Vec::Zero(dof);
    const MotionSample first = interpolate(m, 0.0);
    for (std::size_t k = 0; k < m.joints.size(); ++k) {
      const int j = model.joint_index(m.joints[k]);
      if (j < 0) throw ScenarioError("motion " + sc.motion + ": unknown joint " + m.joints[k]);
      q0[j] = first.pos[static_cast<Eigen::Index>(k)];
    }
    player.emplace(model, std::move(m), po);
  } else {
    for (const auto& [name, v] : sc.hold->pose) {
      const int j = model.joint_index(name);
      if (j < 0) throw ScenarioError("hold.pose." + name + ": unknown joint");
      hold_q[j] = v;
    }
    q0 = hold_q;
  }

  Plant plant(model, sc, cfg, q0);
  bus::Bus& b = plant.bus();
  Supervisor sup(sc.fade_in);
  write_all(b, bus::reg::torque_enable, 1);
  sup.event(SupervisorEvent::fade_in);
  bool started = false;
  const auto auto_start = [&] {
    if (!started && sup.state() == SupervisorState::faded) {
      sup.event(SupervisorEvent::start_behavior);
      started = true;
    }
  };
  auto_start();

  std::vector<bus::BulkItem> items;
  for (const auto& a : model.actuators()) {
    items.push_back({static_cast<std::uint8_t>(a.id), bus::reg::present_position, 8});
  }
  const bus::Bytes bulk = bus::encode_packet(bus::make_bulk_read(items));

  ImuSynth imu(sc.imu, sc.seed);
  FilterState filter;
  filter.gains = cfg.orientation;
  FusedAngles est;
  double heading = 0.0;
  Eigen::Vector2d odom = Eigen::Vector2d::Zero();
  Quat truth_prev = Quat::Identity();
  Vec q_meas = q0;
  Vec q_prev_des = q0;
  Vec qd_prev = Vec::Zero(dof);
  std::array<Pose, 2> soles_prev;
  {
    const PoseTable poses = forward_kinematics(model, q0);
    soles_prev = {sole_pose(model, poses, Leg::left), sole_pose(model, poses, Leg::right)};
  }
  std::size_t next_disturbance = 0, next_event = 0;
  auto disturbances = sc.disturbances;
  std::stable_sort(disturbances.begin(), disturbances.end(),
                   [](const auto& a, const auto& x) { return a.t < x.t; });
  auto events = sc.events;
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& x) { return a.t < x.t; });

  RunResult result;
  Vec sq = Vec::Zero(dof), mx = Vec::Zero(dof);
  int window = 0;
  double max_tilt = 0.0;
  double run_time = 0.0;
  Support support = Support::both();
  BehaviorOut last;
  last.q = q0;
  last.qd = Vec::Zero(dof);
  last.effort = Vec::Zero(dof);

  const int n = sc.ticks();
  for (int k = 0; k < n; ++k) {
    const double t = k * dt;
    while (next_event < events.size() && events[next_event].t <= t + 1e-12) {
      const Transition tr = sup.event(events[next_event].event);
      if (tr.accepted && events[next_event].event == SupervisorEvent::emergency_relax) {
        write_all(b, bus::reg::torque_enable, 0);
      }
      if (tr.accepted && events[next_event].event == SupervisorEvent::fade_in) {
        write_all(b, bus::reg::torque_enable, 1);
      }
      ++next_event;
    }
    while (next_disturbance < disturbances.size() && disturbances[next_disturbance].t <= t + 1e-12) {
      plant.impulse(disturbances[next_disturbance].axis, disturbances[next_disturbance].impulse);
      ++next_disturbance;
    }

    // 1. Behavior.
    BehaviorOut out = last;
    if (sup.behavior_active()) {
      if (gait) {
        const JointTargets jt = gait->step(*sc.gait, dt, &est);
        out.q = jt.q;
        out.saturated = jt.saturated;
        out.effort = Vec::Ones(dof);
        support = sc.gait->walking ? phase_support(gait->state()) : Support::both();
      } else if (player) {
        const MotionCommand mc = player->step({est.pitch, est.roll});
        out.q = mc.q;
        out.effort = mc.effort;
        support = to_support(mc.support);
      } else {
        out.q = hold_q;
        out.effort = Vec::Constant(dof, sc.hold->effort);
        support = to_support(sc.hold->support);
      }
      run_time += dt;
    } else if (sup.state() != SupervisorState::relaxed) {
      out.effort = Vec::Ones(dof);
    }
    out.support = support;
    Vec qd = (out.q - q_prev_des) / dt;
    if (k == 0) qd.setZero();
    const Vec qdd = k == 0 ? Vec::Zero(dof) : Vec((qd - qd_prev) / dt);
    q_prev_des = out.q;
    qd_prev = qd;
    last = out;

    // 2. Feed-forward composition and 3. sync-write.
    const double scale = sup.effort_scale();
    std::vector<int> goal(nact);
    if (sup.torque_on()) {
      ComposeOptions co;
      co.support = support;
      co.feedforward = sc.ff_enabled;
      const ActuatorCommands cmd =
          compose_command(model, out.q, qd, qdd, out.effort * scale, sc.bus_voltage, ff, co);
      std::vector<bus::SyncTarget> gains, goals;
      for (int i = 0; i < nact; ++i) {
        const auto id = static_cast<std::uint8_t>(model.actuators()[i].id);
        gains.push_back({id, {static_cast<std::uint8_t>(cmd.p_gain[i])}});
        goals.push_back({id, u16_bytes(cmd.ticks[i])});
      }
      b.transact(bus::encode_packet(bus::make_sync_write(bus::reg::p_gain, 1, gains)));
      b.transact(bus::encode_packet(bus::make_sync_write(bus::reg::goal_position, 2, goals)));
      goal = cmd.ticks;
    } else {
      for (int i = 0; i < nact; ++i) {
        goal[i] = b.devices()[i].registers().u16(bus::reg::goal_position);
      }
    }

    // 4. Physics.
    for (int s = 0; s < substeps; ++s) plant.step(qdd, support, dt_p);
    const SupervisorState before = sup.state();
    sup.tick(dt);
    if (before == SupervisorState::fading_out && sup.state() == SupervisorState::relaxed) {
      write_all(b, bus::reg::torque_enable, 0);
    }
    auto_start();

    // 5. Bulk-read feedback and 6. serial fusion.
    const bus::Bytes reply = b.transact(bulk);
    const auto data = bus::parse_replies(reply);
    Vec act(nact);
    std::vector<int> actual(nact);
    double voltage = 0.0;
    for (int i = 0; i < nact; ++i) {
      const bus::Bytes& d = data.at(static_cast<std::uint8_t>(model.actuators()[i].id));
      actual[i] = d[0] | (d[1] << 8);
      act[i] = bus::ticks_to_rad(actual[i], model.servo_spec().encoder_resolution);
      voltage += d[6] * 0.1;
    }
    voltage /= nact;
    q_meas = actuators_to_serial(c, act).q;

    // Odometry: the support feet stay on the ground.
    const PoseTable poses = forward_kinematics(model, q_meas);
    const std::array<Pose, 2> soles = {sole_pose(model, poses, Leg::left),
                                       sole_pose(model, poses, Leg::right)};
    if (sc.mode == SimMode::kinematic_walk) {
      const double w[2] = {support.left, support.right};
      const double wsum = w[0] + w[1];
      Eigen::Vector2d delta = Eigen::Vector2d::Zero();
      double dyaw = 0.0;
      for (int l = 0; l < 2 && wsum > 0.0; ++l) {
        delta += w[l] / wsum * (soles_prev[l].translation() - soles[l].translation()).head<2>();
        const Mat3 rel = soles_prev[l].linear().transpose() * soles[l].linear();
        dyaw -= w[l] / wsum * std::atan2(rel(1, 0), rel(0, 0));
      }
      odom += Eigen::Rotation2Dd(heading) * delta;
      heading = wrap_angle(heading + dyaw);
    }
    soles_prev = soles;

    // 7. IMU and orientation filter.
    const Quat truth = Quat(Eigen::AngleAxisd(heading, Vec3::UnitZ())) * plant.tilt();
    filter = filter_update(filter, imu.sample(truth_prev, truth, dt));
    truth_prev = truth;
    est = quat_to_fused(filter.q);
    max_tilt = std::max(max_tilt, tilt_angle(truth));

    TickRecord r;
    r.tick = k;
    r.t = (k + 1) * dt;
    r.state = sup.state();
    r.commanded = std::move(goal);
    r.actual = std::move(actual);
    r.q_des = out.q;
    r.error = out.q - q_meas;
    r.estimate = est;
    r.truth = quat_to_fused(truth);
    r.voltage = voltage;
    for (const auto& d : b.devices()) r.torque_on += d.registers().u8(bus::reg::torque_enable);
    r.position = odom;
    r.heading = heading;

    if (sup.behavior_active() && r.t >= sc.metrics_from - 1e-12) {
      ++window;
      sq += r.error.cwiseAbs2();
      mx = mx.cwiseMax(r.error.cwiseAbs());
    }
    bool keep_going = true;
    if (options.on_tick) keep_going = options.on_tick(r);
    if (options.keep_log) result.log.push_back(std::move(r));
    result.metrics.ticks = k + 1;
    if (!keep_going) break;
  }

  Metrics& m = result.metrics;
  m.duration = m.ticks * dt;
  m.window_ticks = window;
  for (int j = 0; j < dof; ++j) {
    JointErrorStats s;
    s.joint = model.joints()[j].name;
    s.max_abs = mx[j];
    s.rms = window > 0 ? std::sqrt(sq[j] / window) : 0.0;
    m.max_error = std::max(m.max_error, s.max_abs);
    m.joints.push_back(s);
  }
  m.mean_forward_speed = run_time > 0.0 ? odom.x() / run_time : 0.0;
  m.max_tilt = max_tilt;
  m.final_state = to_string(sup.state());
  return result;
}

}  // namespace op2
