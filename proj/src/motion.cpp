#include "op2/motion.hpp"

#include "op2/canonical_json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace op2 {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw MotionError(path + ": " + what);
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "must be finite");
  return v;
}

SupportFoot parse_support(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected \"left\", \"right\", \"both\" or \"none\"");
  const auto s = j.get<std::string>();
  if (s == "left") return SupportFoot::left;
  if (s == "right") return SupportFoot::right;
  if (s == "both") return SupportFoot::both;
  if (s == "none") return SupportFoot::none;
  fail(path, "unknown support \"" + s + "\"");
}

}  // namespace

const char* to_string(SupportFoot s) {
  switch (s) {
    case SupportFoot::left: return "left";
    case SupportFoot::right: return "right";
    case SupportFoot::none: return "none";
    default: return "both";
  }
}

Support to_support(SupportFoot s) {
  switch (s) {
    case SupportFoot::left: return {1.0, 0.0};
    case SupportFoot::right: return {0.0, 1.0};
    case SupportFoot::none: return Support::none();
    default: return Support::both();
  }
}

int Motion::joint(const std::string& name) const {
  const auto it = std::find(joints.begin(), joints.end(), name);
  return it == joints.end() ? -1 : static_cast<int>(it - joints.begin());
}

void Motion::validate() const {
  if (name.empty()) throw MotionError("name: must not be empty");
  if (joints.empty()) throw MotionError("joints: must not be empty");
  for (std::size_t a = 0; a < joints.size(); ++a) {
    for (std::size_t b = a + 1; b < joints.size(); ++b) {
      if (joints[a] == joints[b]) throw MotionError("joints: duplicate \"" + joints[a] + "\"");
    }
  }
  if (keyframes.empty()) throw MotionError("keyframes: at least one keyframe required");
  const auto n = static_cast<Eigen::Index>(joints.size());
  for (std::size_t k = 0; k < keyframes.size(); ++k) {
    const Keyframe& f = keyframes[k];
    const std::string at = "keyframes[" + std::to_string(k) + "]";
    if (!(f.t >= 0.0) || !std::isfinite(f.t)) throw MotionError(at + ".t: must be >= 0");
    if (k > 0 && !(f.t > keyframes[k - 1].t)) {
      throw MotionError(at + ".t: times must be strictly increasing");
    }
    if (f.pos.size() != n || f.vel.size() != n || f.eff.size() != n ||
        f.pid.size() != joints.size()) {
      throw MotionError(at + ": joint count differs from the joint list");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!std::isfinite(f.pos[j]) || !std::isfinite(f.vel[j])) {
        throw MotionError(at + ".pos." + joints[j] + ": must be finite");
      }
      if (!(f.eff[j] >= 0.0 && f.eff[j] <= 1.0)) {
        throw MotionError(at + ".eff." + joints[j] + ": effort must be in [0, 1]");
      }
      if (f.pid[j] && !pid_gains.count(joints[j])) {
        throw MotionError(at + ".pid: " + joints[j] + " has no pid_gains entry");
      }
    }
  }
  for (const auto& [j, g] : pid_gains) {
    if (joint(j) < 0) throw MotionError("pid_gains." + j + ": not in the joint list");
    if (!std::isfinite(g.p) || !std::isfinite(g.i) || !std::isfinite(g.d)) {
      throw MotionError("pid_gains." + j + ": gains must be finite");
    }
  }
}

Motion motion_from_json(const json& doc) {
  if (!doc.is_object()) throw MotionError("motion: expected an object");
  Motion m;
  if (!doc.contains("name") || !doc["name"].is_string()) fail("name", "expected a string");
  m.name = doc["name"].get<std::string>();
  if (!doc.contains("joints") || !doc["joints"].is_array()) fail("joints", "expected an array");
  for (std::size_t i = 0; i < doc["joints"].size(); ++i) {
    const json& j = doc["joints"][i];
    if (!j.is_string()) fail("joints[" + std::to_string(i) + "]", "expected a string");
    m.joints.push_back(j.get<std::string>());
  }
  const auto n = static_cast<Eigen::Index>(m.joints.size());

  if (doc.contains("pid_gains")) {
    const json& pg = doc["pid_gains"];
    if (!pg.is_object()) fail("pid_gains", "expected an object");
    for (auto it = pg.begin(); it != pg.end(); ++it) {
      const std::string at = "pid_gains." + it.key();
      PidGains g;
      const json& e = it.value();
      if (!e.is_object()) fail(at, "expected an object");
      const std::string axis = e.value("axis", std::string("pitch"));
      if (axis == "pitch") {
        g.axis = FusedAxis::pitch;
      } else if (axis == "roll") {
        g.axis = FusedAxis::roll;
      } else {
        fail(at + ".axis", "expected \"pitch\" or \"roll\"");
      }
      g.p = e.contains("p") ? number(e["p"], at + ".p") : 0.0;
      g.i = e.contains("i") ? number(e["i"], at + ".i") : 0.0;
      g.d = e.contains("d") ? number(e["d"], at + ".d") : 0.0;
      m.pid_gains[it.key()] = g;
    }
  }

  if (!doc.contains("keyframes") || !doc["keyframes"].is_array()) {
    fail("keyframes", "expected an array");
  }
  for (std::size_t k = 0; k < doc["keyframes"].size(); ++k) {
    const json& kf = doc["keyframes"][k];
    const std::string at = "keyframes[" + std::to_string(k) + "]";
    if (!kf.is_object()) fail(at, "expected an object");
    Keyframe f;
    if (!kf.contains("t")) fail(at + ".t", "missing");
    f.t = number(kf["t"], at + ".t");
    f.pos = Vec::Zero(n);
    f.vel = Vec::Zero(n);
    f.eff = Vec::Ones(n);
    f.pid.assign(m.joints.size(), false);
    const auto table = [&](const char* key, Vec& out, bool required) {
      if (!kf.contains(key)) {
        if (required) fail(at + "." + key, "missing");
        return;
      }
      const json& t = kf[key];
      if (!t.is_object()) fail(at + "." + key, "expected an object");
      for (auto it = t.begin(); it != t.end(); ++it) {
        const int j = m.joint(it.key());
        const std::string path = at + "." + key + "." + it.key();
        if (j < 0) fail(path, "joint not in the joint list");
        out[j] = number(it.value(), path);
      }
      if (required && t.size() != m.joints.size()) {
        fail(at + "." + key, "every listed joint needs a value");
      }
    };
    table("pos", f.pos, true);
    table("vel", f.vel, false);
    table("eff", f.eff, false);
    if (kf.contains("pid")) {
      if (!kf["pid"].is_array()) fail(at + ".pid", "expected an array of joint names");
      for (const json& e : kf["pid"]) {
        const int j = e.is_string() ? m.joint(e.get<std::string>()) : -1;
        if (j < 0) fail(at + ".pid", "unknown joint " + e.dump());
        f.pid[j] = true;
      }
    }
    if (kf.contains("support")) f.support = parse_support(kf["support"], at + ".support");
    m.keyframes.push_back(std::move(f));
  }
  m.validate();
  return m;
}

Motion load_motion(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw MotionError(std::string("motion parse error: ") + e.what());
  }
  return motion_from_json(doc);
}

Motion load_motion_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MotionError("cannot open motion file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_motion(ss.str());
}

json motion_to_json(const Motion& m) {
  json doc;
  doc["name"] = m.name;
  doc["joints"] = m.joints;
  json frames = json::array();
  for (const Keyframe& f : m.keyframes) {
    json kf;
    kf["t"] = f.t;
    json pos = json::object(), vel = json::object(), eff = json::object();
    json pid = json::array();
    for (std::size_t j = 0; j < m.joints.size(); ++j) {
      const auto i = static_cast<Eigen::Index>(j);
      pos[m.joints[j]] = f.pos[i];
      vel[m.joints[j]] = f.vel[i];
      eff[m.joints[j]] = f.eff[i];
      if (f.pid[j]) pid.push_back(m.joints[j]);
    }
    kf["pos"] = pos;
    kf["vel"] = vel;
    kf["eff"] = eff;
    kf["pid"] = pid;
    kf["support"] = to_string(f.support);
    frames.push_back(kf);
  }
  doc["keyframes"] = frames;
  json gains = json::object();
  for (const auto& [j, g] : m.pid_gains) {
    gains[j] = {{"axis", g.axis == FusedAxis::pitch ? "pitch" : "roll"},
                {"p", g.p}, {"i", g.i}, {"d", g.d}};
  }
  doc["pid_gains"] = gains;
  return doc;
}

std::string serialize_motion(const Motion& m) {
  return canonical_dump(motion_to_json(m), FloatFormat::fixed9);
}

// ---------------------------------------------------------------------------

std::size_t segment_at(const Motion& m, double t) {
  const auto& k = m.keyframes;
  if (k.size() < 2 || t <= k.front().t) return 0;
  const auto it = std::upper_bound(k.begin(), k.end(), t,
                                   [](double v, const Keyframe& f) { return v < f.t; });
  const auto idx = static_cast<std::size_t>(it - k.begin()) - 1;
  return std::min(idx, k.size() - 2);
}

MotionSample interpolate(const Motion& m, double t) {
  if (m.keyframes.empty()) throw MotionError("interpolate: motion has no keyframes");
  const auto& k = m.keyframes;
  if (k.size() == 1) return {k[0].pos, k[0].vel, k[0].eff};
  t = std::clamp(t, k.front().t, k.back().t);
  const std::size_t i = segment_at(m, t);
  const Keyframe& a = k[i];
  const Keyframe& b = k[i + 1];
  const double h = b.t - a.t;
  const double s = (t - a.t) / h;
  const double s2 = s * s, s3 = s2 * s;
  // Hermite basis and derivatives with respect to s.
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
  const double d00 = 6 * s2 - 6 * s, d10 = 3 * s2 - 4 * s + 1;
  const double d01 = -6 * s2 + 6 * s, d11 = 3 * s2 - 2 * s;
  MotionSample out;
  out.pos = h00 * a.pos + h01 * b.pos + h * (h10 * a.vel + h11 * b.vel);
  out.vel = (d00 * a.pos + d01 * b.pos) / h + d10 * a.vel + d11 * b.vel;
  out.eff = (1.0 - s) * a.eff + s * b.eff;
  return out;
}

// ---------------------------------------------------------------------------

EffortFade::EffortFade(Vec current, Vec target, double duration)
    : from_(std::move(current)), to_(std::move(target)), duration_(duration) {
  if (!(duration > 0.0)) throw MotionError("fade: duration must be positive");
  require_size(to_.size(), from_.size(), "fade target");
}

EffortFade::EffortFade(Vec current, double target, double duration)
    : EffortFade(current, Vec::Constant(current.size(), target), duration) {}

Vec EffortFade::at(double t) const {
  const double s = std::clamp(t / duration_, 0.0, 1.0);
  Vec e = s >= 1.0 ? to_ : Vec(from_ + s * (to_ - from_));
  return e.cwiseMax(0.0).cwiseMin(1.0);
}

// ---------------------------------------------------------------------------

MotionPlayer::MotionPlayer(const RobotModel& model, Motion motion, PlayerOptions options)
    : model_(&model), motion_(std::move(motion)), options_(std::move(options)) {
  motion_.validate();
  if (!(options_.rate > 0.0)) throw MotionError("player: rate must be positive");
  if (options_.base_q.size() == 0) options_.base_q = Vec::Zero(model.dof());
  require_size(options_.base_q.size(), model.dof(), "player base pose");
  for (const auto& name : motion_.joints) {
    const int j = model.joint_index(name);
    if (j < 0) throw MotionError("motion " + motion_.name + ": unknown joint " + name);
    model_index_.push_back(j);
  }
}

MotionCommand MotionPlayer::step(const Eigen::Vector2d& fused_error) {
  const double dt = 1.0 / options_.rate;
  const double duration = motion_.duration();
  t_ = std::min(static_cast<double>(tick_) * dt, duration);
  ++tick_;
  if (t_ >= duration) finished_ = true;

  if (tick_ > 1) {
    integral_ += fused_error * dt;
    const double alpha = 1.0 - std::exp(-2.0 * kPi * options_.pid_cutoff * dt);
    rate_ += alpha * ((fused_error - last_error_) / dt - rate_);
  }
  last_error_ = fused_error;

  const MotionSample s = interpolate(motion_, t_);
  const Keyframe& seg = motion_.keyframes[segment_at(motion_, t_)];
  MotionCommand cmd;
  cmd.t = t_;
  cmd.q = options_.base_q;
  cmd.qd = Vec::Zero(model_->dof());
  cmd.effort = Vec::Constant(model_->dof(), options_.base_effort);
  cmd.support = seg.support;
  for (std::size_t k = 0; k < model_index_.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const int j = model_index_[k];
    cmd.q[j] = s.pos[i];
    cmd.qd[j] = s.vel[i];
    cmd.effort[j] = s.eff[i];
    if (seg.pid[k]) {
      const PidGains& g = motion_.pid_gains.at(motion_.joints[k]);
      const int axis = g.axis == FusedAxis::pitch ? 0 : 1;
      cmd.q[j] += g.p * fused_error[axis] + g.i * integral_[axis] + g.d * rate_[axis];
    }
  }
  return cmd;
}

}  // namespace op2
