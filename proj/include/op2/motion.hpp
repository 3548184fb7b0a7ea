#pragma once

// Keyframe motions: cubic Hermite positions, linear efforts, optional PID on
// the fused orientation error for selected joints.

#include "op2/common.hpp"
#include "op2/dynamics.hpp"
#include "op2/robot_model.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace op2 {

class MotionError : public Error {
 public:
  using Error::Error;
};

/// none: the trunk rests on the ground (lying, sitting).
enum class SupportFoot { left, right, both, none };

const char* to_string(SupportFoot s);
Support to_support(SupportFoot s);

struct Keyframe {
  double t = 0.0;
  Vec pos;  // motion joint order
  Vec vel;
  Vec eff;  // [0, 1]
  std::vector<bool> pid;
  SupportFoot support = SupportFoot::both;
};

enum class FusedAxis { pitch, roll };

struct PidGains {
  FusedAxis axis = FusedAxis::pitch;
  double p = 0.0;
  double i = 0.0;
  double d = 0.0;
};

struct Motion {
  std::string name;
  std::vector<std::string> joints;
  std::vector<Keyframe> keyframes;
  std::map<std::string, PidGains> pid_gains;

  double duration() const { return keyframes.empty() ? 0.0 : keyframes.back().t; }
  int joint(const std::string& name) const;  // -1 when absent

  /// Throws MotionError naming the offending keyframe/field.
  void validate() const;
};

/// Parses a motion document; vel and eff default to 0 and 1.
Motion motion_from_json(const nlohmann::json& doc);
Motion load_motion(std::string_view text);
Motion load_motion_file(const std::string& path);

nlohmann::json motion_to_json(const Motion& m);
/// Canonical text: sorted keys, floats with 9 decimals.
std::string serialize_motion(const Motion& m);

struct MotionSample {
  Vec pos;
  Vec vel;
  Vec eff;
};

/// t is clamped to [0, duration].
MotionSample interpolate(const Motion& m, double t);

/// Index of the segment (keyframe at its start) containing t.
std::size_t segment_at(const Motion& m, double t);

/// Linear effort ramp clamped to [0, 1].
class EffortFade {
 public:
  EffortFade(Vec current, Vec target, double duration);
  EffortFade(Vec current, double target, double duration);

  Vec at(double t) const;
  double duration() const { return duration_; }

 private:
  Vec from_;
  Vec to_;
  double duration_;
};

struct MotionCommand {
  double t = 0.0;
  Vec q;       // model serial order
  Vec qd;
  Vec effort;
  SupportFoot support = SupportFoot::both;
};

struct PlayerOptions {
  double rate = 100.0;         // Hz
  double pid_cutoff = 10.0;    // Hz, derivative low-pass
  double base_effort = 1.0;    // joints the motion does not list
  Vec base_q;                  // empty = zero pose
};

/// Single-owner iterator emitting one command per control tick.
class MotionPlayer {
 public:
  MotionPlayer(const RobotModel& model, Motion motion, PlayerOptions options = {});

  bool finished() const { return finished_; }
  double time() const { return t_; }
  const Motion& motion() const { return motion_; }

  /// `fused_error` = (pitch, roll) estimate minus reference.
  MotionCommand step(const Eigen::Vector2d& fused_error);

 private:
  const RobotModel* model_;
  Motion motion_;
  PlayerOptions options_;
  std::vector<int> model_index_;
  std::size_t tick_ = 0;
  double t_ = 0.0;
  bool finished_ = false;
  Eigen::Vector2d integral_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d last_error_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d rate_ = Eigen::Vector2d::Zero();
};

}  // namespace op2
