#pragma once

#include "op2/common.hpp"
#include "op2/pk_map.hpp"
#include "op2/servo_spec.hpp"

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace op2 {

struct LinkSpec {
  std::string name;
  std::string parent;  // empty for the root (trunk)
  Vec3 origin_xyz = Vec3::Zero();
  Quat origin_rot = Quat::Identity();
  double mass = 0.0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();  // about the CoM, link frame
};

enum class Chain { neck, left_arm, right_arm, left_leg, right_leg };

std::string_view to_string(Chain chain);
std::optional<Chain> chain_from_string(std::string_view name);

struct JointSpec {
  std::string name;
  std::string link;  // child link rotated by this joint
  Vec3 axis = Vec3::UnitZ();
  double min = 0.0;
  double max = 0.0;
  Chain chain = Chain::neck;
};

struct ActuatorSpec {
  int id = 0;
  std::string name;
};

/// Leg dimensions used by the analytic leg IK. The hip joint axes intersect
/// at (hip_offset_x, +-hip_offset_y, 0) in the trunk frame; the ankle axes
/// intersect `thigh + shank` below it; the sole centre is `foot_offset`
/// below the ankle.
struct LegGeometry {
  double thigh = 0.0;
  double shank = 0.0;
  double hip_offset_x = 0.0;
  double hip_offset_y = 0.0;
  double foot_offset = 0.0;

  double max_reach() const { return thigh + shank; }
};

enum class Leg { left, right };

/// Immutable robot description. Links are stored parents-first.
class RobotModel {
 public:
  RobotModel() = default;

  /// Checks structural invariants only (tree, unique names, unit axes,
  /// limits, coupling dimensions). Throws ModelError.
  RobotModel(std::string name, std::vector<LinkSpec> links,
             std::vector<JointSpec> joints, std::vector<ActuatorSpec> actuators,
             CouplingMatrix coupling, ServoSpec servo, LegGeometry legs);

  const std::string& name() const { return name_; }
  const std::vector<LinkSpec>& links() const { return links_; }
  const std::vector<JointSpec>& joints() const { return joints_; }
  const std::vector<ActuatorSpec>& actuators() const { return actuators_; }
  const CouplingMatrix& coupling() const { return coupling_; }
  const ServoSpec& servo_spec() const { return servo_; }
  const LegGeometry& leg_geometry() const { return legs_; }

  int dof() const { return static_cast<int>(joints_.size()); }
  int actuator_count() const { return static_cast<int>(actuators_.size()); }

  /// -1 when absent.
  int link_index(std::string_view name) const;
  int joint_index(std::string_view name) const;
  int actuator_index(std::string_view name) const;

  /// Parent link index per link (-1 for root).
  const std::vector<int>& link_parent() const { return link_parent_; }
  /// Serial joint driving each link, or -1 for links fixed to their parent.
  const std::vector<int>& link_joint() const { return link_joint_; }
  /// Link index rotated by each joint.
  const std::vector<int>& joint_link() const { return joint_link_; }

  /// Joint indices of a chain, in chain order.
  std::vector<int> chain_joints(Chain chain) const;

  /// Maximum root-to-leaf depth of the link tree (root alone = 0).
  int tree_depth() const;

  double total_mass() const;

  /// True for the 2-3-3-6-6 layout with 34 actuators and consistent leg
  /// geometry; required by the leg IK and gait.
  bool humanoid_layout() const;

 private:
  std::string name_;
  std::vector<LinkSpec> links_;
  std::vector<JointSpec> joints_;
  std::vector<ActuatorSpec> actuators_;
  CouplingMatrix coupling_;
  ServoSpec servo_;
  LegGeometry legs_;
  std::vector<int> link_parent_;
  std::vector<int> link_joint_;
  std::vector<int> joint_link_;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

/// Parse error carrying the 1-based line of the offending token, if known.
class ModelParseError : public ModelError {
 public:
  ModelParseError(const std::string& what, int line)
      : ModelError(what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Parses and validates a JSON model document.
RobotModel load_model(std::string_view document);
RobotModel load_model_file(const std::string& path);

/// Canonical JSON text of a model; equal models give identical bytes.
std::string serialize_model(const RobotModel& model);

// ---------------------------------------------------------------------------
// Kinematics

/// Link poses in the trunk frame, indexed like `model.links()`.
using PoseTable = std::vector<Pose>;

PoseTable forward_kinematics(const RobotModel& model, const Vec& q);

/// Sole-centre pose of a leg for a given pose table.
Pose sole_pose(const RobotModel& model, const PoseTable& poses, Leg leg);

/// Location of the hip joint centre in the trunk frame.
Vec3 hip_position(const RobotModel& model, Leg leg);

class WorkspaceError : public Error {
 public:
  WorkspaceError(const std::string& what, double distance, double max_reach)
      : Error(what), distance_(distance), max_reach_(max_reach) {}
  double distance() const { return distance_; }
  double max_reach() const { return max_reach_; }

 private:
  double distance_;
  double max_reach_;
};

using LegAngles = std::array<double, 6>;

struct LegIkResult {
  LegAngles q{};  // hip yaw, hip roll, hip pitch, knee, ankle pitch, ankle roll
  bool within_limits = true;
  std::vector<int> violated;  // indices into q outside the joint limits
};

/// Closed-form 6-DOF leg IK for a sole-centre target in the trunk frame.
/// Takes the non-negative knee branch. Throws WorkspaceError when the ankle
/// is out of reach.
LegIkResult leg_inverse_kinematics(const RobotModel& model,
                                   const Pose& sole_target, Leg leg);

}  // namespace op2
