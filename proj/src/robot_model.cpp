#include "op2/robot_model.hpp"

#include "op2/canonical_json.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace op2 {

using nlohmann::json;

std::string_view to_string(Chain chain) {
  switch (chain) {
    case Chain::neck: return "neck";
    case Chain::left_arm: return "left_arm";
    case Chain::right_arm: return "right_arm";
    case Chain::left_leg: return "left_leg";
    case Chain::right_leg: return "right_leg";
  }
  return "?";
}

std::optional<Chain> chain_from_string(std::string_view name) {
  for (Chain c : {Chain::neck, Chain::left_arm, Chain::right_arm,
                  Chain::left_leg, Chain::right_leg}) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// RobotModel

RobotModel::RobotModel(std::string name, std::vector<LinkSpec> links,
                       std::vector<JointSpec> joints,
                       std::vector<ActuatorSpec> actuators,
                       CouplingMatrix coupling, ServoSpec servo,
                       LegGeometry legs)
    : name_(std::move(name)),
      joints_(std::move(joints)),
      actuators_(std::move(actuators)),
      coupling_(std::move(coupling)),
      servo_(servo),
      legs_(legs) {
  // Links: unique names, single root called trunk, parents-first order.
  std::map<std::string, size_t> by_name;
  for (size_t i = 0; i < links.size(); ++i) {
    if (!by_name.emplace(links[i].name, i).second) {
      throw ModelError("duplicate link name '" + links[i].name + "'");
    }
  }
  std::vector<size_t> order;
  std::vector<bool> placed(links.size(), false);
  for (size_t i = 0; i < links.size(); ++i) {
    if (links[i].parent.empty()) {
      if (links[i].name != "trunk") {
        throw ModelError("root link must be 'trunk', found '" +
                         links[i].name + "'");
      }
      if (!order.empty()) throw ModelError("link tree has more than one root");
      order.push_back(i);
      placed[i] = true;
    } else if (!by_name.count(links[i].parent)) {
      throw ModelError("link '" + links[i].name + "' has unknown parent '" +
                       links[i].parent + "'");
    }
  }
  if (order.empty()) throw ModelError("link tree has no root 'trunk'");
  // Breadth-first from the root keeps file order among siblings.
  for (size_t head = 0; head < order.size(); ++head) {
    const std::string& parent = links[order[head]].name;
    for (size_t i = 0; i < links.size(); ++i) {
      if (!placed[i] && links[i].parent == parent) {
        placed[i] = true;
        order.push_back(i);
      }
    }
  }
  if (order.size() != links.size()) {
    throw ModelError("link graph contains a cycle");
  }
  links_.reserve(links.size());
  for (size_t i : order) links_.push_back(std::move(links[i]));
  link_parent_.assign(links_.size(), -1);
  link_joint_.assign(links_.size(), -1);
  for (size_t i = 1; i < links_.size(); ++i) {
    link_parent_[i] = link_index(links_[i].parent);
  }

  std::set<std::string> joint_names;
  joint_link_.assign(joints_.size(), -1);
  for (size_t j = 0; j < joints_.size(); ++j) {
    const JointSpec& js = joints_[j];
    if (!joint_names.insert(js.name).second) {
      throw ModelError("duplicate joint name '" + js.name + "'");
    }
    const int li = link_index(js.link);
    if (li < 0) {
      throw ModelError("joint '" + js.name + "' drives unknown link '" +
                       js.link + "'");
    }
    if (li == 0) throw ModelError("joint '" + js.name + "' drives the root");
    if (link_joint_[li] >= 0) {
      throw ModelError("link '" + js.link + "' is driven by two joints");
    }
    if (std::abs(js.axis.norm() - 1.0) > 1e-12) {
      throw ModelError("joint '" + js.name + "' axis is not unit length");
    }
    if (!(js.min < js.max)) {
      throw ModelError("joint '" + js.name + "' has min >= max");
    }
    link_joint_[li] = static_cast<int>(j);
    joint_link_[j] = li;
  }

  std::set<int> ids;
  std::set<std::string> act_names;
  for (const auto& a : actuators_) {
    if (a.id < 0 || a.id > 253) {
      throw ModelError("actuator '" + a.name + "' id out of range 0-253");
    }
    if (!ids.insert(a.id).second) {
      throw ModelError("duplicate actuator id " + std::to_string(a.id));
    }
    if (!act_names.insert(a.name).second) {
      throw ModelError("duplicate actuator name '" + a.name + "'");
    }
  }
  if (coupling_.actuator_count() != actuator_count() ||
      coupling_.serial_count() != dof()) {
    throw ModelError("coupling matrix is " +
                     std::to_string(coupling_.actuator_count()) + "x" +
                     std::to_string(coupling_.serial_count()) +
                     ", expected " + std::to_string(actuator_count()) + "x" +
                     std::to_string(dof()));
  }
  if (servo_.encoder_resolution <= 0 || !(servo_.stall_torque > 0) ||
      !(servo_.no_load_speed_rpm > 0) || !(servo_.nominal_voltage > 0)) {
    throw ModelError("servo_spec values must be positive");
  }
}

int RobotModel::link_index(std::string_view name) const {
  for (size_t i = 0; i < links_.size(); ++i) {
    if (links_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int RobotModel::joint_index(std::string_view name) const {
  for (size_t i = 0; i < joints_.size(); ++i) {
    if (joints_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int RobotModel::actuator_index(std::string_view name) const {
  for (size_t i = 0; i < actuators_.size(); ++i) {
    if (actuators_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> RobotModel::chain_joints(Chain chain) const {
  std::vector<int> out;
  for (size_t j = 0; j < joints_.size(); ++j) {
    if (joints_[j].chain == chain) out.push_back(static_cast<int>(j));
  }
  return out;
}

int RobotModel::tree_depth() const {
  std::vector<int> depth(links_.size(), 0);
  int best = 0;
  for (size_t i = 1; i < links_.size(); ++i) {
    depth[i] = depth[link_parent_[i]] + 1;
    best = std::max(best, depth[i]);
  }
  return best;
}

double RobotModel::total_mass() const {
  double m = 0.0;
  for (const auto& l : links_) m += l.mass;
  return m;
}

bool RobotModel::humanoid_layout() const {
  if (dof() != 20 || actuator_count() != 34) return false;
  const std::pair<Chain, size_t> counts[] = {
      {Chain::neck, 2},     {Chain::left_arm, 3},  {Chain::right_arm, 3},
      {Chain::left_leg, 6}, {Chain::right_leg, 6},
  };
  for (auto [chain, n] : counts) {
    if (chain_joints(chain).size() != n) return false;
  }
  const Vec3 axes[6] = {Vec3::UnitZ(), Vec3::UnitX(), Vec3::UnitY(),
                        Vec3::UnitY(), Vec3::UnitY(), Vec3::UnitX()};
  for (Leg leg : {Leg::left, Leg::right}) {
    const auto idx =
        chain_joints(leg == Leg::left ? Chain::left_leg : Chain::right_leg);
    const double side = leg == Leg::left ? 1.0 : -1.0;
    const Vec3 offsets[6] = {
        Vec3(legs_.hip_offset_x, side * legs_.hip_offset_y, 0.0),
        Vec3::Zero(),
        Vec3::Zero(),
        Vec3(0, 0, -legs_.thigh),
        Vec3(0, 0, -legs_.shank),
        Vec3::Zero()};
    for (int k = 0; k < 6; ++k) {
      const JointSpec& js = joints_[idx[k]];
      const LinkSpec& link = links_[joint_link_[idx[k]]];
      if (!js.axis.isApprox(axes[k], 1e-12)) return false;
      if ((link.origin_xyz - offsets[k]).norm() > 1e-12) return false;
      if (link.origin_rot.angularDistance(Quat::Identity()) > 1e-12) {
        return false;
      }
      const std::string expected_parent =
          k == 0 ? "trunk" : joints_[idx[k - 1]].link;
      if (link.parent != expected_parent) return false;
    }
  }
  return legs_.thigh > 0 && legs_.shank > 0 && legs_.foot_offset >= 0;
}

// ---------------------------------------------------------------------------
// JSON loading

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& msg) {
  throw ModelParseError(path + ": " + msg, 0);
}

const json& member(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) field_error(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) field_error(path, std::string("missing key '") + key + "'");
  return *it;
}

double number(const json& v, const std::string& path) {
  if (!v.is_number()) field_error(path, "expected a number");
  return v.get<double>();
}

std::string text(const json& v, const std::string& path) {
  if (!v.is_string()) field_error(path, "expected a string");
  return v.get<std::string>();
}

Vec3 vec3(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 3) field_error(path, "expected a 3-vector");
  return Vec3(number(v[0], path + "[0]"), number(v[1], path + "[1]"),
              number(v[2], path + "[2]"));
}

const json& array(const json& v, const std::string& path) {
  if (!v.is_array()) field_error(path, "expected an array");
  return v;
}

struct CouplingTuple {
  int actuator_id;
  std::string joint;
  int sign;
  double gear;
  double offset;
};

}  // namespace

RobotModel load_model(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    const size_t byte = std::min<size_t>(e.byte, document.size());
    const int line =
        1 + static_cast<int>(std::count(document.begin(),
                                        document.begin() + byte, '\n'));
    throw ModelParseError("line " + std::to_string(line) + ": " + e.what(),
                          line);
  }
  if (!doc.is_object()) field_error("$", "expected a JSON object");

  std::vector<LinkSpec> links;
  {
    const json& arr = array(member(doc, "links", "$"), "links");
    std::set<std::string> names;
    for (size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "links[" + std::to_string(i) + "]";
      const json& l = arr[i];
      LinkSpec spec;
      spec.name = text(member(l, "name", p), p + ".name");
      if (!names.insert(spec.name).second) {
        field_error(p + ".name", "duplicate link name '" + spec.name + "'");
      }
      const json& parent = member(l, "parent", p);
      spec.parent = parent.is_null() ? "" : text(parent, p + ".parent");
      const json& origin = member(l, "origin", p);
      spec.origin_xyz = vec3(member(origin, "xyz", p + ".origin"),
                             p + ".origin.xyz");
      const json& qv = member(origin, "quat", p + ".origin");
      if (!qv.is_array() || qv.size() != 4) {
        field_error(p + ".origin.quat", "expected [w, x, y, z]");
      }
      Quat q(number(qv[0], p + ".origin.quat"), number(qv[1], p + ".origin.quat"),
             number(qv[2], p + ".origin.quat"), number(qv[3], p + ".origin.quat"));
      if (std::abs(q.norm() - 1.0) > 1e-9) {
        field_error(p + ".origin.quat", "quaternion is not unit length");
      }
      spec.origin_rot = q.normalized();
      spec.mass = number(member(l, "mass", p), p + ".mass");
      spec.com = vec3(member(l, "com", p), p + ".com");
      const json& inertia = member(l, "inertia", p);
      if (!inertia.is_array() || inertia.size() != 3) {
        field_error(p + ".inertia", "expected a 3x3 matrix");
      }
      for (int r = 0; r < 3; ++r) {
        spec.inertia.row(r) = vec3(inertia[r], p + ".inertia[" +
                                                   std::to_string(r) + "]")
                                  .transpose();
      }
      if (!(spec.mass > 0.0)) field_error(p + ".mass", "must be positive");
      if ((spec.inertia - spec.inertia.transpose()).cwiseAbs().maxCoeff() >
          1e-12) {
        field_error(p + ".inertia", "not symmetric");
      }
      Eigen::SelfAdjointEigenSolver<Mat3> es(spec.inertia);
      if (es.eigenvalues().minCoeff() < -1e-12) {
        field_error(p + ".inertia", "not positive semi-definite");
      }
      links.push_back(std::move(spec));
    }
  }

  std::vector<JointSpec> joints;
  std::map<std::string, int> joint_ids;
  {
    const json& arr = array(member(doc, "joints", "$"), "joints");
    for (size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "joints[" + std::to_string(i) + "]";
      const json& j = arr[i];
      JointSpec spec;
      spec.name = text(member(j, "name", p), p + ".name");
      if (!joint_ids.emplace(spec.name, static_cast<int>(i)).second) {
        field_error(p + ".name", "duplicate joint name '" + spec.name + "'");
      }
      spec.link = text(member(j, "link", p), p + ".link");
      spec.axis = vec3(member(j, "axis", p), p + ".axis");
      if (std::abs(spec.axis.norm() - 1.0) > 1e-12) {
        field_error(p + ".axis", "must be a unit vector");
      }
      const json& lim = member(j, "limits", p);
      if (!lim.is_array() || lim.size() != 2) {
        field_error(p + ".limits", "expected [min, max]");
      }
      spec.min = number(lim[0], p + ".limits[0]");
      spec.max = number(lim[1], p + ".limits[1]");
      if (!(spec.min < spec.max)) field_error(p + ".limits", "min must be < max");
      const std::string chain = text(member(j, "chain", p), p + ".chain");
      auto c = chain_from_string(chain);
      if (!c) field_error(p + ".chain", "unknown chain '" + chain + "'");
      spec.chain = *c;
      joints.push_back(std::move(spec));
    }
  }

  std::vector<ActuatorSpec> actuators;
  std::map<int, int> actuator_row;
  {
    const json& arr = array(member(doc, "actuators", "$"), "actuators");
    for (size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "actuators[" + std::to_string(i) + "]";
      const json& idv = member(arr[i], "id", p);
      if (!idv.is_number_integer()) field_error(p + ".id", "expected an integer");
      ActuatorSpec a{idv.get<int>(), text(member(arr[i], "name", p), p + ".name")};
      if (!actuator_row.emplace(a.id, static_cast<int>(i)).second) {
        field_error(p + ".id", "duplicate actuator id " + std::to_string(a.id));
      }
      actuators.push_back(std::move(a));
    }
  }

  const auto n_act = static_cast<Eigen::Index>(actuators.size());
  const auto n_dof = static_cast<Eigen::Index>(joints.size());
  Mat signs = Mat::Zero(n_act, n_dof);
  Vec gears = Vec::Constant(n_act, std::numeric_limits<double>::quiet_NaN());
  Vec offsets = Vec::Constant(n_act, std::numeric_limits<double>::quiet_NaN());
  {
    const json& arr = array(member(doc, "coupling", "$"), "coupling");
    for (size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "coupling[" + std::to_string(i) + "]";
      const json& t = arr[i];
      if (!t.is_array() || t.size() != 5) {
        field_error(p, "expected [actuator_id, joint, sign, gear, offset]");
      }
      if (!t[0].is_number_integer()) field_error(p + "[0]", "expected an actuator id");
      const int id = t[0].get<int>();
      auto row = actuator_row.find(id);
      if (row == actuator_row.end()) {
        field_error(p + "[0]", "unknown actuator id " + std::to_string(id));
      }
      const std::string joint = text(t[1], p + "[1]");
      auto col = joint_ids.find(joint);
      if (col == joint_ids.end()) {
        field_error(p + "[1]", "unknown joint '" + joint + "'");
      }
      const double sign = number(t[2], p + "[2]");
      if (sign != 1.0 && sign != -1.0) field_error(p + "[2]", "sign must be +1 or -1");
      const double gear = number(t[3], p + "[3]");
      const double offset = number(t[4], p + "[4]");
      const int r = row->second;
      if (signs(r, col->second) != 0.0) {
        field_error(p, "duplicate entry for actuator " + std::to_string(id) +
                           " and joint '" + joint + "'");
      }
      if ((!std::isnan(gears[r]) && gears[r] != gear) ||
          (!std::isnan(offsets[r]) && offsets[r] != offset)) {
        field_error(p, "gear/offset disagree with an earlier entry of actuator " +
                           std::to_string(id));
      }
      signs(r, col->second) = sign;
      gears[r] = gear;
      offsets[r] = offset;
    }
    for (Eigen::Index r = 0; r < n_act; ++r) {
      if (std::isnan(gears[r])) {
        field_error("coupling", "actuator " + std::to_string(actuators[r].id) +
                                    " has no coupling entry");
      }
    }
  }

  ServoSpec servo;
  {
    const json& s = member(doc, "servo_spec", "$");
    const json& res = member(s, "encoder_resolution", "servo_spec");
    if (!res.is_number_integer()) {
      field_error("servo_spec.encoder_resolution", "expected an integer");
    }
    servo.encoder_resolution = res.get<int>();
    servo.stall_torque =
        number(member(s, "stall_torque", "servo_spec"), "servo_spec.stall_torque");
    servo.no_load_speed_rpm = number(member(s, "no_load_speed_rpm", "servo_spec"),
                                     "servo_spec.no_load_speed_rpm");
    servo.nominal_voltage = number(member(s, "nominal_voltage", "servo_spec"),
                                   "servo_spec.nominal_voltage");
  }

  LegGeometry legs;
  {
    const json& g = member(doc, "leg_geometry", "$");
    const std::string p = "leg_geometry";
    legs.thigh = number(member(g, "thigh", p), p + ".thigh");
    legs.shank = number(member(g, "shank", p), p + ".shank");
    legs.hip_offset_x = number(member(g, "hip_offset_x", p), p + ".hip_offset_x");
    legs.hip_offset_y = number(member(g, "hip_offset_y", p), p + ".hip_offset_y");
    legs.foot_offset = number(member(g, "foot_offset", p), p + ".foot_offset");
  }

  std::string name = "robot";
  if (auto it = doc.find("name"); it != doc.end()) name = text(*it, "name");

  try {
    return RobotModel(std::move(name), std::move(links), std::move(joints),
                      std::move(actuators),
                      CouplingMatrix(std::move(signs), std::move(gears),
                                     std::move(offsets)),
                      servo, legs);
  } catch (const ModelError&) {
    throw;
  } catch (const Error& e) {
    throw ModelError(e.what());
  }
}

RobotModel load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_model(ss.str());
}

std::string serialize_model(const RobotModel& model) {
  json doc;
  doc["name"] = model.name();
  json links = json::array();
  for (const auto& l : model.links()) {
    json inertia = json::array();
    for (int r = 0; r < 3; ++r) {
      inertia.push_back({l.inertia(r, 0), l.inertia(r, 1), l.inertia(r, 2)});
    }
    links.push_back({
        {"name", l.name},
        {"parent", l.parent.empty() ? json(nullptr) : json(l.parent)},
        {"origin",
         {{"xyz", {l.origin_xyz.x(), l.origin_xyz.y(), l.origin_xyz.z()}},
          {"quat",
           {l.origin_rot.w(), l.origin_rot.x(), l.origin_rot.y(),
            l.origin_rot.z()}}}},
        {"mass", l.mass},
        {"com", {l.com.x(), l.com.y(), l.com.z()}},
        {"inertia", inertia},
    });
  }
  doc["links"] = links;
  json joints = json::array();
  for (const auto& j : model.joints()) {
    joints.push_back({{"name", j.name},
                      {"link", j.link},
                      {"axis", {j.axis.x(), j.axis.y(), j.axis.z()}},
                      {"limits", {j.min, j.max}},
                      {"chain", std::string(to_string(j.chain))}});
  }
  doc["joints"] = joints;
  json actuators = json::array();
  json coupling = json::array();
  const CouplingMatrix& c = model.coupling();
  for (int i = 0; i < model.actuator_count(); ++i) {
    const auto& a = model.actuators()[i];
    actuators.push_back({{"id", a.id}, {"name", a.name}});
    for (int j = 0; j < model.dof(); ++j) {
      if (c.signs()(i, j) != 0.0) {
        coupling.push_back({a.id, model.joints()[j].name,
                            static_cast<int>(c.signs()(i, j)), c.gears()[i],
                            c.offsets()[i]});
      }
    }
  }
  doc["actuators"] = actuators;
  doc["coupling"] = coupling;
  const ServoSpec& s = model.servo_spec();
  doc["servo_spec"] = {{"encoder_resolution", s.encoder_resolution},
                       {"stall_torque", s.stall_torque},
                       {"no_load_speed_rpm", s.no_load_speed_rpm},
                       {"nominal_voltage", s.nominal_voltage}};
  const LegGeometry& g = model.leg_geometry();
  doc["leg_geometry"] = {{"thigh", g.thigh},
                         {"shank", g.shank},
                         {"hip_offset_x", g.hip_offset_x},
                         {"hip_offset_y", g.hip_offset_y},
                         {"foot_offset", g.foot_offset}};
  return canonical_dump(doc, FloatFormat::roundtrip);
}

// ---------------------------------------------------------------------------
// Kinematics

PoseTable forward_kinematics(const RobotModel& model, const Vec& q) {
  require_size(q.size(), model.dof(), "joint positions");
  const auto& links = model.links();
  PoseTable poses(links.size(), Pose::Identity());
  for (size_t i = 1; i < links.size(); ++i) {
    const LinkSpec& l = links[i];
    Pose local = Pose::Identity();
    local.translate(l.origin_xyz);
    local.rotate(l.origin_rot);
    const int j = model.link_joint()[i];
    if (j >= 0) {
      local.rotate(Eigen::AngleAxisd(q[j], model.joints()[j].axis));
    }
    poses[i] = poses[model.link_parent()[i]] * local;
  }
  return poses;
}

namespace {

int ankle_roll_link(const RobotModel& model, Leg leg) {
  const auto idx = model.chain_joints(leg == Leg::left ? Chain::left_leg
                                                       : Chain::right_leg);
  if (idx.size() != 6) throw ModelError("model has no 6-DOF leg chains");
  return model.joint_link()[idx.back()];
}

}  // namespace

Pose sole_pose(const RobotModel& model, const PoseTable& poses, Leg leg) {
  Pose p = poses.at(ankle_roll_link(model, leg));
  p.translate(Vec3(0, 0, -model.leg_geometry().foot_offset));
  return p;
}

Vec3 hip_position(const RobotModel& model, Leg leg) {
  const LegGeometry& g = model.leg_geometry();
  return Vec3(g.hip_offset_x, (leg == Leg::left ? 1.0 : -1.0) * g.hip_offset_y,
              0.0);
}

LegIkResult leg_inverse_kinematics(const RobotModel& model,
                                   const Pose& sole_target, Leg leg) {
  const LegGeometry& g = model.leg_geometry();
  const Mat3 R = sole_target.linear();
  const Vec3 ankle = sole_target.translation() + R * Vec3(0, 0, g.foot_offset);
  // Hip centre seen from the ankle, in foot coordinates.
  const Vec3 r = R.transpose() * (hip_position(model, leg) - ankle);
  const double d = r.norm();
  const double l1 = g.thigh;
  const double l2 = g.shank;
  constexpr double kSlack = 1e-12;
  if (d > l1 + l2 + kSlack || d < std::abs(l1 - l2) - kSlack) {
    std::ostringstream msg;
    msg << "leg target out of workspace: hip-ankle distance " << d
        << " m, reach [" << std::abs(l1 - l2) << ", " << l1 + l2 << "] m";
    throw WorkspaceError(msg.str(), d, l1 + l2);
  }

  LegIkResult out;
  auto& q = out.q;
  const double c = std::clamp((d * d - l1 * l1 - l2 * l2) / (2 * l1 * l2), -1.0, 1.0);
  q[3] = std::acos(c);
  q[5] = std::atan2(r.y(), r.z());
  const double wz = std::hypot(r.y(), r.z());
  const double shank_dir = std::atan2(l2 * std::sin(q[3]), l1 + l2 * std::cos(q[3]));
  q[4] = shank_dir - q[3] - std::atan2(r.x(), wz);

  // Remaining hip rotation Rz(yaw) Rx(roll) Ry(pitch).
  const Mat3 hip = R * Eigen::AngleAxisd(-q[5], Vec3::UnitX()).toRotationMatrix() *
                   Eigen::AngleAxisd(-(q[3] + q[4]), Vec3::UnitY()).toRotationMatrix();
  q[0] = std::atan2(-hip(0, 1), hip(1, 1));
  q[1] = std::atan2(hip(2, 1), std::hypot(hip(0, 1), hip(1, 1)));
  q[2] = std::atan2(-hip(2, 0), hip(2, 2));

  const auto idx = model.chain_joints(leg == Leg::left ? Chain::left_leg
                                                       : Chain::right_leg);
  for (int k = 0; k < 6 && k < static_cast<int>(idx.size()); ++k) {
    const JointSpec& js = model.joints()[idx[k]];
    if (q[k] < js.min || q[k] > js.max) {
      out.within_limits = false;
      out.violated.push_back(k);
    }
  }
  return out;
}

}  // namespace op2
