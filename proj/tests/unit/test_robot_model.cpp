#include "op2/robot_model.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace op2;

namespace {

const char* kMinimal = R"({
  "links": [
    {"name": "trunk", "parent": null,
     "origin": {"xyz": [0, 0, 0], "quat": [1, 0, 0, 0]},
     "mass": 1.0, "com": [0, 0, 0], "inertia": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]},
    {"name": "arm", "parent": "trunk",
     "origin": {"xyz": [0, 0, 0.1], "quat": [1, 0, 0, 0]},
     "mass": 0.5, "com": [0.1, 0, 0], "inertia": [[0.01, 0, 0], [0, 0.01, 0], [0, 0, 0.01]]}
  ],
  "joints": [
    {"name": "j1", "link": "arm", "axis": [0, 0, 1], "limits": [-1, 1], "chain": "neck"}
  ],
  "actuators": [{"id": 1, "name": "a1"}],
  "coupling": [[1, "j1", 1, 1.0, 0.0]],
  "servo_spec": {"encoder_resolution": 4096, "stall_torque": 10.0,
                 "no_load_speed_rpm": 55.0, "nominal_voltage": 14.8},
  "leg_geometry": {"thigh": 0.3, "shank": 0.3, "hip_offset_x": 0,
                   "hip_offset_y": 0.05, "foot_offset": 0.03}
})";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

Pose leg_sole(const RobotModel& m, const LegAngles& a, Leg leg) {
  Vec q = Vec::Zero(m.dof());
  const auto idx = m.chain_joints(leg == Leg::left ? Chain::left_leg : Chain::right_leg);
  for (int k = 0; k < 6; ++k) q[idx[k]] = a[k];
  return sole_pose(m, forward_kinematics(m, q), leg);
}

}  // namespace

TEST_CASE("minimal document loads") {
  const RobotModel m = load_model(kMinimal);
  CHECK(m.dof() == 1);
  CHECK(m.actuator_count() == 1);
  CHECK(m.tree_depth() == 1);
  CHECK_FALSE(m.humanoid_layout());
}

TEST_CASE("shipped model") {
  const auto& m = test::shipped_model();
  CHECK(m.dof() == 20);
  CHECK(m.actuator_count() == 34);
  CHECK(m.humanoid_layout());
  CHECK(m.total_mass() == doctest::Approx(17.5));
  CHECK(m.chain_joints(Chain::left_leg).size() == 6);
  CHECK(m.chain_joints(Chain::neck).size() == 2);
  // Standing height: head top 0.745 m above the hip plane, sole 0.60 m below.
  const auto& g = m.leg_geometry();
  CHECK(g.thigh + g.shank + g.foot_offset + 0.745 == doctest::Approx(1.345));
}

TEST_CASE("load errors") {
  SUBCASE("duplicate joint name") {
    const std::string doc = replace(
        kMinimal, R"("joints": [)",
        R"("joints": [{"name": "j1", "link": "trunk", "axis": [1, 0, 0], "limits": [-1, 1], "chain": "neck"},)");
    try {
      load_model(doc);
      FAIL("expected ModelParseError");
    } catch (const ModelParseError& e) {
      CHECK(std::string(e.what()).find("duplicate joint name 'j1'") != std::string::npos);
    }
  }
  SUBCASE("syntax error reports line") {
    const std::string doc = replace(kMinimal, R"("actuators": [)", R"("actuators": [,)");
    try {
      load_model(doc);
      FAIL("expected ModelParseError");
    } catch (const ModelParseError& e) {
      CHECK(e.line() == 13);
    }
  }
  SUBCASE("field path in schema errors") {
    const std::string doc = replace(kMinimal, R"("mass": 0.5)", R"("mass": "heavy")");
    CHECK_THROWS_WITH_AS(load_model(doc), doctest::Contains("links[1].mass"), ModelParseError);
  }
  SUBCASE("non-positive mass") {
    const std::string doc = replace(kMinimal, R"("mass": 0.5)", R"("mass": 0.0)");
    CHECK_THROWS_WITH_AS(load_model(doc), doctest::Contains("links[1].mass"), ModelParseError);
  }
  SUBCASE("indefinite inertia") {
    const std::string doc = replace(kMinimal, "[[0.01, 0, 0]", "[[-0.01, 0, 0]");
    CHECK_THROWS_WITH_AS(load_model(doc), doctest::Contains("semi-definite"), ModelParseError);
  }
  SUBCASE("non-unit axis") {
    const std::string doc = replace(kMinimal, R"("axis": [0, 0, 1])", R"("axis": [0, 0, 1.001])");
    CHECK_THROWS_WITH_AS(load_model(doc), doctest::Contains("joints[0].axis"), ModelParseError);
  }
  SUBCASE("limits out of order") {
    const std::string doc = replace(kMinimal, R"("limits": [-1, 1])", R"("limits": [1, -1])");
    CHECK_THROWS_AS(load_model(doc), ModelParseError);
  }
  SUBCASE("unknown parent") {
    const std::string doc = replace(kMinimal, R"("parent": "trunk")", R"("parent": "pelvis")");
    CHECK_THROWS_WITH_AS(load_model(doc), doctest::Contains("pelvis"), ModelError);
  }
  SUBCASE("root not trunk") {
    std::string doc = replace(kMinimal, R"("name": "trunk")", R"("name": "base")");
    doc = replace(doc, R"("parent": "trunk")", R"("parent": "base")");
    CHECK_THROWS_WITH_AS(load_model(doc), doctest::Contains("trunk"), ModelError);
  }
  SUBCASE("coupling refers to unknown joint") {
    const std::string doc = replace(kMinimal, R"([1, "j1", 1)", R"([1, "j9", 1)");
    CHECK_THROWS_WITH_AS(load_model(doc), doctest::Contains("coupling[0][1]"), ModelParseError);
  }
  SUBCASE("missing top-level key") {
    const std::string doc = replace(kMinimal, R"("leg_geometry")", R"("legs")");
    CHECK_THROWS_WITH_AS(load_model(doc), doctest::Contains("leg_geometry"), ModelParseError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_model_file("/nonexistent/model.json"), ModelError);
  }
}

TEST_CASE("load is deterministic and serialization round trips") {
  const std::string a = serialize_model(load_model_file(test::data_path("nimbro_op2.model")));
  const std::string b = serialize_model(load_model_file(test::data_path("nimbro_op2.model")));
  CHECK(a == b);
  CHECK(serialize_model(load_model(a)) == a);
}

TEST_CASE("forward kinematics at zero pose") {
  const auto& m = test::shipped_model();
  const auto poses = forward_kinematics(m, Vec::Zero(20));
  CHECK(poses[0].isApprox(Pose::Identity(), 0.0));
  const auto& g = m.leg_geometry();
  const double depth = -(g.thigh + g.shank + g.foot_offset);
  const Pose l = sole_pose(m, poses, Leg::left);
  const Pose r = sole_pose(m, poses, Leg::right);
  CHECK((l.translation() - Vec3(g.hip_offset_x, g.hip_offset_y, depth)).norm() < 1e-15);
  CHECK((r.translation() - Vec3(g.hip_offset_x, -g.hip_offset_y, depth)).norm() < 1e-15);
  CHECK_THROWS_AS(forward_kinematics(m, Vec::Zero(19)), DimensionError);
}

TEST_CASE("forward kinematics matches two-link planar formula") {
  const auto& m = test::shipped_model();
  const auto& g = m.leg_geometry();
  for (double knee : {0.3, kPi / 2, 2.0}) {
    const Pose s = leg_sole(m, {0, 0, 0, knee, 0, 0}, Leg::left);
    // Ankle from planar trigonometry, sole offset rotated with the shank.
    const double ax = -g.shank * std::sin(knee);
    const double az = -(g.thigh + g.shank * std::cos(knee));
    const double sx = ax - g.foot_offset * std::sin(knee);
    const double sz = az - g.foot_offset * std::cos(knee);
    CHECK(std::abs(s.translation().x() - (g.hip_offset_x + sx)) < 1e-12);
    CHECK(std::abs(s.translation().z() - sz) < 1e-12);
  }
}

TEST_CASE("forward kinematics is rigid") {
  const auto& m = test::shipped_model();
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int n = 0; n < 200; ++n) {
    const auto poses = forward_kinematics(m, test::random_in_limits(m, rng));
    for (size_t i = 1; i < m.links().size(); ++i) {
      const int p = m.link_parent()[i];
      const double d = (poses[i].translation() - poses[p].translation()).norm();
      worst = std::max(worst, std::abs(d - m.links()[i].origin_xyz.norm()));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("leg IK examples") {
  const auto& m = test::shipped_model();
  const auto& g = m.leg_geometry();
  SUBCASE("full extension, flat") {
    for (Leg leg : {Leg::left, Leg::right}) {
      const auto res = leg_inverse_kinematics(m, leg_sole(m, {}, leg), leg);
      for (double a : res.q) CHECK(std::abs(a) < 1e-7);
      CHECK(res.within_limits);
    }
  }
  SUBCASE("straight down at reduced depth") {
    const double d = 0.5;  // hip to ankle
    Pose target = Pose::Identity();
    target.translation() = hip_position(m, Leg::right) - Vec3(0, 0, d + g.foot_offset);
    const auto res = leg_inverse_kinematics(m, target, Leg::right);
    const double knee = std::acos((d * d - g.thigh * g.thigh - g.shank * g.shank) /
                                  (2 * g.thigh * g.shank));
    CHECK(res.q[3] == doctest::Approx(knee).epsilon(1e-12));
    CHECK(res.q[2] == doctest::Approx(-knee / 2).epsilon(1e-12));
    CHECK(res.q[4] == doctest::Approx(-knee / 2).epsilon(1e-12));
    const Pose back = leg_sole(m, res.q, Leg::right);
    CHECK((back.translation() - target.translation()).norm() < 1e-9);
  }
  SUBCASE("out of reach") {
    Pose target = Pose::Identity();
    target.translation() = hip_position(m, Leg::left) - Vec3(0, 0, 0.7);
    try {
      leg_inverse_kinematics(m, target, Leg::left);
      FAIL("expected WorkspaceError");
    } catch (const WorkspaceError& e) {
      CHECK(e.max_reach() == doctest::Approx(g.thigh + g.shank));
      CHECK(e.distance() == doctest::Approx(0.66));
    }
  }
  SUBCASE("limit violation flagged") {
    Pose target = Pose::Identity();
    target.translation() = hip_position(m, Leg::left) - Vec3(0, 0, 0.5);
    target.linear() = Eigen::AngleAxisd(1.5, Vec3::UnitZ()).toRotationMatrix();
    const auto res = leg_inverse_kinematics(m, target, Leg::left);
    CHECK_FALSE(res.within_limits);
    REQUIRE(res.violated.size() == 1);
    CHECK(res.violated[0] == 0);
  }
}

TEST_CASE("IK of FK reproduces the sole pose") {
  const auto& m = test::shipped_model();
  std::mt19937_64 rng(5);
  double pos_err = 0.0;
  double rot_err = 0.0;
  double joint_err = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const Leg leg = n % 2 ? Leg::left : Leg::right;
    const Vec q = test::random_in_limits(m, rng);
    const auto idx = m.chain_joints(leg == Leg::left ? Chain::left_leg : Chain::right_leg);
    LegAngles a;
    for (int k = 0; k < 6; ++k) a[k] = q[idx[k]];
    const Pose target = leg_sole(m, a, leg);
    const auto res = leg_inverse_kinematics(m, target, leg);
    const Pose back = leg_sole(m, res.q, leg);
    pos_err = std::max(pos_err, (back.translation() - target.translation()).norm());
    rot_err = std::max(rot_err, Quat(back.linear()).angularDistance(Quat(target.linear())));
    // Unique branch: knee bent forward and foot below the hip in foot axes.
    const double phi = std::atan2(m.leg_geometry().shank * std::sin(a[3]),
                                  m.leg_geometry().thigh + m.leg_geometry().shank * std::cos(a[3]));
    if (a[3] > 0.05 && std::abs(a[3] + a[4] - phi) < kPi / 2 - 0.05) {
      for (int k = 0; k < 6; ++k) joint_err = std::max(joint_err, std::abs(res.q[k] - a[k]));
    }
  }
  CHECK(pos_err < 1e-9);
  CHECK(rot_err < 1e-9);
  CHECK(joint_err < 1e-7);
}
