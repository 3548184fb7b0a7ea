#include "op2/gait.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <sstream>

using namespace op2;

namespace {

double max_abs(const Vec& v) { return v.cwiseAbs().maxCoeff(); }

AbstractPose pose_at(double u_left, double u_right, const GaitCommand& cmd,
                     const GaitParams& p) {
  AbstractPose pose;
  leg_waveform(u_left, Leg::left, cmd, p, pose.leg(Leg::left), pose.arm(Leg::left));
  leg_waveform(u_right, Leg::right, cmd, p, pose.leg(Leg::right), pose.arm(Leg::right));
  return pose;
}

GaitParams model_params(const RobotModel& m) {
  GaitParams p;
  p.leg_length = m.leg_geometry().thigh + m.leg_geometry().shank;
  return p;
}

}  // namespace

TEST_CASE("phase advance") {
  GaitState s;
  s.params.step_frequency = 2.0;
  s.phase = -kPi / 2;
  CHECK(advance_phase(s, 0.25).phase == doctest::Approx(kPi / 2).epsilon(1e-15));
  s.phase = kPi - 0.1;
  const double next = advance_phase(s, 0.05).phase;
  CHECK(next < 0.0);
  CHECK(next == doctest::Approx(-kPi + 2 * kPi * 0.1 - 0.1));
  CHECK(GaitParams{}.step_frequency == 2.4);
  CHECK(1.0 / GaitParams{}.step_frequency == doctest::Approx(0.4167).epsilon(1e-3));
  CHECK_THROWS_AS(advance_phase(s, 0.0), GaitError);
  CHECK_THROWS_AS(advance_phase(s, 0.26), GaitError);
  CHECK_THROWS_AS(advance_phase(s, -0.01), GaitError);

  CHECK(leg_phase(-kPi, Leg::left) == 0.0);
  CHECK(leg_phase(-kPi, Leg::right) == 0.5);
  CHECK(leg_phase(0.0, Leg::left) == doctest::Approx(0.5));
  CHECK(leg_phase(0.0, Leg::right) == doctest::Approx(0.0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> mu(-kPi, kPi);
  for (int i = 0; i < 1000; ++i) {
    const double m = mu(rng);
    for (Leg l : {Leg::left, Leg::right}) {
      const double u = leg_phase(m, l);
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
    }
  }
}

TEST_CASE("parameter and command validation") {
  GaitParams p;
  CHECK_NOTHROW(p.validate());
  p.step_frequency = 0.0;
  CHECK_THROWS_AS(p.validate(), GaitError);
  p = GaitParams{};
  p.swing_fraction = 0.6;
  CHECK_THROWS_AS(p.validate(), GaitError);
  CHECK_THROWS_AS(check_command({0.4, 0.4, 0.0, true}, GaitParams{}), GaitError);
  CHECK_THROWS_AS(check_command({0.0, 0.0, 1.5, true}, GaitParams{}), GaitError);
  CHECK_NOTHROW(check_command({0.4, 0.0, 0.5, true}, GaitParams{}));
  FeedbackGains g;
  g.hip_roll.p = -1;
  CHECK_THROWS_AS(g.validate(), GaitError);
}

TEST_CASE("zero command is left/right symmetric") {
  const GaitParams p;
  const GaitCommand zero;
  for (int i = 0; i < 200; ++i) {
    const double u = i / 200.0;
    LegTargets l, r;
    ArmTargets al, ar;
    leg_waveform(u, Leg::left, zero, p, l, al);
    leg_waveform(u, Leg::right, zero, p, r, ar);
    CHECK(l.extension == r.extension);
    CHECK(l.pitch == r.pitch);
    CHECK(l.roll == -r.roll);
    CHECK(l.yaw == -r.yaw);
    CHECK(al.pitch == ar.pitch);
    CHECK(al.roll == -ar.roll);
  }
  // In double support both legs are at nominal extension.
  GaitState s;
  for (double ul : {0.46, 0.48, 0.96, 0.98}) {
    s.phase = 2 * kPi * ul - kPi;
    const auto pose = abstract_pose(s, zero);
    CHECK(pose.leg(Leg::left).extension == doctest::Approx(p.leg_extension));
    CHECK(pose.leg(Leg::right).extension == doctest::Approx(p.leg_extension));
  }
  // Hip sway moves both feet the same way, away from the swing side.
  s.phase = 2 * kPi * (p.swing_fraction / 2) - kPi;
  const auto mid = abstract_pose(s, zero);
  CHECK(leg_displacement(mid.leg(Leg::left), p.leg_length).y() > 0.0);
  CHECK(leg_displacement(mid.leg(Leg::right), p.leg_length).y() > 0.0);
  CHECK(mid.leg(Leg::left).extension < mid.leg(Leg::right).extension);
}

TEST_CASE("mirror symmetry is exact") {
  const auto& m = test::shipped_model();
  const GaitParams p = model_params(m);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> un(0.0, 1.0), v(-0.25, 0.25), w(-0.8, 0.8);
  for (int i = 0; i < 500; ++i) {
    const GaitCommand cmd{v(rng), v(rng), w(rng), true};
    const GaitCommand mirrored{cmd.vx, -cmd.vy, -cmd.omega, true};
    const double u = un(rng);
    const double u2 = u + 0.5 >= 1.0 ? u - 0.5 : u + 0.5;
    // Left leg at phase u under the mirrored command against the right leg
    // at the same phase under the original command.
    const Vec a = abstract_to_joints(m, pose_at(u, u2, mirrored, p)).q;
    const Vec b = abstract_to_joints(m, pose_at(u2, u, cmd, p)).q;
    REQUIRE(a == mirror_joints(m, b));
  }
  // Through the phase variable the half-cycle shift rounds, so only closely.
  GaitState s;
  s.params = p;
  const GaitCommand cmd{0.2, 0.05, 0.3, true};
  const GaitCommand mirrored{0.2, -0.05, -0.3, true};
  for (int i = 0; i < 100; ++i) {
    s.phase = -kPi + 2 * kPi * i / 100.0;
    GaitState shifted = s;
    shifted.phase = wrap_angle(s.phase + kPi);
    const Vec a = abstract_to_joints(m, abstract_pose(s, mirrored)).q;
    const Vec b = abstract_to_joints(m, abstract_pose(shifted, cmd)).q;
    CHECK(max_abs(a - mirror_joints(m, b)) < 1e-9);
  }
  const Vec q = test::random_in_limits(m, rng);
  CHECK(mirror_joints(m, mirror_joints(m, q)) == q);
}

TEST_CASE("periodicity") {
  const auto& m = test::shipped_model();
  GaitEngine engine(m);
  const double f = engine.state().params.step_frequency;
  const int per_cycle = 50;
  const double dt = 1.0 / (f * per_cycle);
  const GaitCommand cmd{0.3, 0.05, 0.2, true};
  std::vector<Vec> first;
  double worst = 0.0;
  for (int k = 0; k < per_cycle * 10; ++k) {
    const Vec q = engine.step(cmd, dt).q;
    if (k < per_cycle) {
      first.push_back(q);
    } else {
      worst = std::max(worst, max_abs(q - first[k % per_cycle]));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("mean sagittal displacement per step") {
  GaitParams p;
  for (double vx : {0.1, 0.25, 0.4}) {
    const GaitCommand cmd{vx, 0.0, 0.0, true};
    for (double u : {0.45, 0.46, 0.475, 0.49}) {
      LegTargets a, b;
      ArmTargets arm;
      leg_waveform(u, Leg::left, cmd, p, a, arm);
      leg_waveform(u + 0.5, Leg::left, cmd, p, b, arm);
      const double moved = leg_displacement(a, p.leg_length).x() -
                           leg_displacement(b, p.leg_length).x();
      CHECK(std::abs(moved - vx / (2 * p.step_frequency)) <= 1e-6);
    }
    // Arms counter-swing: the arm goes back when its foot is forward.
    LegTargets l;
    ArmTargets arm;
    leg_waveform(0.45, Leg::left, cmd, p, l, arm);
    CHECK(leg_displacement(l, p.leg_length).x() > 0.0);
    CHECK(arm.pitch > 0.0);
  }
}

TEST_CASE("abstract to joints") {
  const auto& m = test::shipped_model();
  const double l1 = m.leg_geometry().thigh, l2 = m.leg_geometry().shank;
  AbstractPose pose;
  for (auto& a : pose.arms) a = ArmTargets{};

  SUBCASE("full extension") {
    const auto r = abstract_to_joints(m, pose);
    CHECK_FALSE(r.saturated);
    CHECK(max_abs(r.q) < 1e-7);
  }
  SUBCASE("cosine rule") {
    for (auto& l : pose.legs) l.extension = 0.9;
    const auto r = abstract_to_joints(m, pose);
    const double d = 0.9 * (l1 + l2);
    const double inner = std::acos((l1 * l1 + l2 * l2 - d * d) / (2 * l1 * l2));
    for (const char* side : {"left_", "right_"}) {
      const std::string s(side);
      CHECK(r.q[m.joint_index(s + "knee_pitch")] == doctest::Approx(kPi - inner).epsilon(1e-12));
      // Equal segments: thigh and shank lean by half the knee angle.
      CHECK(r.q[m.joint_index(s + "hip_pitch")] == doctest::Approx(-(kPi - inner) / 2).epsilon(1e-9));
      CHECK(r.q[m.joint_index(s + "ankle_pitch")] == doctest::Approx(-(kPi - inner) / 2).epsilon(1e-9));
    }
    CHECK_FALSE(r.saturated);
  }
  SUBCASE("zero extension saturates") {
    for (auto& l : pose.legs) l.extension = 0.0;
    const auto r = abstract_to_joints(m, pose);
    CHECK(r.saturated);
    const double knee_max = m.joints()[m.joint_index("left_knee_pitch")].max;
    CHECK(r.q[m.joint_index("left_knee_pitch")] == doctest::Approx(knee_max).epsilon(1e-9));
  }
  SUBCASE("leg angles move the ankle") {
    LegTargets& l = pose.leg(Leg::left);
    l.extension = 0.85;
    l.pitch = -0.2;
    l.roll = 0.1;
    l.yaw = 0.15;
    const auto r = abstract_to_joints(m, pose);
    const auto poses = forward_kinematics(m, r.q);
    const Pose sole = sole_pose(m, poses, Leg::left);
    const Vec3 ankle = sole * Vec3(0, 0, m.leg_geometry().foot_offset);
    const Vec3 hip = hip_position(m, Leg::left);
    CHECK((ankle - hip).norm() == doctest::Approx(0.85 * (l1 + l2)).epsilon(1e-9));
    const Eigen::Vector2d dxy = leg_displacement(l, l1 + l2);
    CHECK((ankle - hip).head<2>().isApprox(dxy, 1e-9));
    CHECK(r.q[m.joint_index("left_hip_yaw")] == doctest::Approx(0.15).epsilon(1e-9));
    // Foot stays level: sole z axis points up.
    CHECK((sole.linear().col(2) - Vec3::UnitZ()).norm() < 1e-9);
  }
}

TEST_CASE("feedback") {
  const GaitParams p;
  GaitState s;
  s.phase = 0.3;
  const AbstractPose base = abstract_pose(s, {0.2, 0.0, 0.0, true});
  const FusedAngles level{};

  SUBCASE("zero deviation") {
    FeedbackState st;
    CHECK(apply_feedback(base, level, level, FeedbackGains{}, st, 0.01) == base);
  }
  SUBCASE("zero gains") {
    FeedbackState st;
    FusedAngles tilted{0.0, 0.2, -0.1, 1};
    for (int i = 0; i < 5; ++i) {
      CHECK(apply_feedback(base, tilted, level, FeedbackGains::zero(), st, 0.01) == base);
      tilted.pitch += 0.05;
    }
  }
  SUBCASE("restoring signs") {
    FeedbackState st;
    const FusedAngles forward{0.0, 0.1, 0.0, 1};
    const auto out = apply_feedback(base, forward, level, FeedbackGains{}, st, 0.01);
    for (Leg leg : {Leg::left, Leg::right}) {
      // Arms back, feet forward, toes down.
      CHECK(out.arm(leg).pitch > base.arm(leg).pitch);
      CHECK(leg_displacement(out.leg(leg), p.leg_length).x() >
            leg_displacement(base.leg(leg), p.leg_length).x());
      CHECK(out.leg(leg).foot_pitch > 0.0);
    }
    // Leaning right (+roll): feet step right, right leg pushes longer.
    FeedbackState st2;
    const FusedAngles right{0.0, 0.0, 0.1, 1};
    const auto r = apply_feedback(base, right, level, FeedbackGains{}, st2, 0.01);
    for (Leg leg : {Leg::left, Leg::right}) {
      CHECK(leg_displacement(r.leg(leg), p.leg_length).y() <
            leg_displacement(base.leg(leg), p.leg_length).y());
    }
    CHECK(r.leg(Leg::right).extension > base.leg(Leg::right).extension);
    CHECK(r.leg(Leg::left).extension < base.leg(Leg::left).extension);
  }
  SUBCASE("derivative filter") {
    FeedbackGains g = FeedbackGains::zero();
    g.hip_pitch.d = 1.0;
    FeedbackState st;
    FusedAngles est{};
    AbstractPose out;
    for (int i = 0; i < 200; ++i) {
      est.pitch = 0.5 * i * 0.01;  // 0.5 rad/s ramp
      out = apply_feedback(base, est, level, g, st, 0.01);
    }
    CHECK(st.rate[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(out.leg(Leg::left).pitch == doctest::Approx(base.leg(Leg::left).pitch - 0.5).epsilon(1e-9));
  }
}

TEST_CASE("engine") {
  const auto& m = test::shipped_model();
  GaitEngine engine(m);
  const GaitCommand stand{0.0, 0.0, 0.0, false};
  const Vec q0 = engine.step(stand, 0.01).q;
  CHECK(engine.state().phase == -kPi);
  CHECK(engine.targets() == stand_pose(engine.state().params));
  CHECK(engine.step(stand, 0.01).q == q0);
  CHECK(q0[m.joint_index("left_knee_pitch")] > 0.0);

  engine.step({0.3, 0.0, 0.0, true}, 0.01);
  CHECK(engine.state().phase > -kPi);
  CHECK_THROWS_AS(engine.step({0.6, 0.0, 0.0, true}, 0.01), GaitError);

  std::ostringstream csv;
  write_targets_csv_header(csv);
  write_targets_csv_row(csv, 0.01, engine.targets());
  std::istringstream in(csv.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(std::count(header.begin(), header.end(), ',') == 18);
  CHECK(std::count(row.begin(), row.end(), ',') == 18);
}
