#include "op2/dynamics.hpp"
#include "test_util.hpp"

#include <Eigen/Eigenvalues>
#include <doctest.h>

using namespace op2;

namespace {

constexpr double g = 9.81;
const Vec3 kDownY(0, -g, 0);

const std::vector<test::ChainLink> kTwoLink = {
    {0.5, 2.0, 0.2, 0.03},
    {0.4, 1.5, 0.25, 0.02},
};

// Closed-form Lagrangian dynamics of the planar two-link arm.
Vec lagrange_two_link(const Vec& q, const Vec& qd, const Vec& qdd) {
  const auto& a = kTwoLink[0];
  const auto& b = kTwoLink[1];
  const double l1 = a.length, c1 = a.com, c2 = b.com;
  const double m1 = a.mass, m2 = b.mass, i1 = a.izz, i2 = b.izz;
  const double cos2 = std::cos(q[1]), sin2 = std::sin(q[1]);
  const double m11 = m1 * c1 * c1 + i1 + m2 * (l1 * l1 + c2 * c2 + 2 * l1 * c2 * cos2) + i2;
  const double m12 = m2 * (c2 * c2 + l1 * c2 * cos2) + i2;
  const double m22 = m2 * c2 * c2 + i2;
  const double h = m2 * l1 * c2 * sin2;
  const double g1 = (m1 * c1 + m2 * l1) * g * std::cos(q[0]) + m2 * c2 * g * std::cos(q[0] + q[1]);
  const double g2 = m2 * c2 * g * std::cos(q[0] + q[1]);
  Vec tau(2);
  tau[0] = m11 * qdd[0] + m12 * qdd[1] - h * (2 * qd[0] * qd[1] + qd[1] * qd[1]) + g1;
  tau[1] = m12 * qdd[0] + m22 * qdd[1] + h * qd[0] * qd[0] + g2;
  return tau;
}

}  // namespace

TEST_CASE("no motion, no gravity, no torque") {
  const auto& m = test::shipped_model();
  std::mt19937_64 rng(1);
  const Vec q = test::random_in_limits(m, rng);
  CHECK(inverse_dynamics(m, DynamicsState::at_rest(q, Vec3::Zero())).isZero(1e-15));
  CHECK_THROWS_AS(inverse_dynamics(m, DynamicsState::at_rest(Vec::Zero(3))), DimensionError);
}

TEST_CASE("horizontal pendulum holding torque") {
  const double mass = 1.3, l = 0.4;
  const RobotModel p = test::planar_chain({{l, mass, l, 0.0}});
  const Vec tau = inverse_dynamics(p, DynamicsState::at_rest(Vec::Zero(1), kDownY));
  CHECK(tau[0] == doctest::Approx(mass * g * l).epsilon(1e-14));
}

TEST_CASE("two-link chain matches the Lagrangian") {
  const RobotModel m = test::planar_chain(kTwoLink);
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Vec q = test::random_vec(2, rng, kPi);
    const Vec qd = test::random_vec(2, rng, 3.0);
    const Vec qdd = test::random_vec(2, rng, 10.0);
    const Vec tau = inverse_dynamics(m, {q, qd, qdd, kDownY});
    const Vec ref = lagrange_two_link(q, qd, qdd);
    worst = std::max(worst, (tau - ref).norm() / ref.norm());
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("mass matrix") {
  SUBCASE("single link") {
    const double mass = 2.0, l = 0.3, izz = 0.01;
    const RobotModel p = test::planar_chain({{l, mass, l, izz}});
    CHECK(mass_matrix(p, Vec::Constant(1, 0.7))(0, 0) == doctest::Approx(mass * l * l + izz).epsilon(1e-14));
  }
  SUBCASE("shipped model symmetric positive definite") {
    const auto& m = test::shipped_model();
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
      const Mat mm = mass_matrix(m, test::random_in_limits(m, rng));
      // Raw columns, before symmetrization.
      Mat raw(20, 20);
      DynamicsState s{test::random_in_limits(m, rng), Vec::Zero(20), Vec::Zero(20), Vec3::Zero()};
      for (int j = 0; j < 20; ++j) {
        s.qdd.setZero();
        s.qdd[j] = 1;
        raw.col(j) = inverse_dynamics(m, s);
      }
      CHECK((raw - raw.transpose()).cwiseAbs().maxCoeff() < 1e-9);
      Eigen::SelfAdjointEigenSolver<Mat> es(mm);
      CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
  }
  SUBCASE("zero-mass model") {
    std::vector<LinkSpec> links(2);
    links[0].name = "trunk";
    links[1].name = "l";
    links[1].parent = "trunk";
    links[1].origin_xyz = Vec3(0.1, 0, 0);
    const RobotModel z("massless", links, {{"j", "l", Vec3::UnitY(), -1, 1, Chain::neck}},
                       {{1, "a"}}, CouplingMatrix(Mat::Ones(1, 1), Vec::Ones(1), Vec::Zero(1)),
                       ServoSpec{}, LegGeometry{});
    CHECK(mass_matrix(z, Vec::Constant(1, 0.2)).isZero(0.0));
    CHECK_THROWS_AS(forward_dynamics_fixed_base(z, Vec::Zero(1), Vec::Zero(1), Vec::Zero(1)),
                    SingularMassMatrix);
  }
}

TEST_CASE("forward dynamics") {
  const auto& m = test::shipped_model();
  std::mt19937_64 rng(4);
  double fd_id = 0.0;
  double id_fd = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Vec q = test::random_in_limits(m, rng);
    const Vec qd = test::random_vec(20, rng, 2.0);
    const Vec qdd = test::random_vec(20, rng, 5.0);
    const Vec tau = inverse_dynamics(m, {q, qd, qdd});
    fd_id = std::max(fd_id, (forward_dynamics_fixed_base(m, q, qd, tau) - qdd).cwiseAbs().maxCoeff());
    const Vec tau2 = test::random_vec(20, rng, 5.0);
    const Vec acc = forward_dynamics_fixed_base(m, q, qd, tau2);
    id_fd = std::max(id_fd, (inverse_dynamics(m, {q, qd, acc}) - tau2).cwiseAbs().maxCoeff());
  }
  CHECK(fd_id <= 1e-6);
  CHECK(id_fd <= 1e-6);

  SUBCASE("pendulum falls") {
    const double mass = 1.0, l = 0.5, izz = 0.02;
    const RobotModel p = test::planar_chain({{l, mass, l, izz}});
    const Vec acc = forward_dynamics_fixed_base(p, Vec::Zero(1), Vec::Zero(1), Vec::Zero(1), kDownY);
    CHECK(acc[0] < 0.0);
    CHECK(acc[0] == doctest::Approx(-mass * g * l / (mass * l * l + izz)).epsilon(1e-12));
  }
  SUBCASE("nothing applied") {
    const Vec acc = forward_dynamics_fixed_base(m, Vec::Zero(20), Vec::Zero(20), Vec::Zero(20), Vec3::Zero());
    CHECK(acc.isZero(1e-15));
  }
}

TEST_CASE("gravity torques are the potential energy gradient") {
  const auto& m = test::shipped_model();
  std::mt19937_64 rng(5);
  const double h = 1e-6;
  double worst = 0.0;
  for (int n = 0; n < 10; ++n) {
    const Vec q = test::random_in_limits(m, rng);
    const Vec tau = inverse_dynamics(m, DynamicsState::at_rest(q));
    for (int j = 0; j < 20; ++j) {
      Vec qp = q, qm = q;
      qp[j] += h;
      qm[j] -= h;
      const double grad = (potential_energy(m, qp) - potential_energy(m, qm)) / (2 * h);
      worst = std::max(worst, std::abs(grad - tau[j]));
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("energy is conserved on the two-link chain") {
  // Symplectic Euler in canonical momenta p = M(q) qd:
  //   p+ = p + dt * pdot(q, qd+),  qd+ = M(q)^-1 p+,  q+ = q + dt * qd+
  // with pdot = M qdd + dM/dt qd and qdd from forward dynamics. The p update
  // is implicit and solved by fixed-point iteration.
  const RobotModel m = test::planar_chain(kTwoLink);
  const double low = -(kTwoLink[0].mass * kTwoLink[0].com +
                       kTwoLink[1].mass * (kTwoLink[0].length + kTwoLink[1].com)) * g;
  auto energy = [&](const Vec& q, const Vec& qd) {
    return kinetic_energy(m, q, qd) + potential_energy(m, q, kDownY) - low;
  };
  Vec q(2), qd = Vec::Zero(2);
  q << 0.0, 0.3;
  Vec p = Vec::Zero(2);
  const double e0 = energy(q, qd);
  const double dt = 1e-4;
  const double eps = 1e-6;
  double drift = 0.0;
  for (int i = 0; i < 50000; ++i) {
    const Mat mm = mass_matrix(m, q);
    const Eigen::LDLT<Mat> ldlt(mm);
    Vec pn = p;
    for (int it = 0; it < 4; ++it) {
      const Vec v = ldlt.solve(pn);
      const Mat mdot = (mass_matrix(m, q + eps * v) - mass_matrix(m, q - eps * v)) / (2 * eps);
      const Vec acc = forward_dynamics_fixed_base(m, q, v, Vec::Zero(2), kDownY);
      pn = p + dt * (mm * acc + mdot * v);
    }
    p = pn;
    qd = ldlt.solve(p);
    q += dt * qd;
    if (i % 100 == 0) drift = std::max(drift, std::abs(energy(q, ldlt.solve(p)) - e0) / e0);
  }
  CHECK(drift < 0.01);
  CHECK(std::abs(energy(q, mass_matrix(m, q).ldlt().solve(p)) - e0) / e0 < 0.01);
}

TEST_CASE("supported torques equal the PE gradient with the sole fixed") {
  const auto& m = test::shipped_model();
  std::mt19937_64 rng(6);
  const Vec q = test::random_in_limits(m, rng, 0.2);
  const Pose sole0 = sole_pose(m, forward_kinematics(m, q), Leg::left);
  const Vec3 g_sole = sole0.linear().transpose() * kStandardGravity;
  auto pe = [&](const Vec& x) {
    const PoseTable poses = forward_kinematics(m, x);
    const Pose inv = sole_pose(m, poses, Leg::left).inverse();
    double e = 0.0;
    for (size_t i = 0; i < poses.size(); ++i) {
      e -= m.links()[i].mass * g_sole.dot(inv * (poses[i] * m.links()[i].com));
    }
    return e;
  };
  const Vec tau = supported_inverse_dynamics(m, DynamicsState::at_rest(q), {1.0, 0.0});
  const double h = 1e-6;
  for (int j = 0; j < 20; ++j) {
    Vec qp = q, qm = q;
    qp[j] += h;
    qm[j] -= h;
    CHECK(tau[j] == doctest::Approx((pe(qp) - pe(qm)) / (2 * h)).epsilon(1e-5).scale(1.0));
  }
  // No support reduces to the fixed-base torques.
  CHECK(supported_inverse_dynamics(m, DynamicsState::at_rest(q), Support::none()) ==
        inverse_dynamics(m, DynamicsState::at_rest(q)));
}
