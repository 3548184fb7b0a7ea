#include "op2/dynamics.hpp"

#include <Eigen/Cholesky>

namespace op2 {

DynamicsState DynamicsState::at_rest(const Vec& q, const Vec3& gravity) {
  return {q, Vec::Zero(q.size()), Vec::Zero(q.size()), gravity};
}

namespace {

void check_state(const RobotModel& model, const DynamicsState& s) {
  require_size(s.q.size(), model.dof(), "q");
  require_size(s.qd.size(), model.dof(), "qd");
  require_size(s.qdd.size(), model.dof(), "qdd");
}

// Parent-to-child transform of a link at joint position q.
Pose local_transform(const RobotModel& model, size_t link, const Vec& q) {
  const LinkSpec& l = model.links()[link];
  Pose t = Pose::Identity();
  t.translate(l.origin_xyz);
  t.rotate(l.origin_rot);
  const int j = model.link_joint()[link];
  if (j >= 0) t.rotate(Eigen::AngleAxisd(q[j], model.joints()[j].axis));
  return t;
}

}  // namespace

InverseDynamicsResult inverse_dynamics_full(const RobotModel& model,
                                            const DynamicsState& state) {
  check_state(model, state);
  const auto& links = model.links();
  const size_t n = links.size();
  std::vector<Mat3> rot(n);  // parent-from-child rotation
  std::vector<Vec3> omega(n), alpha(n), accel(n), force(n), moment(n);

  // Forward pass: velocities and accelerations in link frames.
  for (size_t i = 0; i < n; ++i) {
    if (i == 0) {
      rot[0].setIdentity();
      omega[0].setZero();
      alpha[0].setZero();
      accel[0] = -state.gravity;
    } else {
      const Pose t = local_transform(model, i, state.q);
      rot[i] = t.linear();
      const Vec3& r = links[i].origin_xyz;
      const int p = model.link_parent()[i];
      const Mat3 rt = rot[i].transpose();
      omega[i] = rt * omega[p];
      alpha[i] = rt * alpha[p];
      accel[i] = rt * (accel[p] + alpha[p].cross(r) +
                       omega[p].cross(omega[p].cross(r)));
      const int j = model.link_joint()[i];
      if (j >= 0) {
        const Vec3& z = model.joints()[j].axis;
        alpha[i] += z * state.qdd[j] + omega[i].cross(z * state.qd[j]);
        omega[i] += z * state.qd[j];
      }
    }
    const LinkSpec& l = links[i];
    const Vec3 acom = accel[i] + alpha[i].cross(l.com) +
                      omega[i].cross(omega[i].cross(l.com));
    const Vec3 f = l.mass * acom;
    force[i] = f;
    moment[i] = l.inertia * alpha[i] + omega[i].cross(l.inertia * omega[i]) +
                l.com.cross(f);
  }

  // Backward pass: accumulate child wrenches into parents.
  InverseDynamicsResult out;
  out.tau = Vec::Zero(model.dof());
  for (size_t i = n - 1; i > 0; --i) {
    const int j = model.link_joint()[i];
    if (j >= 0) out.tau[j] = model.joints()[j].axis.dot(moment[i]);
    const int p = model.link_parent()[i];
    const Vec3 fp = rot[i] * force[i];
    force[p] += fp;
    moment[p] += rot[i] * moment[i] + links[i].origin_xyz.cross(fp);
  }
  out.base_force = force[0];
  out.base_moment = moment[0];
  return out;
}

Vec inverse_dynamics(const RobotModel& model, const DynamicsState& state) {
  return inverse_dynamics_full(model, state).tau;
}

Mat mass_matrix(const RobotModel& model, const Vec& q) {
  require_size(q.size(), model.dof(), "q");
  const int n = model.dof();
  Mat m(n, n);
  DynamicsState s{q, Vec::Zero(n), Vec::Zero(n), Vec3::Zero()};
  for (int j = 0; j < n; ++j) {
    s.qdd.setZero();
    s.qdd[j] = 1.0;
    m.col(j) = inverse_dynamics(model, s);
  }
  // Columns are exact up to rounding; symmetrize the rounding away.
  return 0.5 * (m + m.transpose());
}

Vec forward_dynamics_fixed_base(const RobotModel& model, const Vec& q,
                                const Vec& qd, const Vec& tau,
                                const Vec3& gravity) {
  require_size(tau.size(), model.dof(), "tau");
  const Vec bias =
      inverse_dynamics(model, {q, qd, Vec::Zero(model.dof()), gravity});
  const Mat m = mass_matrix(model, q);
  Eigen::LDLT<Mat> ldlt(m);
  const double scale = std::max(1.0, m.diagonal().cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      (model.dof() > 0 && ldlt.vectorD().minCoeff() <= 1e-12 * scale)) {
    throw SingularMassMatrix("mass matrix is singular; check link masses and inertias");
  }
  return ldlt.solve(tau - bias);
}

double kinetic_energy(const RobotModel& model, const Vec& q, const Vec& qd) {
  require_size(qd.size(), model.dof(), "qd");
  return 0.5 * qd.dot(mass_matrix(model, q) * qd);
}

double potential_energy(const RobotModel& model, const Vec& q,
                        const Vec3& gravity) {
  const PoseTable poses = forward_kinematics(model, q);
  double e = 0.0;
  for (size_t i = 0; i < poses.size(); ++i) {
    const LinkSpec& l = model.links()[i];
    e -= l.mass * gravity.dot(poses[i] * l.com);
  }
  return e;
}

Vec3 center_of_mass(const RobotModel& model, const PoseTable& poses) {
  Vec3 c = Vec3::Zero();
  double m = 0.0;
  for (size_t i = 0; i < poses.size(); ++i) {
    const LinkSpec& l = model.links()[i];
    c += l.mass * (poses[i] * l.com);
    m += l.mass;
  }
  return m > 0.0 ? Vec3(c / m) : c;
}

Mat point_jacobian(const RobotModel& model, const PoseTable& poses, int link,
                   const Vec3& point) {
  Mat jac = Mat::Zero(6, model.dof());
  for (int i = link; i > 0; i = model.link_parent()[i]) {
    const int j = model.link_joint()[i];
    if (j < 0) continue;
    const Vec3 axis = poses[i].linear() * model.joints()[j].axis;
    jac.block<3, 1>(0, j) = axis.cross(point - poses[i].translation());
    jac.block<3, 1>(3, j) = axis;
  }
  return jac;
}

Vec supported_inverse_dynamics(const RobotModel& model,
                               const DynamicsState& state, Support support) {
  const InverseDynamicsResult id = inverse_dynamics_full(model, state);
  Vec tau = id.tau;
  if (support.left == 0.0 && support.right == 0.0) return tau;
  const PoseTable poses = forward_kinematics(model, state.q);
  for (Leg leg : {Leg::left, Leg::right}) {
    const double share = leg == Leg::left ? support.left : support.right;
    if (share == 0.0) continue;
    const Vec3 sole = sole_pose(model, poses, leg).translation();
    const auto chain = model.chain_joints(leg == Leg::left ? Chain::left_leg
                                                           : Chain::right_leg);
    const int foot = model.joint_link()[chain.back()];
    Eigen::Matrix<double, 6, 1> w;
    w.head<3>() = share * id.base_force;
    w.tail<3>() = share * (id.base_moment - sole.cross(id.base_force));
    tau -= point_jacobian(model, poses, foot, sole).transpose() * w;
  }
  return tau;
}

}  // namespace op2
