#pragma once

#include "op2/robot_model.hpp"

namespace op2 {

inline const Vec3 kStandardGravity(0.0, 0.0, -9.81);

struct DynamicsState {
  Vec q;
  Vec qd;
  Vec qdd;
  Vec3 gravity = kStandardGravity;  // trunk frame, m/s^2

  static DynamicsState at_rest(const Vec& q, const Vec3& gravity = kStandardGravity);
};

/// Joint torques plus the wrench the trunk anchor has to supply, expressed
/// in the trunk frame about its origin.
struct InverseDynamicsResult {
  Vec tau;
  Vec3 base_force = Vec3::Zero();
  Vec3 base_moment = Vec3::Zero();
};

/// Recursive Newton-Euler on the fixed-base tree.
InverseDynamicsResult inverse_dynamics_full(const RobotModel& model,
                                            const DynamicsState& state);
Vec inverse_dynamics(const RobotModel& model, const DynamicsState& state);

/// Joint-space inertia matrix from unit-acceleration columns.
Mat mass_matrix(const RobotModel& model, const Vec& q);

class SingularMassMatrix : public Error {
 public:
  using Error::Error;
};

/// Solves M(q) qdd = tau - bias(q, qd).
Vec forward_dynamics_fixed_base(const RobotModel& model, const Vec& q,
                                const Vec& qd, const Vec& tau,
                                const Vec3& gravity = kStandardGravity);

double kinetic_energy(const RobotModel& model, const Vec& q, const Vec& qd);
/// Zero at the trunk origin.
double potential_energy(const RobotModel& model, const Vec& q,
                        const Vec3& gravity = kStandardGravity);
Vec3 center_of_mass(const RobotModel& model, const PoseTable& poses);

/// 6 x dof geometric Jacobian [linear; angular] of a point fixed to `link`,
/// given in the trunk frame.
Mat point_jacobian(const RobotModel& model, const PoseTable& poses, int link,
                   const Vec3& point);

/// Share of the body weight carried by each foot. Zero in both = the trunk
/// anchor carries everything (plain fixed-base inverse dynamics).
struct Support {
  double left = 0.0;
  double right = 0.0;

  static Support none() { return {}; }
  static Support both() { return {0.5, 0.5}; }
};

/// Joint torques when the feet instead of the trunk anchor react the base
/// wrench: tau = tau_ID - sum_c J_c^T w_c, with w_c the base wrench moved to
/// the sole centre and scaled by the support share.
Vec supported_inverse_dynamics(const RobotModel& model,
                               const DynamicsState& state, Support support);

}  // namespace op2
