#include "op2/pk_map.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

namespace op2 {

CouplingMatrix::CouplingMatrix(Mat signs, Vec gears, Vec offsets)
    : signs_(std::move(signs)),
      gears_(std::move(gears)),
      offsets_(std::move(offsets)) {
  require_size(gears_.size(), signs_.rows(), "coupling gears");
  require_size(offsets_.size(), signs_.rows(), "coupling offsets");
  for (Eigen::Index i = 0; i < signs_.rows(); ++i) {
    if (!(gears_[i] > 0.0)) {
      throw Error("coupling row " + std::to_string(i) +
                  ": gear must be positive");
    }
    bool any = false;
    for (Eigen::Index j = 0; j < signs_.cols(); ++j) {
      const double s = signs_(i, j);
      if (s != 0.0 && s != 1.0 && s != -1.0) {
        throw Error("coupling row " + std::to_string(i) +
                    ": entries must be -1, 0 or +1");
      }
      any = any || s != 0.0;
    }
    if (!any) {
      throw Error("coupling row " + std::to_string(i) + " has no entries");
    }
  }
  geared_ = gears_.asDiagonal() * signs_;

  Eigen::ColPivHouseholderQR<Mat> qr(geared_);
  if (qr.rank() != geared_.cols()) {
    throw Error("coupling matrix is rank deficient: rank " +
                std::to_string(qr.rank()) + " < " +
                std::to_string(geared_.cols()));
  }
  const Mat normal = geared_.transpose() * geared_;
  pinv_ = normal.ldlt().solve(geared_.transpose());
}

Vec serial_to_actuators(const CouplingMatrix& coupling, const Vec& q_serial) {
  require_size(q_serial.size(), coupling.serial_count(), "serial positions");
  return coupling.matrix() * q_serial + coupling.offsets();
}

SerialEstimate actuators_to_serial(const CouplingMatrix& coupling,
                                   const Vec& q_actuators) {
  require_size(q_actuators.size(), coupling.actuator_count(),
               "actuator positions");
  SerialEstimate out;
  const Vec centered = q_actuators - coupling.offsets();
  out.q = coupling.pseudo_inverse() * centered;
  out.residual = centered - coupling.matrix() * out.q;
  return out;
}

Vec actuator_torques_to_serial(const CouplingMatrix& coupling,
                               const Vec& tau_actuators) {
  require_size(tau_actuators.size(), coupling.actuator_count(),
               "actuator torques");
  return coupling.matrix().transpose() * tau_actuators;
}

Vec serial_torques_to_actuators(const CouplingMatrix& coupling,
                                const Vec& tau_serial) {
  require_size(tau_serial.size(), coupling.serial_count(), "serial torques");
  return coupling.pseudo_inverse().transpose() * tau_serial;
}

}  // namespace op2
