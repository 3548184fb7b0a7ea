#pragma once

// Conversion between the virtual serial joint space and the real actuator
// space. Each actuator row is a signed, geared combination of serial joints:
//
//   actuator_i = sum_j gear_i * sign_ij * serial_j + offset_i
//
// Master/slave servos on one joint are two rows that differ only in sign.

#include "op2/common.hpp"

#include <vector>

namespace op2 {

class CouplingMatrix {
 public:
  CouplingMatrix() = default;

  /// `signs` is actuators x serial with entries in {-1, 0, +1}.
  /// Throws Error if any row is empty, any gear is non-positive, or the
  /// geared matrix does not have full column rank.
  CouplingMatrix(Mat signs, Vec gears, Vec offsets);

  Eigen::Index actuator_count() const { return signs_.rows(); }
  Eigen::Index serial_count() const { return signs_.cols(); }

  const Mat& signs() const { return signs_; }
  const Vec& gears() const { return gears_; }
  const Vec& offsets() const { return offsets_; }

  /// G * A, the geared coupling.
  const Mat& matrix() const { return geared_; }

  /// (G A)^+ = ((G A)^T (G A))^-1 (G A)^T, serial_count x actuator_count.
  const Mat& pseudo_inverse() const { return pinv_; }

 private:
  Mat signs_;
  Vec gears_;
  Vec offsets_;
  Mat geared_;
  Mat pinv_;
};

Vec serial_to_actuators(const CouplingMatrix& coupling, const Vec& q_serial);

struct SerialEstimate {
  Vec q;         // least-squares serial positions
  Vec residual;  // per-actuator disagreement, actuator space
};

/// Least-squares fusion of (possibly disagreeing) actuator feedback.
SerialEstimate actuators_to_serial(const CouplingMatrix& coupling,
                                   const Vec& q_actuators);

/// tau_serial = (G A)^T tau_act.
Vec actuator_torques_to_serial(const CouplingMatrix& coupling,
                               const Vec& tau_actuators);

/// Minimum-norm actuator torques producing the given serial torques.
Vec serial_torques_to_actuators(const CouplingMatrix& coupling,
                                const Vec& tau_serial);

}  // namespace op2
