#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace dpnet {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

// Doppler-augmented obstacle state [x, vx, ax, y, vy, ay].
using TrackState = Vector6d;

enum class ObservationKind { kPositionOnly, kPositionVelocity };

inline int obs_dim(ObservationKind kind) {
  return kind == ObservationKind::kPositionOnly ? 2 : 4;
}

// State indices selected by each observation kind.
inline const int* obs_indices(ObservationKind kind) {
  static constexpr int pos_only[] = {0, 3};
  static constexpr int pos_vel[] = {0, 1, 3, 4};
  return kind == ObservationKind::kPositionOnly ? pos_only : pos_vel;
}

/// Constant-acceleration transition: two identical 3x3 blocks acting on
/// (x, vx, ax) and (y, vy, ay).
inline Matrix6d transition_matrix(double dt) {
  if (!(dt > 0.0)) {
    throw std::invalid_argument("transition_matrix: dt must be positive");
  }
  Matrix6d t = Matrix6d::Identity();
  for (int b = 0; b < 6; b += 3) {
    t(b, b + 1) = dt;
    t(b, b + 2) = 0.5 * dt * dt;
    t(b + 1, b + 2) = dt;
  }
  return t;
}

/// Row-selection observation matrix U.
inline Eigen::MatrixXd observation_matrix(ObservationKind kind) {
  const int m = obs_dim(kind);
  const int* idx = obs_indices(kind);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(m, 6);
  for (int i = 0; i < m; ++i) u(i, idx[i]) = 1.0;
  return u;
}

}  // namespace dpnet
