#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpnet/gainnet.hpp"
#include "dpnet/gss.hpp"
#include "dpnet/rng.hpp"

namespace dpnet {

// Synthetic vehicle-trajectory benchmark standing in for on-road recordings:
// constant-velocity, constant-acceleration, and coordinated-turn families
// with position/velocity observation noise.

enum class MotionFamily { kConstantVelocity, kAccelerating, kTurning };

inline const char* family_name(MotionFamily f) {
  switch (f) {
    case MotionFamily::kConstantVelocity: return "constant";
    case MotionFamily::kAccelerating: return "accelerating";
    case MotionFamily::kTurning: return "turning";
  }
  return "?";
}

struct SynthConfig {
  int trajectories{60};
  int steps{120};
  double freq_hz{10.0};
  double pos_noise{0.05};
  double vel_noise{0.1};
  // Stationary std of the per-axis acceleration jitter riding on top of each
  // motion family (real vehicles never follow exact kinematics).
  double accel_jitter{0.4};
  std::uint64_t seed{0};
};

struct SynthDataset {
  std::vector<Trajectory> trajectories;
  std::vector<MotionFamily> families;
};

inline Trajectory synth_trajectory(MotionFamily family, int steps, double dt,
                                   double pos_noise, double vel_noise,
                                   double accel_jitter,
                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double r0 = 8.0 + 22.0 * u01(rng);
  const double ang0 = 2.0 * M_PI * u01(rng);
  const Eigen::Vector2d p0(r0 * std::cos(ang0), r0 * std::sin(ang0));
  const double heading = 2.0 * M_PI * u01(rng);
  const double speed = 3.0 + 6.0 * u01(rng);

  double accel = 0.0;
  double omega = 0.0;
  if (family == MotionFamily::kAccelerating) {
    const double span = steps * dt;
    const double lo = -(speed - 1.0) / span;  // keep the speed positive
    accel = lo + (1.2 - lo) * u01(rng);
  } else if (family == MotionFamily::kTurning) {
    const double mag = 0.15 + 0.3 * u01(rng);
    omega = u01(rng) < 0.5 ? -mag : mag;
  }

  // AR(1) acceleration jitter with the configured stationary std.
  const double ar = 0.95;
  const double drive = accel_jitter * std::sqrt(1.0 - ar * ar);
  Eigen::Vector2d jitter(accel_jitter * gauss(rng), accel_jitter * gauss(rng));

  Trajectory traj;
  const Eigen::MatrixXd u_mat =
      observation_matrix(ObservationKind::kPositionVelocity);
  Eigen::Vector2d pos = p0;
  Eigen::Vector2d vel(speed * std::cos(heading), speed * std::sin(heading));
  for (int k = 0; k < steps; ++k) {
    const double t = k * dt;
    Eigen::Vector2d a_family;
    if (family == MotionFamily::kTurning) {
      const double th = heading + omega * t;
      a_family = speed * omega * Eigen::Vector2d(-std::sin(th), std::cos(th));
    } else {
      a_family = accel * Eigen::Vector2d(std::cos(heading), std::sin(heading));
    }
    const Eigen::Vector2d a_total = a_family + jitter;
    TrackState state;
    state << pos.x(), vel.x(), a_total.x(), pos.y(), vel.y(), a_total.y();
    traj.truths.push_back(state);
    VectorXd obs = u_mat * state;
    obs(0) += pos_noise * gauss(rng);
    obs(1) += vel_noise * gauss(rng);
    obs(2) += pos_noise * gauss(rng);
    obs(3) += vel_noise * gauss(rng);
    traj.observations.push_back(obs);

    pos += vel * dt + 0.5 * a_total * dt * dt;
    vel += a_total * dt;
    jitter = ar * jitter +
             drive * Eigen::Vector2d(gauss(rng), gauss(rng));
  }
  return traj;
}

/// Mixed benchmark: 40% constant-velocity, 30% accelerating, 30% turning.
inline SynthDataset synth_benchmark(const SynthConfig& cfg) {
  if (cfg.trajectories < 1 || cfg.steps < 2 || !(cfg.freq_hz > 0.0)) {
    throw std::invalid_argument("synth_benchmark: bad configuration");
  }
  SynthDataset out;
  auto rng = make_engine(mix64(cfg.seed, 0xBE4C4));
  const double dt = 1.0 / cfg.freq_hz;
  for (int i = 0; i < cfg.trajectories; ++i) {
    const double frac = (i + 0.5) / cfg.trajectories;
    MotionFamily family = MotionFamily::kConstantVelocity;
    if (frac >= 0.7) {
      family = MotionFamily::kTurning;
    } else if (frac >= 0.4) {
      family = MotionFamily::kAccelerating;
    }
    out.trajectories.push_back(synth_trajectory(family, cfg.steps, dt,
                                                cfg.pos_noise, cfg.vel_noise,
                                                cfg.accel_jitter, rng));
    out.families.push_back(family);
  }
  return out;
}

/// Position-only view of a trajectory (drops the velocity observation rows).
inline Trajectory to_position_only(const Trajectory& traj) {
  Trajectory out;
  out.truths = traj.truths;
  out.observations.reserve(traj.observations.size());
  for (const VectorXd& y : traj.observations) {
    VectorXd p(2);
    p << y(0), y(2);
    out.observations.push_back(p);
  }
  return out;
}

inline std::vector<Trajectory> family_subset(const SynthDataset& ds,
                                             MotionFamily family) {
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    if (ds.families[i] == family) out.push_back(ds.trajectories[i]);
  }
  return out;
}

}  // namespace dpnet
