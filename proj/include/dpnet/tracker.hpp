#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpnet/doppler.hpp"
#include "dpnet/gainnet.hpp"
#include "dpnet/gss.hpp"

namespace dpnet {

enum class FilterMode { kKf, kDkf, kKnet, kDknet };

inline ObservationKind observation_kind(FilterMode m) {
  return (m == FilterMode::kKf || m == FilterMode::kKnet)
             ? ObservationKind::kPositionOnly
             : ObservationKind::kPositionVelocity;
}

inline bool uses_learned_gain(FilterMode m) {
  return m == FilterMode::kKnet || m == FilterMode::kDknet;
}

inline FilterMode filter_mode_from_string(const std::string& s) {
  if (s == "kf") return FilterMode::kKf;
  if (s == "dkf") return FilterMode::kDkf;
  if (s == "knet") return FilterMode::kKnet;
  if (s == "dknet") return FilterMode::kDknet;
  throw std::invalid_argument("unknown filter mode: " + s);
}

struct TrackerConfig {
  // Process noise per axis (position, velocity, acceleration), scaled by dt.
  double q_pos{1e-4};
  double q_vel{1e-3};
  double q_acc{1e-1};
  // Measurement noise standard deviations.
  double r_pos{0.05};
  double r_vel{0.1};
  double p0{10.0};  // initial covariance scale
};

inline Matrix6d process_noise(const TrackerConfig& cfg, double dt) {
  Matrix6d q = Matrix6d::Zero();
  for (int b = 0; b < 6; b += 3) {
    q(b, b) = cfg.q_pos * dt;
    q(b + 1, b + 1) = cfg.q_vel * dt;
    q(b + 2, b + 2) = cfg.q_acc * dt;
  }
  return q;
}

inline Eigen::MatrixXd measurement_noise(const TrackerConfig& cfg,
                                         ObservationKind kind) {
  const int m = obs_dim(kind);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(m, m);
  if (kind == ObservationKind::kPositionOnly) {
    r(0, 0) = r(1, 1) = cfg.r_pos * cfg.r_pos;
  } else {
    r(0, 0) = r(2, 2) = cfg.r_pos * cfg.r_pos;
    r(1, 1) = r(3, 3) = cfg.r_vel * cfg.r_vel;
  }
  return r;
}

/// Per-obstacle track. covariance is maintained for the analytic modes,
/// hidden for the learned-gain modes; both live here so tracks are plain
/// values.
struct ObstacleTrack {
  int id{0};
  FilterMode mode{FilterMode::kDkf};
  TrackState posterior{TrackState::Zero()};
  TrackState prior{TrackState::Zero()};
  VectorXd predicted_obs;
  Matrix6d covariance{Matrix6d::Identity()};
  VectorXd hidden;
  std::pair<double, double> box_dims{1.0, 1.0};
  std::vector<TrackState> horizon_preds;
  bool initialized{false};
  bool last_update_rejected{false};
};

namespace detail {

inline void refresh_predictions(ObstacleTrack& track, const Matrix6d& trans,
                                int horizon) {
  track.prior = trans * track.posterior;
  const Eigen::MatrixXd u = observation_matrix(observation_kind(track.mode));
  track.predicted_obs = u * track.prior;
  track.horizon_preds.resize(horizon);
  TrackState p = track.posterior;
  for (int k = 0; k < horizon; ++k) {
    p = trans * p;
    track.horizon_preds[k] = p;
  }
}

}  // namespace detail

/// Algorithm-1 cold start: lift the first observation, then forward-predict.
inline ObstacleTrack start_track(int id, FilterMode mode, const VectorXd& y0,
                                 double dt, int horizon,
                                 const TrackerConfig& cfg,
                                 const GainNet* net,
                                 std::pair<double, double> box_dims = {1.0,
                                                                       1.0}) {
  const ObservationKind kind = observation_kind(mode);
  if (y0.size() != obs_dim(kind)) {
    throw std::invalid_argument("start_track: observation dimension mismatch");
  }
  if (uses_learned_gain(mode) && net == nullptr) {
    throw std::invalid_argument("start_track: learned mode needs a net");
  }
  ObstacleTrack t;
  t.id = id;
  t.mode = mode;
  t.box_dims = box_dims;
  t.posterior = observation_matrix(kind).transpose() * y0;
  t.covariance = cfg.p0 * Matrix6d::Identity();
  if (net) t.hidden = VectorXd::Zero(net->hidden_dim);
  detail::refresh_predictions(t, transition_matrix(dt), horizon);
  t.initialized = true;
  return t;
}

/// Posterior update with an explicit gain, then one-step forward prediction
/// and the horizon rollout (Algorithm 1 lines 10-12).
inline void apply_update(ObstacleTrack& track, const VectorXd& y,
                         const Eigen::MatrixXd& gain, double dt, int horizon) {
  track.posterior = track.prior + gain * (y - track.predicted_obs);
  detail::refresh_predictions(track, transition_matrix(dt), horizon);
}

/// Occluded frame: carry the prediction forward without a correction.
inline void predict_only(ObstacleTrack& track, double dt, int horizon,
                         const TrackerConfig& cfg) {
  const Matrix6d trans = transition_matrix(dt);
  track.posterior = track.prior;
  if (!uses_learned_gain(track.mode)) {
    track.covariance = trans * track.covariance * trans.transpose() +
                       process_noise(cfg, dt);
  }
  detail::refresh_predictions(track, trans, horizon);
}

/// One filter step. For KF/D-KF the gain comes from the Riccati recursion
/// with the configured Q and R; for KNet/D-KNet from the gain network fed by
/// normalized filter features. Non-finite observations are rejected: the
/// track propagates its prediction only and is flagged.
inline void filter_step(ObstacleTrack& track, const VectorXd& y, double dt,
                        int horizon, const GainNet* net,
                        const TrackerConfig& cfg,
                        bool position_only_update = false) {
  const ObservationKind kind = observation_kind(track.mode);
  const int m = obs_dim(kind);
  if (y.size() != m) {
    throw std::invalid_argument("filter_step: observation dimension mismatch");
  }
  if (uses_learned_gain(track.mode)) {
    if (net == nullptr) {
      throw std::invalid_argument("filter_step: learned mode needs a net");
    }
    if (net->obs_dim != m) {
      throw std::invalid_argument("filter_step: net obs_dim mismatch");
    }
  }
  if (!y.allFinite()) {
    track.last_update_rejected = true;
    predict_only(track, dt, horizon, cfg);
    return;
  }
  track.last_update_rejected = false;

  VectorXd y_eff = y;
  if (position_only_update && kind == ObservationKind::kPositionVelocity) {
    // Degraded observation: zero the velocity innovation rows.
    y_eff(1) = track.predicted_obs(1);
    y_eff(3) = track.predicted_obs(3);
  }

  if (uses_learned_gain(track.mode)) {
    const VectorXd f = gain_features(track.posterior, track.prior,
                                     track.predicted_obs, y_eff);
    const GainForward fwd = gain_forward(*net, f, track.hidden);
    track.hidden = fwd.hidden;
    apply_update(track, y_eff, fwd.gain, dt, horizon);
    return;
  }

  const Matrix6d trans = transition_matrix(dt);
  const Eigen::MatrixXd u = observation_matrix(kind);
  const Matrix6d p_prior = trans * track.covariance * trans.transpose() +
                           process_noise(cfg, dt);
  const Eigen::MatrixXd r = measurement_noise(cfg, kind);
  const Eigen::MatrixXd s = u * p_prior * u.transpose() + r;
  const Eigen::MatrixXd gain =
      p_prior * u.transpose() * s.ldlt().solve(
                                    Eigen::MatrixXd::Identity(m, m));
  const Matrix6d ikh = Matrix6d::Identity() - gain * u;
  // Joseph form keeps the covariance symmetric PSD.
  track.covariance =
      ikh * p_prior * ikh.transpose() + gain * r * gain.transpose();
  apply_update(track, y_eff, gain, dt, horizon);
}

struct Observation {
  VectorXd y;
  bool degraded{false};  // velocity entries unreliable (rank-deficient fuse)
};

/// Composes the tracker observation from a grouped scan: position entries
/// are the (ground-truth) box center; velocity entries come from the fused
/// Doppler velocity plus the known sensor planar velocity.
inline Observation observation_from_scan(
    const std::vector<DopplerPoint>& group, const OrientedBox& box,
    const Vec3& sensor_pos, ObservationKind kind,
    const std::optional<Vec2>& prior_direction = std::nullopt,
    const Vec2& sensor_planar_velocity = Vec2::Zero()) {
  if (group.empty()) {
    throw std::invalid_argument("observation_from_scan: empty group");
  }
  Observation out;
  if (kind == ObservationKind::kPositionOnly) {
    out.y = VectorXd(2);
    out.y << box.cx, box.cy;
    return out;
  }
  const FusedVelocity f = fuse_velocity(group, sensor_pos, prior_direction);
  const Vec2 v = f.velocity + sensor_planar_velocity;
  out.degraded = f.rank_deficient;
  out.y = VectorXd(4);
  out.y << box.cx, v.x(), box.cy, v.y();
  return out;
}

// ---------------------------------------------------------------------------
// NMSE metric and evaluation
// ---------------------------------------------------------------------------

inline constexpr double kNmseFloor = 1e-12;
inline constexpr double kNmseFloorDb = -120.0;

/// Horizon-averaged NMSE in dB over paired position sequences. Steps whose
/// truth sits at the origin are skipped (counted in skipped when provided);
/// if every step is skipped the metric is undefined.
inline double nmse_db(const std::vector<Vec2>& preds,
                      const std::vector<Vec2>& truths,
                      int* skipped = nullptr) {
  if (preds.size() != truths.size() || preds.empty()) {
    throw std::invalid_argument("nmse_db: length mismatch or empty");
  }
  double sum = 0.0;
  int used = 0;
  int skip = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double denom = truths[i].squaredNorm();
    if (denom <= 0.0) {
      ++skip;
      continue;
    }
    sum += (preds[i] - truths[i]).squaredNorm() / denom;
    ++used;
  }
  if (skipped) *skipped = skip;
  if (used == 0) {
    throw std::domain_error("nmse_db: all steps skipped, metric undefined");
  }
  return 10.0 * std::log10(std::max(sum / used, kNmseFloor));
}

struct ScoreStats {
  double mean{0.0};
  double std_dev{0.0};
};

inline ScoreStats aggregate_vehicle_scores(const std::vector<double>& scores) {
  if (scores.empty()) {
    throw std::domain_error("aggregate_vehicle_scores: no vehicles");
  }
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= scores.size();
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  var /= scores.size();
  return {mean, std::sqrt(var)};
}

struct TrackEvalResult {
  double mean_db{0.0};
  double std_db{0.0};
  std::vector<double> per_step_db;  // length H
  std::vector<double> per_vehicle_db;
  int skipped_vehicles{0};
};

inline Vec2 state_position(const TrackState& x) { return {x(0), x(3)}; }

/// Runs one filter over each trajectory and scores its H-step horizon
/// predictions against the ground truth, per the dB-NMSE definition.
inline TrackEvalResult track_eval(const std::vector<Trajectory>& dataset,
                                  FilterMode mode, const GainNet* net,
                                  double freq_hz, int horizon,
                                  const TrackerConfig& cfg = {}) {
  if (dataset.empty()) {
    throw std::invalid_argument("track_eval: empty dataset");
  }
  if (!(freq_hz > 0.0) || horizon < 1) {
    throw std::invalid_argument("track_eval: bad frequency or horizon");
  }
  const double dt = 1.0 / freq_hz;
  TrackEvalResult out;
  std::vector<double> step_sums(horizon, 0.0);
  std::vector<long> step_counts(horizon, 0);

  for (const Trajectory& traj : dataset) {
    const int total = static_cast<int>(traj.observations.size());
    if (total < horizon + 1) {
      ++out.skipped_vehicles;
      continue;
    }
    ObstacleTrack track = start_track(0, mode, traj.observations[0], dt,
                                      horizon, cfg, net);
    std::vector<double> db_steps;
    std::vector<std::vector<double>> per_step(horizon);
    for (int t = 1; t < total; ++t) {
      filter_step(track, traj.observations[t], dt, horizon, net, cfg);
      if (t + horizon >= total) continue;
      double ratio_sum = 0.0;
      int used = 0;
      for (int k = 0; k < horizon; ++k) {
        const Vec2 truth = state_position(traj.truths[t + 1 + k]);
        const double denom = truth.squaredNorm();
        if (denom <= 0.0) continue;
        const double ratio =
            (state_position(track.horizon_preds[k]) - truth).squaredNorm() /
            denom;
        ratio_sum += ratio;
        ++used;
        per_step[k].push_back(
            10.0 * std::log10(std::max(ratio, kNmseFloor)));
      }
      if (used > 0) {
        db_steps.push_back(
            10.0 * std::log10(std::max(ratio_sum / used, kNmseFloor)));
      }
    }
    if (db_steps.empty()) {
      ++out.skipped_vehicles;
      continue;
    }
    double mean_t = 0.0;
    for (double d : db_steps) mean_t += d;
    out.per_vehicle_db.push_back(mean_t / db_steps.size());
    for (int k = 0; k < horizon; ++k) {
      if (per_step[k].empty()) continue;
      double m = 0.0;
      for (double d : per_step[k]) m += d;
      step_sums[k] += m / per_step[k].size();
      ++step_counts[k];
    }
  }
  if (out.per_vehicle_db.empty()) {
    throw std::domain_error("track_eval: no vehicle produced a score");
  }
  const ScoreStats stats = aggregate_vehicle_scores(out.per_vehicle_db);
  out.mean_db = stats.mean;
  out.std_db = stats.std_dev;
  out.per_step_db.resize(horizon);
  for (int k = 0; k < horizon; ++k) {
    out.per_step_db[k] =
        step_counts[k] > 0 ? step_sums[k] / step_counts[k] : 0.0;
  }
  return out;
}

}  // namespace dpnet
