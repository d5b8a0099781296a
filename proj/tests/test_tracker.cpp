#include "dpnet/tracker.hpp"

#include <gtest/gtest.h>

#include <random>

#include "dpnet/rng.hpp"
#include "oracles.hpp"

using namespace dpnet;

namespace {

// Ground-truth simulation of the matched linear-Gaussian model.
struct GssSim {
  std::vector<TrackState> xs;
  std::vector<VectorXd> ys;  // observations from step 1 on; ys[0] = y_0
};

GssSim simulate_gss(const TrackerConfig& cfg, double dt, int steps,
                    ObservationKind kind, std::uint64_t seed) {
  auto rng = make_engine(mix64(seed, 0x6A55));
  std::normal_distribution<double> g(0.0, 1.0);
  const Matrix6d trans = transition_matrix(dt);
  const Matrix6d q = process_noise(cfg, dt);
  const Eigen::MatrixXd r = measurement_noise(cfg, kind);
  const Eigen::MatrixXd u = observation_matrix(kind);
  GssSim sim;
  TrackState x;
  x << 12.0, 2.0, 0.3, -6.0, -1.0, 0.1;
  for (int t = 0; t <= steps; ++t) {
    sim.xs.push_back(x);
    VectorXd y = u * x;
    for (int i = 0; i < y.size(); ++i) y(i) += std::sqrt(r(i, i)) * g(rng);
    sim.ys.push_back(y);
    TrackState w;
    for (int i = 0; i < 6; ++i) w(i) = std::sqrt(q(i, i)) * g(rng);
    x = trans * x + w;
  }
  return sim;
}

}  // namespace

TEST(Transition, ConstantAccelerationTriple) {
  const Matrix6d t = transition_matrix(0.1);
  TrackState x = TrackState::Zero();
  x(0) = 0.0;
  x(1) = 1.0;
  x(2) = 2.0;
  const TrackState y = t * x;
  EXPECT_NEAR(y(0), 0.11, 1e-15);
  EXPECT_NEAR(y(1), 1.2, 1e-15);
  EXPECT_NEAR(y(2), 2.0, 1e-15);
}

TEST(Transition, ZeroRatesAreFixedPoint) {
  const Matrix6d t = transition_matrix(0.37);
  TrackState x = TrackState::Zero();
  x(0) = 4.0;
  x(3) = -2.0;
  EXPECT_EQ(t * x, x);
}

TEST(Transition, SquareEqualsTwoSteps) {
  const Matrix6d t = transition_matrix(0.1);
  TrackState x = TrackState::Zero();
  x(0) = 0.0;
  x(1) = 1.0;
  x(2) = 2.0;
  const TrackState two = t * (t * x);
  EXPECT_NEAR(two(0), 0.24, 1e-15);
  EXPECT_NEAR(two(1), 1.4, 1e-15);
  const TrackState sq = (t * t) * x;
  EXPECT_NEAR((two - sq).norm(), 0.0, 1e-14);
}

TEST(Transition, RejectsNonPositiveDt) {
  EXPECT_THROW(transition_matrix(0.0), std::invalid_argument);
  EXPECT_THROW(transition_matrix(-0.1), std::invalid_argument);
}

TEST(ObservationMatrix, Selections) {
  TrackState x;
  x << 1, 2, 3, 4, 5, 6;
  const VectorXd pv = observation_matrix(ObservationKind::kPositionVelocity) * x;
  ASSERT_EQ(pv.size(), 4);
  EXPECT_EQ(pv(0), 1);
  EXPECT_EQ(pv(1), 2);
  EXPECT_EQ(pv(2), 4);
  EXPECT_EQ(pv(3), 5);
  const VectorXd po = observation_matrix(ObservationKind::kPositionOnly) * x;
  ASSERT_EQ(po.size(), 2);
  EXPECT_EQ(po(0), 1);
  EXPECT_EQ(po(1), 4);
}

TEST(ObservationMatrix, OrthonormalRows) {
  for (auto kind : {ObservationKind::kPositionOnly,
                    ObservationKind::kPositionVelocity}) {
    const Eigen::MatrixXd u = observation_matrix(kind);
    const Eigen::MatrixXd id = u * u.transpose();
    EXPECT_TRUE(id.isApprox(
        Eigen::MatrixXd::Identity(obs_dim(kind), obs_dim(kind))));
  }
}

TEST(ObservationFromScan, NoiselessComposition) {
  SensorConfig scfg;
  scfg.noise_sigma = 0.0;
  scfg.range_noise_sigma = 0.0;
  const OrientedBox box = box_from_state(10, 0, 0, 1.5, 1.5);
  std::vector<WorldObstacle> world = {{box, {-5, 0}, 0}};
  const Vec3 sensor(0, 0, 1);
  const DopplerScan s = scan(world, sensor, scfg);
  const auto groups = group_points(s, {{0, box}});
  ASSERT_FALSE(groups.empty());
  const Observation obs = observation_from_scan(
      groups.at(0), box, sensor, ObservationKind::kPositionVelocity);
  ASSERT_EQ(obs.y.size(), 4);
  EXPECT_NEAR(obs.y(0), 10.0, 1e-12);
  EXPECT_NEAR(obs.y(1), -5.0, 1e-9);
  EXPECT_NEAR(obs.y(2), 0.0, 1e-12);
  EXPECT_NEAR(obs.y(3), 0.0, 1e-9);

  const Observation po = observation_from_scan(groups.at(0), box, sensor,
                                               ObservationKind::kPositionOnly);
  ASSERT_EQ(po.y.size(), 2);
  EXPECT_NEAR(po.y(0), 10.0, 1e-12);
  EXPECT_NEAR(po.y(1), 0.0, 1e-12);
}

TEST(FilterStep, ZeroGainIsOpenLoop) {
  TrackerConfig cfg;
  VectorXd y0(4);
  y0 << 1, 2, 3, 4;
  ObstacleTrack t = start_track(0, FilterMode::kDkf, y0, 0.1, 5, cfg, nullptr);
  const TrackState prior = t.prior;
  VectorXd y(4);
  y << 9, 9, 9, 9;
  apply_update(t, y, Eigen::MatrixXd::Zero(6, 4), 0.1, 5);
  EXPECT_EQ(t.posterior, prior);
}

TEST(FilterStep, SelectionTransposeGainRecoversTruth) {
  TrackerConfig cfg;
  TrackState truth;
  truth << 1, 2, 3, 4, 5, 6;
  const Eigen::MatrixXd u = observation_matrix(ObservationKind::kPositionVelocity);
  VectorXd y0 = u * truth;
  ObstacleTrack t = start_track(0, FilterMode::kDkf, y0, 0.1, 5, cfg, nullptr);
  t.prior = truth;
  t.predicted_obs = u * truth;
  const VectorXd y = u * truth;
  apply_update(t, y, u.transpose(), 0.1, 5);
  EXPECT_EQ(t.posterior, truth);
}

TEST(FilterStep, RejectsDimensionMismatch) {
  TrackerConfig cfg;
  VectorXd y0(4);
  y0 << 1, 2, 3, 4;
  ObstacleTrack t = start_track(0, FilterMode::kDkf, y0, 0.1, 5, cfg, nullptr);
  EXPECT_THROW(filter_step(t, VectorXd::Zero(2), 0.1, 5, nullptr, cfg),
               std::invalid_argument);
}

TEST(FilterStep, NonFiniteObservationRejected) {
  TrackerConfig cfg;
  VectorXd y0(4);
  y0 << 1, 0, 1, 0;
  ObstacleTrack t = start_track(0, FilterMode::kDkf, y0, 0.1, 5, cfg, nullptr);
  const TrackState prior = t.prior;
  VectorXd bad(4);
  bad << 1, std::numeric_limits<double>::quiet_NaN(), 1, 0;
  filter_step(t, bad, 0.1, 5, nullptr, cfg);
  EXPECT_TRUE(t.last_update_rejected);
  EXPECT_EQ(t.posterior, prior);
}

TEST(FilterStep, ColdStartMatchesAlgorithmOne) {
  TrackerConfig cfg;
  VectorXd y0(4);
  y0 << 3, -1, 7, 2;
  const double dt = 0.12;
  ObstacleTrack t = start_track(0, FilterMode::kDkf, y0, dt, 4, cfg, nullptr);
  TrackState lifted = TrackState::Zero();
  lifted(0) = 3;
  lifted(1) = -1;
  lifted(3) = 7;
  lifted(4) = 2;
  EXPECT_EQ(t.posterior, lifted);
  EXPECT_EQ(t.prior, TrackState(transition_matrix(dt) * lifted));
  const Eigen::MatrixXd u = observation_matrix(ObservationKind::kPositionVelocity);
  EXPECT_EQ(t.predicted_obs, VectorXd(u * t.prior));
}

TEST(FilterStep, PredictionChainIsExact) {
  TrackerConfig cfg;
  VectorXd y0(4);
  y0 << 3, -1, 7, 2;
  ObstacleTrack t = start_track(0, FilterMode::kDkf, y0, 0.1, 8, cfg, nullptr);
  auto sim = simulate_gss(cfg, 0.1, 6, ObservationKind::kPositionVelocity, 4);
  for (int i = 1; i < 6; ++i) {
    filter_step(t, sim.ys[i], 0.1, 8, nullptr, cfg);
    const Matrix6d trans = transition_matrix(0.1);
    for (int k = 0; k + 1 < 8; ++k) {
      EXPECT_EQ(t.horizon_preds[k + 1], TrackState(trans * t.horizon_preds[k]));
    }
    EXPECT_EQ(t.horizon_preds[0], TrackState(trans * t.posterior));
  }
}

TEST(FilterStep, DkfMatchesBatchConditioningOracle) {
  const TrackerConfig cfg;
  const double dt = 0.1;
  const auto kind = ObservationKind::kPositionVelocity;
  const auto sim = simulate_gss(cfg, dt, 10, kind, 99);
  ObstacleTrack t = start_track(0, FilterMode::kDkf, sim.ys[0], dt, 3, cfg,
                                nullptr);
  const Eigen::MatrixXd u = observation_matrix(kind);
  const Eigen::VectorXd m0 = t.posterior;
  const Eigen::MatrixXd p0 = cfg.p0 * Matrix6d::Identity();
  std::vector<VectorXd> ys;
  for (int step = 1; step <= 10; ++step) {
    ys.push_back(sim.ys[step]);
    filter_step(t, sim.ys[step], dt, 3, nullptr, cfg);
    const VectorXd oracle = oracles::batch_conditional_mean(
        transition_matrix(dt), u, process_noise(cfg, dt),
        measurement_noise(cfg, kind), m0, p0, ys, step);
    EXPECT_LE((t.posterior - oracle).cwiseAbs().maxCoeff(), 1e-9)
        << "step " << step;
  }
}

TEST(FilterStep, CovarianceStaysSymmetricPsd) {
  const TrackerConfig cfg;
  for (auto mode : {FilterMode::kKf, FilterMode::kDkf}) {
    const auto kind = observation_kind(mode);
    const auto sim = simulate_gss(cfg, 0.1, 40, kind, 7);
    ObstacleTrack t = start_track(0, mode, sim.ys[0], 0.1, 3, cfg, nullptr);
    for (int step = 1; step <= 40; ++step) {
      filter_step(t, sim.ys[step], 0.1, 3, nullptr, cfg);
      EXPECT_LE((t.covariance - t.covariance.transpose()).norm(), 1e-9);
      Eigen::SelfAdjointEigenSolver<Matrix6d> eig(t.covariance);
      EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
    }
  }
}

TEST(FilterStep, PredictOnlyAdvancesByTransition) {
  TrackerConfig cfg;
  VectorXd y0(4);
  y0 << 1, 1, 1, 1;
  ObstacleTrack t = start_track(0, FilterMode::kDkf, y0, 0.1, 4, cfg, nullptr);
  const TrackState prior = t.prior;
  predict_only(t, 0.1, 4, cfg);
  EXPECT_EQ(t.posterior, prior);
  EXPECT_EQ(t.prior, TrackState(transition_matrix(0.1) * prior));
}

TEST(Nmse, PerfectPredictionHitsFloor) {
  std::vector<Vec2> p = {{1, 2}, {3, 4}};
  EXPECT_EQ(nmse_db(p, p), -120.0);
}

TEST(Nmse, DirectFormula) {
  std::vector<Vec2> truth(5, Vec2(10, 0));
  std::vector<Vec2> pred(5, Vec2(11, 0));
  EXPECT_NEAR(nmse_db(pred, truth), -20.0, 1e-12);
}

TEST(Nmse, HandAveragedRatios) {
  // ratios 0.01 and 0.04 -> 10*log10(0.025)
  std::vector<Vec2> truth = {{10, 0}, {10, 0}};
  std::vector<Vec2> pred = {{11, 0}, {12, 0}};
  EXPECT_NEAR(nmse_db(pred, truth), 10.0 * std::log10(0.025), 1e-12);
}

TEST(Nmse, OriginStepsSkippedAndFlagged) {
  std::vector<Vec2> truth = {{0, 0}, {10, 0}};
  std::vector<Vec2> pred = {{1, 0}, {11, 0}};
  int skipped = 0;
  EXPECT_NEAR(nmse_db(pred, truth, &skipped), -20.0, 1e-12);
  EXPECT_EQ(skipped, 1);
  std::vector<Vec2> all_origin = {{0, 0}};
  std::vector<Vec2> p2 = {{1, 0}};
  EXPECT_THROW(nmse_db(p2, all_origin), std::domain_error);
}

TEST(TrackEval, AggregationOfScores) {
  const ScoreStats s = aggregate_vehicle_scores({-20.0, -30.0});
  EXPECT_NEAR(s.mean, -25.0, 1e-12);
  EXPECT_NEAR(s.std_dev, 5.0, 1e-12);
}

TEST(TrackEval, NoiselessConstantVelocityIsFloorFlat) {
  // Exact constant-velocity truth with noiseless position+velocity
  // observations: the cold start is exact, so every prediction is exact and
  // the profile sits at the -120 dB floor with zero std.
  Trajectory traj;
  const Matrix6d trans = transition_matrix(0.1);
  TrackState x = TrackState::Zero();
  x << 20.0, 1.5, 0.0, -5.0, 0.8, 0.0;
  const Eigen::MatrixXd u = observation_matrix(ObservationKind::kPositionVelocity);
  for (int t = 0; t < 30; ++t) {
    traj.truths.push_back(x);
    traj.observations.push_back(u * x);
    x = trans * x;
  }
  const auto res = track_eval({traj}, FilterMode::kDkf, nullptr, 10.0, 5);
  EXPECT_EQ(res.mean_db, -120.0);
  EXPECT_EQ(res.std_db, 0.0);
  for (double d : res.per_step_db) EXPECT_EQ(d, -120.0);
}

TEST(TrackEval, ShortTrajectorySkipped) {
  Trajectory good;
  const Eigen::MatrixXd u = observation_matrix(ObservationKind::kPositionVelocity);
  const Matrix6d trans = transition_matrix(0.1);
  TrackState x = TrackState::Zero();
  x << 5, 1, 0, 5, 0, 0;
  for (int t = 0; t < 20; ++t) {
    good.truths.push_back(x);
    good.observations.push_back(u * x);
    x = trans * x;
  }
  Trajectory tiny;
  tiny.truths.assign(3, x);
  tiny.observations.assign(3, VectorXd(u * x));
  const auto res = track_eval({good, tiny}, FilterMode::kDkf, nullptr, 10.0, 5);
  EXPECT_EQ(res.skipped_vehicles, 1);
  EXPECT_EQ(res.per_vehicle_db.size(), 1u);
}
