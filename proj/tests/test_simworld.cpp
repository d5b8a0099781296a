#include "dpnet/simworld.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace dpnet;

namespace {

Trace trace_from_speeds(const std::vector<double>& speeds) {
  Trace t;
  for (double v : speeds) {
    CycleRecord c;
    c.action = {v, 0.0};
    c.margins = Eigen::MatrixXd::Zero(1, 1);
    t.push_back(c);
  }
  return t;
}

}  // namespace

TEST(BuildScenario, DeterministicPerSeed) {
  const Scenario a = build_scenario("2D-2S", 5.0, 7);
  const Scenario b = build_scenario("2D-2S", 5.0, 7);
  ASSERT_EQ(a.obstacles.size(), b.obstacles.size());
  for (std::size_t i = 0; i < a.obstacles.size(); ++i) {
    EXPECT_EQ(a.obstacles[i].initial.x, b.obstacles[i].initial.x);
    EXPECT_EQ(a.obstacles[i].initial.y, b.obstacles[i].initial.y);
    EXPECT_EQ(a.obstacles[i].dims.first, b.obstacles[i].dims.first);
    ASSERT_EQ(a.obstacles[i].segments.size(), b.obstacles[i].segments.size());
    for (std::size_t s = 0; s < a.obstacles[i].segments.size(); ++s) {
      EXPECT_EQ(a.obstacles[i].segments[s].velocity,
                b.obstacles[i].segments[s].velocity);
    }
  }
  const Scenario c = build_scenario("2D-2S", 5.0, 8);
  EXPECT_NE(a.obstacles[0].initial.x, c.obstacles[0].initial.x);
}

TEST(BuildScenario, LabelContracts) {
  const Scenario one = build_scenario("1D-1S", 5.0, 3);
  EXPECT_EQ(one.obstacles.size(), 2u);
  int dynamic_count = 0;
  for (const auto& ob : one.obstacles) {
    if (!ob.segments.empty()) ++dynamic_count;
  }
  EXPECT_EQ(dynamic_count, 1);

  const Scenario six = build_scenario("6D-6S", 5.0, 3);
  EXPECT_EQ(six.obstacles.size(), 12u);
  EXPECT_THROW(build_scenario("9X", 5.0, 3), std::invalid_argument);
}

TEST(BuildScenario, ObstacleSpeedHonored) {
  const Scenario sc = build_scenario("2D-2S", 7.5, 11);
  for (const auto& ob : sc.obstacles) {
    if (ob.segments.empty()) continue;
    EXPECT_NEAR(ob.segments[0].velocity.norm(), 7.5, 1e-12);
  }
}

TEST(StepWorld, LinearMotion) {
  Scenario sc;
  ObstacleScript ob;
  ob.initial = {0, 0, 0};
  ob.segments.push_back({1e9, Vec2(5, 0)});
  sc.obstacles.push_back(ob);
  const auto w = step_world(sc, 1.0);
  EXPECT_NEAR(w[0].box.cx, 5.0, 1e-12);
  EXPECT_NEAR(w[0].box.cy, 0.0, 1e-12);
  EXPECT_EQ(w[0].velocity, Vec2(5, 0));
}

TEST(StepWorld, StaticHoldsPose) {
  Scenario sc;
  ObstacleScript ob;
  ob.initial = {3, -2, 0.5};
  sc.obstacles.push_back(ob);
  for (double t : {0.0, 1.5, 42.0}) {
    const auto w = step_world(sc, t);
    EXPECT_EQ(w[0].box.cx, 3.0);
    EXPECT_EQ(w[0].box.cy, -2.0);
    EXPECT_EQ(w[0].velocity, Vec2(0, 0));
  }
}

TEST(StepWorld, PiecewiseIntegration) {
  Scenario sc;
  ObstacleScript ob;
  ob.initial = {0, 0, 0};
  ob.segments.push_back({1.0, Vec2(5, 0)});
  ob.segments.push_back({1e9, Vec2(0, 5)});
  sc.obstacles.push_back(ob);
  const auto w = step_world(sc, 1.5);
  EXPECT_NEAR(w[0].box.cx, 5.0, 1e-12);
  EXPECT_NEAR(w[0].box.cy, 2.5, 1e-12);
  EXPECT_THROW(step_world(sc, -0.1), std::invalid_argument);
}

TEST(ComputeMetrics, ConstantSpeed) {
  const EpisodeMetrics m = compute_metrics(trace_from_speeds({1, 1, 1}), 0.1);
  EXPECT_EQ(m.avg_acc, 0.0);
  EXPECT_EQ(m.avg_jerk, 0.0);
}

TEST(ComputeMetrics, LinearRamp) {
  const EpisodeMetrics m = compute_metrics(trace_from_speeds({0, 1, 2}), 0.1);
  EXPECT_NEAR(m.avg_acc, 10.0, 1e-12);
  EXPECT_NEAR(m.max_acc, 10.0, 1e-12);
  EXPECT_NEAR(m.avg_jerk, 0.0, 1e-12);
}

TEST(ComputeMetrics, HandFiniteDifferences) {
  const EpisodeMetrics m = compute_metrics(trace_from_speeds({0, 1, 0}), 0.1);
  EXPECT_NEAR(m.avg_acc, 10.0, 1e-12);
  EXPECT_NEAR(m.max_acc, 10.0, 1e-12);
  EXPECT_NEAR(m.avg_jerk, 200.0, 1e-12);
}

TEST(ComputeMetrics, TooShortThrows) {
  EXPECT_THROW(compute_metrics(trace_from_speeds({1}), 0.1),
               std::domain_error);
}

TEST(RunEpisode, EmptyScenarioPasses) {
  const Scenario sc = build_scenario("empty", 5.0, 1);
  EpisodeConfig cfg;
  const EpisodeResult res = run_episode(sc, cfg);
  EXPECT_TRUE(res.metrics.passed);
  EXPECT_FALSE(res.metrics.collided);
  EXPECT_FALSE(res.metrics.timed_out);
  // goal radius 1 m: pass time ~ (40 - 1) / 5
  EXPECT_NEAR(res.metrics.pass_time, 7.8, 0.8);
}

TEST(RunEpisode, ObstacleOnGoalNeverPasses) {
  Scenario sc = build_scenario("empty", 5.0, 1);
  ObstacleScript ob;
  ob.dims = {2.0, 2.0};
  ob.initial = {40.0, 0.0, 0.0};
  sc.obstacles.push_back(ob);
  EpisodeConfig cfg;
  cfg.timeout_s = 20.0;
  const EpisodeResult res = run_episode(sc, cfg);
  EXPECT_FALSE(res.metrics.passed);
  EXPECT_TRUE(res.metrics.collided || res.metrics.timed_out);
  EXPECT_EQ((res.metrics.passed ? 1 : 0) + (res.metrics.collided ? 1 : 0) +
                (res.metrics.timed_out ? 1 : 0),
            1);
}

TEST(RunEpisode, StartInsideObstacleCollides) {
  Scenario sc = build_scenario("empty", 5.0, 1);
  ObstacleScript ob;
  ob.dims = {8.0, 8.0};
  ob.initial = {0.0, 0.0, 0.0};
  sc.obstacles.push_back(ob);
  EpisodeConfig cfg;
  const EpisodeResult res = run_episode(sc, cfg);
  EXPECT_TRUE(res.metrics.collided);
}

TEST(RunEpisode, SeededReplayIsBitIdentical) {
  const Scenario sc = build_scenario("2D-2S", 5.0, 17);
  EpisodeConfig cfg;
  cfg.sensor.seed = 17;
  const EpisodeResult a = run_episode(sc, cfg);
  const EpisodeResult b = run_episode(sc, cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  EXPECT_EQ(trace_signature(a.trace), trace_signature(b.trace));
  EXPECT_EQ(a.metrics.passed, b.metrics.passed);
}

TEST(RunEpisode, FullPipelineProducesTrackedObstacles) {
  const Scenario sc = build_scenario("1D-1S", 5.0, 5);
  EpisodeConfig cfg;
  cfg.sensor.seed = 5;
  const EpisodeResult res = run_episode(sc, cfg);
  ASSERT_GE(res.trace.size(), 5u);
  bool any_tracked = false;
  for (const auto& c : res.trace) {
    for (const auto& o : c.obstacles) any_tracked = any_tracked || o.tracked;
  }
  EXPECT_TRUE(any_tracked);
  EXPECT_TRUE(res.error.empty());
}

TEST(TraceIo, RoundTrip) {
  const Scenario sc = build_scenario("1D-1S", 5.0, 9);
  EpisodeConfig cfg;
  cfg.sensor.seed = 9;
  cfg.timeout_s = 2.0;
  const EpisodeResult res = run_episode(sc, cfg);
  std::stringstream ss;
  write_trace(ss, res.trace);
  const Trace back = read_trace(ss);
  ASSERT_EQ(back.size(), res.trace.size());
  EXPECT_EQ(trace_signature(back), trace_signature(res.trace));
}

TEST(PredictedBoxes, HeadingFollowsVelocity) {
  TrackerConfig tcfg;
  VectorXd y0(4);
  y0 << 0, 3, 0, 4;  // moving at atan2(4,3)
  ObstacleTrack track =
      start_track(0, FilterMode::kDkf, y0, 0.1, 5, tcfg, nullptr, {2.0, 1.0});
  const auto boxes = predicted_boxes(track, 0.0);
  ASSERT_EQ(boxes.size(), 5u);
  EXPECT_NEAR(boxes[0].heading, std::atan2(4.0, 3.0), 1e-12);
  EXPECT_NEAR(boxes[0].half_length, 1.0, 1e-12);
}
