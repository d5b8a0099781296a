#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpnet/doppler.hpp"
#include "dpnet/dtmpc.hpp"
#include "dpnet/rng.hpp"
#include "dpnet/tracker.hpp"

namespace dpnet {

struct VelocitySegment {
  double duration{0.0};  // seconds; last segment may be infinite
  Vec2 velocity{0.0, 0.0};
};

struct ObstacleScript {
  std::pair<double, double> dims{1.5, 1.0};  // length, width
  RobotState initial;                        // pose at t=0
  std::vector<VelocitySegment> segments;     // empty => static
};

struct Scenario {
  double arena_min_x{0.0}, arena_max_x{44.0};
  double arena_min_y{-15.0}, arena_max_y{15.0};
  RobotState start{0.0, 0.0, 0.0};
  Vec2 goal{40.0, 0.0};
  double cruise_speed{5.0};
  std::vector<ObstacleScript> obstacles;
  std::string clutter_label{"custom"};
  std::uint64_t seed{0};
};

/// Deterministic procedural scene at one of the labeled clutter levels:
/// static boxes sit off the reference line, dynamic obstacles cross the
/// corridor on fixed directions timed near the robot's nominal transit.
inline Scenario build_scenario(const std::string& level,
                               double obstacle_speed, std::uint64_t seed) {
  int n_dyn = 0, n_stat = 0;
  if (level == "1D-1S") {
    n_dyn = n_stat = 1;
  } else if (level == "2D-2S") {
    n_dyn = n_stat = 2;
  } else if (level == "4D-4S") {
    n_dyn = n_stat = 4;
  } else if (level == "6D-6S") {
    n_dyn = n_stat = 6;
  } else if (level == "empty") {
    n_dyn = n_stat = 0;
  } else {
    throw std::invalid_argument("build_scenario: unknown clutter level '" +
                                level + "'");
  }
  Scenario sc;
  sc.clutter_label = level;
  sc.seed = seed;
  auto rng = make_engine(
      mix64(seed, std::hash<std::string>{}(level),
            std::bit_cast<std::uint64_t>(obstacle_speed)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  for (int i = 0; i < n_stat; ++i) {
    ObstacleScript ob;
    ob.dims = {1.2 + 0.8 * u01(rng), 1.2 + 0.8 * u01(rng)};
    const double x = 10.0 + 22.0 * (i + u01(rng)) / std::max(n_stat, 1);
    const double side = u01(rng) < 0.5 ? -1.0 : 1.0;
    const double y = side * (1.6 + 2.8 * u01(rng));
    ob.initial = {x, y, M_PI * (2.0 * u01(rng) - 1.0)};
    sc.obstacles.push_back(ob);
  }
  for (int i = 0; i < n_dyn; ++i) {
    ObstacleScript ob;
    ob.dims = {1.5, 1.0};
    const double x_cross = 10.0 + 24.0 * (i + u01(rng)) / std::max(n_dyn, 1);
    const double side = u01(rng) < 0.5 ? -1.0 : 1.0;
    const double angle_jitter = 0.45 * (2.0 * u01(rng) - 1.0);
    // crossing direction: toward the corridor with some slant
    const Vec2 dir(std::sin(angle_jitter), -side * std::cos(angle_jitter));
    const double t_cross =
        x_cross / sc.cruise_speed + 1.0 * (2.0 * u01(rng) - 1.0);
    const Vec2 cross_point(x_cross, 0.0);
    const Vec2 vel = obstacle_speed * dir;
    const Vec2 start_pos = cross_point - t_cross * vel;
    ob.initial = {start_pos.x(), start_pos.y(),
                  std::atan2(vel.y(), vel.x())};
    ob.segments.push_back({1e9, vel});
    sc.obstacles.push_back(ob);
  }
  return sc;
}

/// Closed-form pose and velocity of every obstacle at the given time.
inline std::vector<WorldObstacle> step_world(const Scenario& sc, double time) {
  if (time < 0.0) throw std::invalid_argument("step_world: negative time");
  std::vector<WorldObstacle> out;
  out.reserve(sc.obstacles.size());
  for (std::size_t i = 0; i < sc.obstacles.size(); ++i) {
    const ObstacleScript& ob = sc.obstacles[i];
    Vec2 pos(ob.initial.x, ob.initial.y);
    Vec2 vel(0.0, 0.0);
    double remaining = time;
    for (const VelocitySegment& seg : ob.segments) {
      const double span = std::min(remaining, seg.duration);
      pos += span * seg.velocity;
      remaining -= span;
      if (remaining <= 0.0) {
        vel = seg.velocity;
        break;
      }
    }
    if (remaining > 0.0 && !ob.segments.empty()) {
      vel = Vec2(0.0, 0.0);  // script exhausted: obstacle holds position
    }
    WorldObstacle w;
    w.box = box_from_state(pos.x(), pos.y(), ob.initial.theta, ob.dims.first,
                           ob.dims.second);
    w.velocity = vel;
    w.id = static_cast<int>(i);
    out.push_back(w);
  }
  return out;
}

struct EpisodeMetrics {
  double avg_acc{0.0};
  double max_acc{0.0};
  double avg_jerk{0.0};
  double ite_time{0.0};
  double pass_time{0.0};
  bool passed{false};
  bool collided{false};
  bool timed_out{false};
};

struct ObstacleCycleRecord {
  int id{0};
  RobotState truth_pose;
  Vec2 truth_velocity{0.0, 0.0};
  TrackState estimate{TrackState::Zero()};
  bool tracked{false};
  bool seen{false};
};

struct CycleRecord {
  double time{0.0};
  RobotState ego;
  ControlAction action;
  std::vector<ObstacleCycleRecord> obstacles;
  Eigen::MatrixXd margins;  // H x N margins used this cycle
  int solver_iterations{0};
  double primal_residual{0.0};
  double dual_residual{0.0};
  double tracking_cost{0.0};
  double collision_loss{0.0};
  double solver_wall_s{0.0};  // wall-clock; excluded from determinism checks
};

using Trace = std::vector<CycleRecord>;

struct EpisodeConfig {
  SensorConfig sensor;
  TrackerConfig tracker;
  TuningConfig tuning;
  PlannerConfig planner;
  FilterMode tracker_mode{FilterMode::kDkf};
  bool dt_enabled{true};  // false = the DT-MPC-disabled ablation
  double timeout_s{60.0};
  double goal_radius{1.0};
};

struct EpisodeResult {
  EpisodeMetrics metrics;
  Trace trace;
  std::string error;  // non-empty when the planner failed mid-episode
};

/// Six episode metrics from the executed trace. Accelerations and jerks are
/// first differences of the executed linear speed.
inline EpisodeMetrics compute_metrics(const Trace& trace, double dt) {
  if (trace.size() < 2) {
    throw std::domain_error("compute_metrics: trace too short");
  }
  EpisodeMetrics m;
  std::vector<double> acc;
  for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
    acc.push_back((trace[i + 1].action.v - trace[i].action.v) / dt);
  }
  double acc_abs = 0.0;
  for (double a : acc) {
    acc_abs += std::abs(a);
    m.max_acc = std::max(m.max_acc, std::abs(a));
  }
  m.avg_acc = acc_abs / acc.size();
  if (acc.size() >= 2) {
    double jerk_abs = 0.0;
    for (std::size_t i = 0; i + 1 < acc.size(); ++i) {
      jerk_abs += std::abs((acc[i + 1] - acc[i]) / dt);
    }
    m.avg_jerk = jerk_abs / (acc.size() - 1);
  }
  double wall = 0.0;
  for (const CycleRecord& c : trace) wall += c.solver_wall_s;
  m.ite_time = wall / trace.size();
  return m;
}

/// Predicted obstacle boxes over the horizon from a track's state
/// predictions; headings follow the predicted velocity direction.
inline std::vector<OrientedBox> predicted_boxes(const ObstacleTrack& track,
                                                double fallback_heading) {
  std::vector<OrientedBox> boxes;
  boxes.reserve(track.horizon_preds.size());
  double heading = fallback_heading;
  for (const TrackState& x : track.horizon_preds) {
    const double speed = std::hypot(x(1), x(4));
    if (speed > 0.3) heading = std::atan2(x(4), x(1));
    boxes.push_back(box_from_state(x(0), x(3), heading,
                                   track.box_dims.first,
                                   track.box_dims.second));
  }
  return boxes;
}

/// Runs one closed-loop episode: scan -> group -> rectify -> filter ->
/// tune -> plan -> act at a fixed period. Terminates on goal, exact-geometry
/// collision, or timeout. Fully deterministic apart from the recorded solver
/// wall times.
inline EpisodeResult run_episode(const Scenario& sc, const EpisodeConfig& cfg,
                                 const GainNet* net = nullptr) {
  EpisodeResult out;
  const double dt = cfg.planner.dt;
  const int horizon = cfg.planner.horizon;
  const Vec2 start_pos(sc.start.x, sc.start.y);
  const Vec2 line = sc.goal - start_pos;
  const double line_len = line.norm();
  const Vec2 line_dir = line_len > 1e-9 ? Vec2(line / line_len) : Vec2(1, 0);
  const double line_heading = std::atan2(line_dir.y(), line_dir.x());

  RobotState ego = sc.start;
  ControlAction last_action{0.0, 0.0};
  std::map<int, ObstacleTrack> tracks;
  std::map<int, double> last_heading;
  std::optional<HorizonSolution> previous;
  const ObservationKind kind = observation_kind(cfg.tracker_mode);

  double time = 0.0;
  for (;;) {
    const std::vector<WorldObstacle> world = step_world(sc, time);

    CycleRecord rec;
    rec.time = time;
    rec.ego = ego;

    // Sense and track.
    const Vec3 sensor_pos(ego.x, ego.y, cfg.sensor.mount_height);
    const Vec2 ego_vel(last_action.v * std::cos(ego.theta),
                       last_action.v * std::sin(ego.theta));
    const DopplerScan frame =
        scan(world, sensor_pos, cfg.sensor, time,
             Vec3(ego_vel.x(), ego_vel.y(), 0.0));
    std::vector<std::pair<int, OrientedBox>> id_boxes;
    for (const WorldObstacle& w : world) id_boxes.push_back({w.id, w.box});
    const auto groups = group_points(frame, id_boxes);

    for (const WorldObstacle& w : world) {
      ObstacleCycleRecord orec;
      orec.id = w.id;
      orec.truth_pose = {w.box.cx, w.box.cy, w.box.heading};
      orec.truth_velocity = w.velocity;
      const auto git = groups.find(w.id);
      const bool seen = git != groups.end() && !git->second.empty();
      orec.seen = seen;
      auto tit = tracks.find(w.id);
      if (seen) {
        const Observation obs = observation_from_scan(
            git->second, w.box, sensor_pos, kind, std::nullopt, ego_vel);
        if (tit == tracks.end()) {
          tracks.emplace(w.id, start_track(w.id, cfg.tracker_mode, obs.y, dt,
                                           horizon, cfg.tracker, net,
                                           {w.box.half_length * 2.0,
                                            w.box.half_width * 2.0}));
        } else {
          filter_step(tit->second, obs.y, dt, horizon, net, cfg.tracker,
                      obs.degraded);
        }
        last_heading[w.id] = w.box.heading;
      } else if (tit != tracks.end()) {
        predict_only(tit->second, dt, horizon, cfg.tracker);
      }
      tit = tracks.find(w.id);
      if (tit != tracks.end()) {
        orec.tracked = true;
        orec.estimate = tit->second.posterior;
      }
      rec.obstacles.push_back(orec);
    }

    // Reference waypoints by arc-length projection onto the straight line.
    const double progress = std::clamp(
        (Vec2(ego.x, ego.y) - start_pos).dot(line_dir), 0.0, line_len);
    std::vector<RobotState> waypoints(horizon);
    for (int k = 0; k < horizon; ++k) {
      const double s =
          std::min(line_len, progress + sc.cruise_speed * dt * (k + 1));
      const Vec2 p = start_pos + s * line_dir;
      waypoints[k] = {p.x(), p.y(), line_heading};
    }

    // Predictions for every currently tracked obstacle, ordered by id.
    std::vector<std::vector<OrientedBox>> preds;
    for (const auto& [id, track] : tracks) {
      const auto hit = last_heading.find(id);
      preds.push_back(predicted_boxes(
          track, hit != last_heading.end() ? hit->second : 0.0));
    }

    PlanStepResult plan;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      plan = plan_step(ego, waypoints, preds,
                       previous.has_value() ? &*previous : nullptr,
                       cfg.tuning, cfg.planner, cfg.dt_enabled);
    } catch (const std::exception& e) {
      out.error = e.what();
      out.metrics.timed_out = true;
      out.trace.push_back(rec);
      return out;
    }
    rec.solver_wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    previous = plan.solution;
    last_action = plan.action;
    rec.action = plan.action;
    rec.margins = plan.margins.phi;
    rec.solver_iterations = plan.solution.diagnostics.iterations;
    rec.primal_residual = plan.solution.diagnostics.primal_residual;
    rec.dual_residual = plan.solution.diagnostics.dual_residual;
    rec.tracking_cost = plan.solution.diagnostics.tracking_cost;
    rec.collision_loss = plan.solution.diagnostics.collision_loss;
    out.trace.push_back(rec);

    // Act and advance the world.
    ego = kinematic_step(ego, plan.action, dt);
    time += dt;

    const OrientedBox ego_box =
        box_from_state(ego.x, ego.y, ego.theta, cfg.planner.robot_dims.first,
                       cfg.planner.robot_dims.second);
    bool collided = false;
    for (const WorldObstacle& w : step_world(sc, time)) {
      if (min_distance(ego_box, w.box) == 0.0) {
        collided = true;
        break;
      }
    }
    if (collided) {
      out.metrics.collided = true;
      break;
    }
    if ((Vec2(ego.x, ego.y) - sc.goal).norm() <= cfg.goal_radius) {
      out.metrics.passed = true;
      break;
    }
    if (time > cfg.timeout_s) {
      out.metrics.timed_out = true;
      break;
    }
  }

  if (out.trace.size() >= 2) {
    const EpisodeMetrics computed = compute_metrics(out.trace, dt);
    out.metrics.avg_acc = computed.avg_acc;
    out.metrics.max_acc = computed.max_acc;
    out.metrics.avg_jerk = computed.avg_jerk;
    out.metrics.ite_time = computed.ite_time;
  }
  if (out.metrics.passed) out.metrics.pass_time = time;
  return out;
}

// ---------------------------------------------------------------------------
// Trace files: one JSON record per cycle, line-delimited.
// ---------------------------------------------------------------------------

inline void write_trace(std::ostream& os, const Trace& trace) {
  for (const CycleRecord& c : trace) {
    nlohmann::json row;
    row["t"] = c.time;
    row["ego"] = {c.ego.x, c.ego.y, c.ego.theta};
    row["act"] = {c.action.v, c.action.psi};
    nlohmann::json obs = nlohmann::json::array();
    for (const ObstacleCycleRecord& o : c.obstacles) {
      nlohmann::json j;
      j["id"] = o.id;
      j["truth"] = {o.truth_pose.x, o.truth_pose.y, o.truth_pose.theta,
                    o.truth_velocity.x(), o.truth_velocity.y()};
      if (o.tracked) {
        j["est"] = {o.estimate(0), o.estimate(1), o.estimate(2),
                    o.estimate(3), o.estimate(4), o.estimate(5)};
      }
      j["seen"] = o.seen;
      obs.push_back(j);
    }
    row["obs"] = obs;
    nlohmann::json phi = nlohmann::json::array();
    for (Eigen::Index h = 0; h < c.margins.rows(); ++h) {
      nlohmann::json prow = nlohmann::json::array();
      for (Eigen::Index n = 0; n < c.margins.cols(); ++n) {
        prow.push_back(c.margins(h, n));
      }
      phi.push_back(prow);
    }
    row["phi"] = phi;
    row["solver"] = {{"it", c.solver_iterations},
                     {"pr", c.primal_residual},
                     {"dr", c.dual_residual},
                     {"track", c.tracking_cost},
                     {"coll", c.collision_loss},
                     {"wall_s", c.solver_wall_s}};
    os << row.dump() << '\n';
  }
}

inline Trace read_trace(std::istream& is) {
  Trace trace;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json row = nlohmann::json::parse(line);
    CycleRecord c;
    c.time = row.at("t").get<double>();
    c.ego = {row.at("ego")[0], row.at("ego")[1], row.at("ego")[2]};
    c.action = {row.at("act")[0], row.at("act")[1]};
    for (const auto& j : row.at("obs")) {
      ObstacleCycleRecord o;
      o.id = j.at("id").get<int>();
      const auto& tr = j.at("truth");
      o.truth_pose = {tr[0], tr[1], tr[2]};
      o.truth_velocity = Vec2(tr[3], tr[4]);
      if (j.contains("est")) {
        o.tracked = true;
        for (int k = 0; k < 6; ++k) o.estimate(k) = j.at("est")[k];
      }
      o.seen = j.at("seen").get<bool>();
      c.obstacles.push_back(o);
    }
    const auto& phi = row.at("phi");
    if (!phi.empty()) {
      c.margins.resize(phi.size(), phi[0].size());
      for (std::size_t h = 0; h < phi.size(); ++h) {
        for (std::size_t n = 0; n < phi[h].size(); ++n) {
          c.margins(h, n) = phi[h][n];
        }
      }
    }
    const auto& s = row.at("solver");
    c.solver_iterations = s.at("it").get<int>();
    c.primal_residual = s.at("pr").get<double>();
    c.dual_residual = s.at("dr").get<double>();
    c.tracking_cost = s.at("track").get<double>();
    c.collision_loss = s.at("coll").get<double>();
    c.solver_wall_s = s.at("wall_s").get<double>();
    trace.push_back(c);
  }
  return trace;
}

/// Hash over the deterministic trace fields (solver wall time excluded).
inline std::uint64_t trace_signature(const Trace& trace) {
  std::uint64_t h = 0x9E3779B97F4A7C15ULL;
  const auto mix_double = [&h](double v) {
    h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  };
  for (const CycleRecord& c : trace) {
    mix_double(c.time);
    mix_double(c.ego.x);
    mix_double(c.ego.y);
    mix_double(c.ego.theta);
    mix_double(c.action.v);
    mix_double(c.action.psi);
    for (const ObstacleCycleRecord& o : c.obstacles) {
      h = mix64(h ^ static_cast<std::uint64_t>(o.id));
      mix_double(o.truth_pose.x);
      mix_double(o.truth_pose.y);
      for (int k = 0; k < 6; ++k) mix_double(o.estimate(k));
    }
    for (Eigen::Index i = 0; i < c.margins.size(); ++i) {
      mix_double(c.margins.data()[i]);
    }
    h = mix64(h ^ static_cast<std::uint64_t>(c.solver_iterations));
  }
  return h;
}

}  // namespace dpnet
