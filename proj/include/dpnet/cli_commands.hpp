#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dpnet/config.hpp"

namespace dpnet {

inline constexpr const char* kReportVersionLine = "# dpnet-report-v1";
inline constexpr const char* kTraceVersionLine = "{\"dpnet_trace\":1}";

namespace detail {

inline std::ofstream open_report(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << kReportVersionLine << "\n";
  os << std::setprecision(17);
  return os;
}

inline const char* outcome_name(const EpisodeMetrics& m) {
  if (m.passed) return "passed";
  if (m.collided) return "collided";
  return "timed_out";
}

}  // namespace detail

inline EpisodeConfig episode_config(const ExperimentConfig& cfg) {
  EpisodeConfig ec;
  ec.sensor = cfg.sensor;
  ec.tracker = cfg.tracker;
  ec.tuning = cfg.tuning;
  ec.planner = cfg.planner;
  ec.tracker_mode = filter_mode_from_string(cfg.tracker_mode);
  ec.timeout_s = cfg.timeout_s;
  ec.goal_radius = cfg.goal_radius;
  return ec;
}

struct BatchResult {
  std::vector<EpisodeResult> episodes;
  double pass_rate{0.0};
};

/// Runs seeded episodes across worker threads; per-trial seeds derive from
/// the batch seed, and aggregation is ordered by trial index.
inline BatchResult run_batch(const ExperimentConfig& cfg,
                             const std::string& level, double speed,
                             bool dt_enabled, int trials,
                             std::uint64_t batch_seed, int threads,
                             const GainNet* net) {
  (void)build_scenario(level, speed, 0);  // validate the label up front
  BatchResult out;
  out.episodes.resize(trials);
  std::atomic<int> next{0};
  const int workers = std::max(1, threads);
  auto work = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= trials) return;
      try {
        const Scenario sc =
            build_scenario(level, speed, mix64(batch_seed, 0xA11, i));
        EpisodeConfig ec = episode_config(cfg);
        ec.dt_enabled = dt_enabled;
        ec.sensor.seed = mix64(batch_seed, 0xBEA, i);
        out.episodes[i] = run_episode(sc, ec, net);
      } catch (const std::exception& e) {
        out.episodes[i].error = e.what();
        out.episodes[i].metrics.timed_out = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  int passed = 0;
  for (const auto& e : out.episodes) passed += e.metrics.passed ? 1 : 0;
  out.pass_rate = trials > 0 ? 100.0 * passed / trials : 0.0;
  return out;
}

/// simulate: seeded episode batch -> report.csv (deterministic columns) and
/// report_timing.csv (wall-clock solver means, kept out of the byte-stable
/// report), plus optional per-episode trace files.
inline int cmd_simulate(const ExperimentConfig& cfg, int trials,
                        const std::string& mode, int threads,
                        bool write_traces, const std::string& weights_path,
                        std::ostream& log = std::cerr) {
  if (mode != "dpnet" && mode != "ablation") {
    log << "simulate: mode must be 'dpnet' or 'ablation'\n";
    return 1;
  }
  const FilterMode fmode = filter_mode_from_string(cfg.tracker_mode);
  std::optional<GainNet> net;
  if (uses_learned_gain(fmode)) {
    if (weights_path.empty()) {
      log << "simulate: tracker mode '" << cfg.tracker_mode
          << "' needs --weights\n";
      return 1;
    }
    net = load_weights(weights_path);
    if (net->obs_dim != obs_dim(observation_kind(fmode))) {
      log << "simulate: weights obs_dim mismatch\n";
      return 1;
    }
  }
  try {
    (void)build_scenario(cfg.scenario_level, cfg.obstacle_speed, 0);
  } catch (const std::invalid_argument& e) {
    log << "simulate: scenario.level: " << e.what() << "\n";
    return 1;
  }
  const BatchResult batch =
      run_batch(cfg, cfg.scenario_level, cfg.obstacle_speed, mode == "dpnet",
                trials, cfg.seed, threads, net ? &*net : nullptr);

  const std::filesystem::path out_dir(cfg.out_dir);
  auto report = detail::open_report(out_dir / "report.csv");
  report << "trial,level,speed,mode,tracker,outcome,pass_time,avg_acc,"
            "max_acc,avg_jerk,cycles,pass_rate\n";
  double sum_acc = 0.0, sum_max = 0.0, sum_jerk = 0.0, sum_pass_time = 0.0;
  long sum_cycles = 0;
  int passed = 0;
  for (int i = 0; i < trials; ++i) {
    const EpisodeMetrics& m = batch.episodes[i].metrics;
    report << i << ',' << cfg.scenario_level << ',' << cfg.obstacle_speed
           << ',' << mode << ',' << cfg.tracker_mode << ','
           << detail::outcome_name(m) << ',' << m.pass_time << ','
           << m.avg_acc << ',' << m.max_acc << ',' << m.avg_jerk << ','
           << batch.episodes[i].trace.size() << ",\n";
    sum_acc += m.avg_acc;
    sum_max += m.max_acc;
    sum_jerk += m.avg_jerk;
    sum_cycles += static_cast<long>(batch.episodes[i].trace.size());
    if (m.passed) {
      ++passed;
      sum_pass_time += m.pass_time;
    }
  }
  const double n = std::max(trials, 1);
  report << "aggregate," << cfg.scenario_level << ',' << cfg.obstacle_speed
         << ',' << mode << ',' << cfg.tracker_mode << ",,"
         << (passed > 0 ? sum_pass_time / passed : 0.0) << ','
         << sum_acc / n << ',' << sum_max / n << ',' << sum_jerk / n << ','
         << sum_cycles / n << ',' << batch.pass_rate << "\n";
  report.close();

  auto timing = detail::open_report(out_dir / "report_timing.csv");
  timing << "trial,ite_time\n";
  double sum_ite = 0.0;
  for (int i = 0; i < trials; ++i) {
    timing << i << ',' << batch.episodes[i].metrics.ite_time << "\n";
    sum_ite += batch.episodes[i].metrics.ite_time;
  }
  timing << "aggregate," << sum_ite / n << "\n";
  timing.close();

  if (write_traces) {
    for (int i = 0; i < trials; ++i) {
      std::ostringstream name;
      name << "trace_" << std::setw(4) << std::setfill('0') << i << ".jsonl";
      std::ofstream os(out_dir / name.str());
      os << kTraceVersionLine << "\n";
      os << std::setprecision(17);
      write_trace(os, batch.episodes[i].trace);
    }
  }
  log << "simulate: " << trials << " trials, pass rate " << batch.pass_rate
      << "%\n";
  return 0;
}

/// train: synthetic benchmark -> trained gain network + loss curve table.
inline int cmd_train(const ExperimentConfig& cfg, const std::string& mode,
                     const std::string& out_weights,
                     std::ostream& log = std::cerr) {
  const FilterMode fmode = filter_mode_from_string(mode);
  if (!uses_learned_gain(fmode)) {
    log << "train: mode must be 'knet' or 'dknet'\n";
    return 1;
  }
  const ObservationKind kind = observation_kind(fmode);
  SynthConfig synth = cfg.synth;
  synth.seed = mix64(cfg.seed, 0x7121A);
  const SynthDataset ds = synth_benchmark(synth);
  std::vector<Trajectory> data = ds.trajectories;
  if (kind == ObservationKind::kPositionOnly) {
    for (Trajectory& t : data) t = to_position_only(t);
  }
  GainNet net = init_gainnet(obs_dim(kind), cfg.gain_hidden_dim,
                             mix64(cfg.seed, 0x1417));
  TrainConfig tc = cfg.train;
  tc.seed = mix64(cfg.seed, 0x7121B);
  const TrainResult result =
      train_gainnet(std::move(net), data, kind, 1.0 / synth.freq_hz, tc);

  const std::filesystem::path out_dir(cfg.out_dir);
  auto curve = detail::open_report(out_dir / "loss_curve.csv");
  curve << "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
    curve << e << ',' << result.loss_curve[e] << "\n";
  }
  curve.close();

  const std::string path =
      result.diverged ? out_weights + ".diverged" : out_weights;
  std::filesystem::create_directories(
      std::filesystem::path(path).parent_path().empty()
          ? "."
          : std::filesystem::path(path).parent_path());
  save_weights(result.net, path);
  if (result.diverged) {
    log << "train: diverged; last finite weights saved to " << path << "\n";
    return 2;
  }
  log << "train: " << result.loss_curve.size() << " epochs, final loss "
      << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back()) << "\n";
  return 0;
}

/// track-eval: dB-NMSE tables for one filter mode on the synthetic
/// benchmark, plus the per-horizon-step profile.
inline int cmd_track_eval(const ExperimentConfig& cfg, const std::string& mode,
                          double freq_hz, int horizon,
                          const std::string& weights_path,
                          const std::string& family,
                          std::ostream& log = std::cerr) {
  const FilterMode fmode = filter_mode_from_string(mode);
  std::optional<GainNet> net;
  if (uses_learned_gain(fmode)) {
    if (weights_path.empty()) {
      log << "track-eval: mode '" << mode << "' needs --weights\n";
      return 1;
    }
    net = load_weights(weights_path);
    if (net->obs_dim != obs_dim(observation_kind(fmode))) {
      log << "track-eval: weights obs_dim mismatch\n";
      return 1;
    }
  }
  SynthConfig synth = cfg.synth;
  synth.freq_hz = freq_hz;
  synth.seed = mix64(cfg.seed, 0xE7A1);
  const SynthDataset ds = synth_benchmark(synth);
  std::vector<Trajectory> data;
  if (family == "all") {
    data = ds.trajectories;
  } else {
    MotionFamily f;
    if (family == "constant") {
      f = MotionFamily::kConstantVelocity;
    } else if (family == "accelerating") {
      f = MotionFamily::kAccelerating;
    } else if (family == "turning") {
      f = MotionFamily::kTurning;
    } else {
      log << "track-eval: unknown family '" << family << "'\n";
      return 1;
    }
    data = family_subset(ds, f);
  }
  if (observation_kind(fmode) == ObservationKind::kPositionOnly) {
    for (Trajectory& t : data) t = to_position_only(t);
  }
  const TrackEvalResult res = track_eval(data, fmode, net ? &*net : nullptr,
                                         freq_hz, horizon, cfg.tracker);

  const std::filesystem::path out_dir(cfg.out_dir);
  auto nmse = detail::open_report(out_dir / ("nmse_" + mode + ".csv"));
  nmse << "scenario,family,mode,freq_hz,horizon,mean_db,std_db,vehicles,"
          "skipped\n";
  nmse << "synthetic," << family << ',' << mode << ',' << freq_hz << ','
       << horizon << ',' << res.mean_db << ',' << res.std_db << ','
       << res.per_vehicle_db.size() << ',' << res.skipped_vehicles << "\n";
  nmse.close();
  auto steps = detail::open_report(out_dir / ("nmse_steps_" + mode + ".csv"));
  steps << "mode,freq_hz,horizon,step,mean_db\n";
  for (int k = 0; k < horizon; ++k) {
    steps << mode << ',' << freq_hz << ',' << horizon << ',' << (k + 1) << ','
          << res.per_step_db[k] << "\n";
  }
  steps.close();
  log << "track-eval: " << mode << " @" << freq_hz << " Hz H=" << horizon
      << " -> " << res.mean_db << " +- " << res.std_db << " dB\n";
  return 0;
}

struct ScalingRow {
  int obstacle_count{0};
  double mean_latency_s{0.0};
};

/// Batch-update latency versus tracked-obstacle count (scaling benchmark).
inline std::vector<ScalingRow> tracker_scaling_benchmark(
    const ExperimentConfig& cfg, FilterMode fmode, const GainNet* net,
    int max_count, int frames) {
  const double dt = 1.0 / cfg.synth.freq_hz;
  const int horizon = cfg.planner.horizon;
  std::vector<ScalingRow> rows;
  SynthConfig synth = cfg.synth;
  synth.trajectories = max_count;
  synth.steps = 16;
  synth.seed = mix64(cfg.seed, 0xBE9C);
  const SynthDataset ds = synth_benchmark(synth);
  const ObservationKind kind = observation_kind(fmode);
  for (int count = 1; count <= max_count; ++count) {
    std::vector<ObstacleTrack> tracks;
    std::vector<Trajectory> sources;
    for (int i = 0; i < count; ++i) {
      Trajectory t = ds.trajectories[i];
      if (kind == ObservationKind::kPositionOnly) t = to_position_only(t);
      tracks.push_back(start_track(i, fmode, t.observations[0], dt, horizon,
                                   cfg.tracker, net));
      sources.push_back(std::move(t));
    }
    const auto t0 = std::chrono::steady_clock::now();
    for (int frame = 0; frame < frames; ++frame) {
      const int s = 1 + frame % (static_cast<int>(sources[0].observations.size()) - 1);
      for (int i = 0; i < count; ++i) {
        filter_step(tracks[i], sources[i].observations[s], dt, horizon, net,
                    cfg.tracker);
      }
    }
    const double total =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    rows.push_back({count, total / frames});
  }
  return rows;
}

/// plan-eval: open-loop solver benchmark (reachable-waypoint contract,
/// fuzzed invariants, detour audit).
inline int cmd_plan_eval(const ExperimentConfig& cfg, int instances,
                         std::ostream& log = std::cerr) {
  auto rng = make_engine(mix64(cfg.seed, 0x9A17));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const PlannerConfig& pc = cfg.planner;

  int straight_converged = 0;
  double straight_worst_cost = 0.0;
  for (int i = 0; i < instances; ++i) {
    const RobotState start{20.0 * u(rng), 20.0 * u(rng), M_PI * u(rng)};
    const double speed = 3.0 + 2.5 * (u(rng) + 1.0);
    std::vector<RobotState> wps(pc.horizon);
    for (int k = 0; k < pc.horizon; ++k) {
      const double d = speed * pc.dt * (k + 1);
      wps[k] = {start.x + d * std::cos(start.theta),
                start.y + d * std::sin(start.theta), start.theta};
    }
    const auto sol = solve_horizon(start, wps, {},
                                   constant_margins(0.5, pc.horizon, 1), pc);
    straight_converged += sol.diagnostics.converged ? 1 : 0;
    straight_worst_cost =
        std::max(straight_worst_cost, sol.diagnostics.tracking_cost);
  }

  int fuzz_violations = 0;
  for (int i = 0; i < instances; ++i) {
    const RobotState start{10 * u(rng), 10 * u(rng), M_PI * u(rng)};
    std::vector<RobotState> wps(pc.horizon);
    RobotState w = start;
    for (int k = 0; k < pc.horizon; ++k) {
      w = kinematic_step(w, {4.0 + 3.0 * u(rng), 1.5 * u(rng)}, pc.dt);
      wps[k] = w;
    }
    std::vector<std::vector<OrientedBox>> preds;
    for (int n = 0; n < i % 4; ++n) {
      preds.push_back(std::vector<OrientedBox>(
          pc.horizon,
          box_from_state(start.x + 8 * u(rng), start.y + 8 * u(rng),
                         M_PI * u(rng), 1.0 + 0.5 * u(rng), 1.0)));
    }
    const auto sol = solve_horizon(
        start, wps, preds,
        constant_margins(0.5, pc.horizon, std::max<int>(preds.size(), 1)),
        pc);
    const auto re = rollout(start, sol.actions, pc.dt);
    for (int k = 0; k < pc.horizon; ++k) {
      if (std::abs(re[k].x - sol.states[k].x) > 1e-12 ||
          std::abs(re[k].y - sol.states[k].y) > 1e-12 ||
          sol.actions[k].v < pc.w_min.v || sol.actions[k].v > pc.w_max.v ||
          sol.actions[k].psi < pc.w_min.psi ||
          sol.actions[k].psi > pc.w_max.psi) {
        ++fuzz_violations;
        break;
      }
    }
  }

  const std::filesystem::path out_dir(cfg.out_dir);
  auto report = detail::open_report(out_dir / "plan_eval.csv");
  report << "check,instances,value\n";
  report << "straight_converged_fraction," << instances << ','
         << static_cast<double>(straight_converged) / std::max(instances, 1)
         << "\n";
  report << "straight_worst_tracking_cost," << instances << ','
         << straight_worst_cost << "\n";
  report << "fuzz_invariant_violations," << instances << ','
         << fuzz_violations << "\n";
  report.close();
  log << "plan-eval: converged " << straight_converged << "/" << instances
      << ", worst tracking cost " << straight_worst_cost << ", violations "
      << fuzz_violations << "\n";
  return fuzz_violations == 0 ? 0 : 1;
}

/// report: aggregates trace files into summary tables and x-y series files.
inline int cmd_report(const std::string& traces_dir,
                      const std::string& out_dir_s,
                      std::ostream& log = std::cerr) {
  const std::filesystem::path out_dir(out_dir_s);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(traces_dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  auto summary = detail::open_report(out_dir / "report_summary.csv");
  summary << "trace,cycles,duration,final_x,final_y,mean_speed,min_margin,"
             "mean_iterations\n";
  auto timing = detail::open_report(out_dir / "report_summary_timing.csv");
  timing << "trace,mean_solver_wall_s\n";
  int used = 0;
  for (const auto& file : files) {
    Trace trace;
    try {
      std::ifstream is(file);
      std::string header;
      std::getline(is, header);
      if (header != kTraceVersionLine) {
        throw std::runtime_error("unknown trace version: " + header);
      }
      trace = read_trace(is);
      if (trace.empty()) throw std::runtime_error("empty trace");
    } catch (const std::exception& e) {
      log << "report: skipping " << file.filename().string() << ": "
          << e.what() << "\n";
      continue;
    }
    ++used;
    double speed_sum = 0.0, wall_sum = 0.0;
    double min_margin = std::numeric_limits<double>::infinity();
    long iter_sum = 0;
    for (const CycleRecord& c : trace) {
      speed_sum += std::abs(c.action.v);
      wall_sum += c.solver_wall_s;
      iter_sum += c.solver_iterations;
      if (c.margins.size() > 0) {
        min_margin = std::min(min_margin, c.margins.minCoeff());
      }
    }
    const std::string stem = file.stem().string();
    summary << stem << ',' << trace.size() << ','
            << trace.back().time + 0.0 << ',' << trace.back().ego.x << ','
            << trace.back().ego.y << ',' << speed_sum / trace.size() << ','
            << (std::isfinite(min_margin) ? min_margin : 0.0) << ','
            << iter_sum / static_cast<double>(trace.size()) << "\n";
    timing << stem << ',' << wall_sum / trace.size() << "\n";
    std::ofstream series(out_dir / ("series_" + stem + "_path.csv"));
    series << std::setprecision(17);
    series << "t,x,y,v\n";
    for (const CycleRecord& c : trace) {
      series << c.time << ',' << c.ego.x << ',' << c.ego.y << ','
             << c.action.v << "\n";
    }
  }
  summary.close();
  timing.close();
  if (used == 0) {
    log << "report: no usable traces in " << traces_dir << "\n";
    return 1;
  }
  log << "report: aggregated " << used << " traces\n";
  return 0;
}

}  // namespace dpnet
