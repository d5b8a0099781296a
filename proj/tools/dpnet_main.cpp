// Command-line entry point: scenario simulation batches, gain-network
// training, tracking evaluation, open-loop planner evaluation, and trace
// aggregation.

#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "dpnet/cli_commands.hpp"

namespace {

dpnet::ExperimentConfig resolve_config(const std::string& config_path,
                                       const std::optional<std::uint64_t>& seed,
                                       const std::string& out_dir) {
  dpnet::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = dpnet::load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dpnet: Doppler-LiDAR tracking and planning experiments"};
  app.require_subcommand(0, 1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  int threads = 2;
  bool dump_defaults = false;
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--seed", seed, "global seed override");
  app.add_option("--out", out_dir, "output directory override");
  app.add_option("--threads", threads, "worker threads for batches");
  app.add_flag("--dump-defaults", dump_defaults,
               "print the default config and exit");

  auto* sim = app.add_subcommand("simulate", "run a seeded episode batch");
  int trials = 100;
  std::string mode = "dpnet", level, weights;
  double speed = -1.0;
  bool traces = false;
  sim->add_option("--trials", trials, "episodes to run");
  sim->add_option("--mode", mode, "dpnet | ablation");
  sim->add_option("--level", level, "clutter level override");
  sim->add_option("--speed", speed, "obstacle speed override (m/s)");
  sim->add_option("--weights", weights, "gain-network weights file");
  sim->add_flag("--traces", traces, "write per-episode trace files");

  auto* train = app.add_subcommand("train", "train the gain network");
  std::string train_mode = "dknet", out_weights = "gainnet.txt";
  train->add_option("--mode", train_mode, "knet | dknet");
  train->add_option("--out-weights", out_weights, "weights output path");

  auto* teval = app.add_subcommand("track-eval", "tracking NMSE benchmark");
  std::string teval_mode = "dkf", teval_weights, family = "all";
  double freq = 10.0;
  int horizon = 5;
  int bench_obstacles = 0;
  teval->add_option("--mode", teval_mode, "kf | dkf | knet | dknet");
  teval->add_option("--freq", freq, "tracking frequency (Hz)");
  teval->add_option("--horizon", horizon, "prediction horizon (steps)");
  teval->add_option("--weights", teval_weights, "gain-network weights file");
  teval->add_option("--family", family,
                    "all | constant | accelerating | turning");
  teval->add_option("--bench-obstacles", bench_obstacles,
                    "measure batch-update latency for 1..N obstacles");

  auto* peval = app.add_subcommand("plan-eval", "open-loop solver benchmark");
  int instances = 200;
  peval->add_option("--instances", instances, "instances per check");

  auto* rep = app.add_subcommand("report", "aggregate trace files");
  std::string traces_dir = ".";
  rep->add_option("--traces", traces_dir, "directory of trace .jsonl files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dump_defaults) {
      std::cout << dpnet::dump_config(dpnet::ExperimentConfig{}).dump(2)
                << "\n";
      return 0;
    }
    if (sim->parsed()) {
      dpnet::ExperimentConfig cfg = resolve_config(config_path, seed, out_dir);
      if (!level.empty()) cfg.scenario_level = level;
      if (speed > 0.0) cfg.obstacle_speed = speed;
      return dpnet::cmd_simulate(cfg, trials, mode, threads, traces, weights);
    }
    if (train->parsed()) {
      const dpnet::ExperimentConfig cfg =
          resolve_config(config_path, seed, out_dir);
      return dpnet::cmd_train(cfg, train_mode, out_weights);
    }
    if (teval->parsed()) {
      const dpnet::ExperimentConfig cfg =
          resolve_config(config_path, seed, out_dir);
      if (bench_obstacles > 0) {
        const dpnet::FilterMode fmode =
            dpnet::filter_mode_from_string(teval_mode);
        std::optional<dpnet::GainNet> net;
        if (dpnet::uses_learned_gain(fmode)) {
          if (teval_weights.empty()) {
            std::cerr << "track-eval: mode needs --weights\n";
            return 1;
          }
          net = dpnet::load_weights(teval_weights);
        }
        const auto rows = dpnet::tracker_scaling_benchmark(
            cfg, fmode, net ? &*net : nullptr, bench_obstacles, 400);
        auto os = dpnet::detail::open_report(
            std::filesystem::path(cfg.out_dir) / "bench_timing.csv");
        os << "obstacle_count,mean_latency_s\n";
        for (const auto& r : rows) {
          os << r.obstacle_count << ',' << r.mean_latency_s << "\n";
        }
        return 0;
      }
      return dpnet::cmd_track_eval(cfg, teval_mode, freq, horizon,
                                   teval_weights, family);
    }
    if (peval->parsed()) {
      const dpnet::ExperimentConfig cfg =
          resolve_config(config_path, seed, out_dir);
      return dpnet::cmd_plan_eval(cfg, instances);
    }
    if (rep->parsed()) {
      const dpnet::ExperimentConfig cfg =
          resolve_config(config_path, seed, out_dir);
      return dpnet::cmd_report(traces_dir, cfg.out_dir);
    }
  } catch (const dpnet::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << app.help() << "\n";
  return 0;
}
