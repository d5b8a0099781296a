#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpnet/dataset.hpp"
#include "dpnet/doppler.hpp"
#include "dpnet/dtmpc.hpp"
#include "dpnet/gainnet.hpp"
#include "dpnet/simworld.hpp"
#include "dpnet/tracker.hpp"

namespace dpnet {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Full experiment parameter tree. Every field has a documented default and
/// parsing is strict: unknown keys are rejected with their path.
struct ExperimentConfig {
  std::uint64_t seed{0};
  std::string out_dir{"."};
  SensorConfig sensor;
  TrackerConfig tracker;
  TrainConfig train;
  int gain_hidden_dim{64};
  TuningConfig tuning;
  PlannerConfig planner;
  SynthConfig synth;
  std::string scenario_level{"2D-2S"};
  double obstacle_speed{5.0};
  std::string tracker_mode{"dkf"};
  double timeout_s{60.0};
  double goal_radius{1.0};
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& path,
                       const std::set<std::string>& allowed) {
  if (!j.is_object()) {
    throw ConfigError("config: '" + path + "' must be an object");
  }
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("config: unknown field '" + path + key + "'");
    }
  }
}

template <typename T>
void read_field(const nlohmann::json& j, const std::string& path,
                const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: bad value for '" + path + key +
                      "': " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::check_keys(j, "", {"seed", "out_dir", "sensor", "tracker", "train",
                             "tuning", "planner", "synth", "scenario"});
  detail::read_field(j, "", "seed", cfg.seed);
  detail::read_field(j, "", "out_dir", cfg.out_dir);
  if (j.contains("sensor")) {
    const auto& s = j.at("sensor");
    detail::check_keys(s, "sensor.",
                       {"beam_count_azimuth", "elevation_angles", "max_range",
                        "noise_sigma", "range_noise_sigma", "mount_height"});
    detail::read_field(s, "sensor.", "beam_count_azimuth",
                       cfg.sensor.beam_count_azimuth);
    detail::read_field(s, "sensor.", "elevation_angles",
                       cfg.sensor.elevation_angles);
    detail::read_field(s, "sensor.", "max_range", cfg.sensor.max_range);
    detail::read_field(s, "sensor.", "noise_sigma", cfg.sensor.noise_sigma);
    detail::read_field(s, "sensor.", "range_noise_sigma",
                       cfg.sensor.range_noise_sigma);
    detail::read_field(s, "sensor.", "mount_height", cfg.sensor.mount_height);
  }
  if (j.contains("tracker")) {
    const auto& s = j.at("tracker");
    detail::check_keys(s, "tracker.",
                       {"q_pos", "q_vel", "q_acc", "r_pos", "r_vel", "p0"});
    detail::read_field(s, "tracker.", "q_pos", cfg.tracker.q_pos);
    detail::read_field(s, "tracker.", "q_vel", cfg.tracker.q_vel);
    detail::read_field(s, "tracker.", "q_acc", cfg.tracker.q_acc);
    detail::read_field(s, "tracker.", "r_pos", cfg.tracker.r_pos);
    detail::read_field(s, "tracker.", "r_vel", cfg.tracker.r_vel);
    detail::read_field(s, "tracker.", "p0", cfg.tracker.p0);
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    detail::check_keys(s, "train.",
                       {"epochs", "learning_rate", "tbptt_window",
                        "batch_size", "grad_clip", "hidden_dim"});
    detail::read_field(s, "train.", "epochs", cfg.train.epochs);
    detail::read_field(s, "train.", "learning_rate",
                       cfg.train.learning_rate);
    detail::read_field(s, "train.", "tbptt_window", cfg.train.tbptt_window);
    detail::read_field(s, "train.", "batch_size", cfg.train.batch_size);
    detail::read_field(s, "train.", "grad_clip", cfg.train.grad_clip);
    detail::read_field(s, "train.", "hidden_dim", cfg.gain_hidden_dim);
  }
  if (j.contains("tuning")) {
    const auto& s = j.at("tuning");
    detail::check_keys(s, "tuning.",
                       {"d0", "d1", "d2", "alpha", "beta", "tau1_min",
                        "tau2_min", "kappa_init", "delta_kappa"});
    detail::read_field(s, "tuning.", "d0", cfg.tuning.d0);
    detail::read_field(s, "tuning.", "d1", cfg.tuning.d1);
    detail::read_field(s, "tuning.", "d2", cfg.tuning.d2);
    detail::read_field(s, "tuning.", "alpha", cfg.tuning.alpha);
    detail::read_field(s, "tuning.", "beta", cfg.tuning.beta);
    detail::read_field(s, "tuning.", "tau1_min", cfg.tuning.tau1_min);
    detail::read_field(s, "tuning.", "tau2_min", cfg.tuning.tau2_min);
    detail::read_field(s, "tuning.", "kappa_init", cfg.tuning.kappa_init);
    detail::read_field(s, "tuning.", "delta_kappa", cfg.tuning.delta_kappa);
  }
  if (j.contains("planner")) {
    const auto& s = j.at("planner");
    detail::check_keys(
        s, "planner.",
        {"horizon", "dt", "v_min", "v_max", "psi_min", "psi_max",
         "robot_length", "robot_width", "gamma", "rho", "max_iter",
         "primal_tol", "dual_tol", "adaptive_rho", "sqp_outer_iters"});
    detail::read_field(s, "planner.", "horizon", cfg.planner.horizon);
    detail::read_field(s, "planner.", "dt", cfg.planner.dt);
    detail::read_field(s, "planner.", "v_min", cfg.planner.w_min.v);
    detail::read_field(s, "planner.", "v_max", cfg.planner.w_max.v);
    detail::read_field(s, "planner.", "psi_min", cfg.planner.w_min.psi);
    detail::read_field(s, "planner.", "psi_max", cfg.planner.w_max.psi);
    detail::read_field(s, "planner.", "robot_length",
                       cfg.planner.robot_dims.first);
    detail::read_field(s, "planner.", "robot_width",
                       cfg.planner.robot_dims.second);
    detail::read_field(s, "planner.", "gamma", cfg.planner.gamma);
    detail::read_field(s, "planner.", "rho", cfg.planner.admm.rho);
    detail::read_field(s, "planner.", "max_iter", cfg.planner.admm.max_iter);
    detail::read_field(s, "planner.", "primal_tol",
                       cfg.planner.admm.primal_tol);
    detail::read_field(s, "planner.", "dual_tol", cfg.planner.admm.dual_tol);
    detail::read_field(s, "planner.", "adaptive_rho",
                       cfg.planner.admm.adaptive_rho);
    detail::read_field(s, "planner.", "sqp_outer_iters",
                       cfg.planner.sqp_outer_iters);
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    detail::check_keys(s, "synth.",
                       {"trajectories", "steps", "freq_hz", "pos_noise",
                        "vel_noise"});
    detail::read_field(s, "synth.", "trajectories", cfg.synth.trajectories);
    detail::read_field(s, "synth.", "steps", cfg.synth.steps);
    detail::read_field(s, "synth.", "freq_hz", cfg.synth.freq_hz);
    detail::read_field(s, "synth.", "pos_noise", cfg.synth.pos_noise);
    detail::read_field(s, "synth.", "vel_noise", cfg.synth.vel_noise);
  }
  if (j.contains("scenario")) {
    const auto& s = j.at("scenario");
    detail::check_keys(s, "scenario.",
                       {"level", "obstacle_speed", "tracker_mode",
                        "timeout_s", "goal_radius"});
    detail::read_field(s, "scenario.", "level", cfg.scenario_level);
    detail::read_field(s, "scenario.", "obstacle_speed", cfg.obstacle_speed);
    detail::read_field(s, "scenario.", "tracker_mode", cfg.tracker_mode);
    detail::read_field(s, "scenario.", "timeout_s", cfg.timeout_s);
    detail::read_field(s, "scenario.", "goal_radius", cfg.goal_radius);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return parse_config(j);
}

inline nlohmann::json dump_config(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["sensor"] = {{"beam_count_azimuth", cfg.sensor.beam_count_azimuth},
                 {"elevation_angles", cfg.sensor.elevation_angles},
                 {"max_range", cfg.sensor.max_range},
                 {"noise_sigma", cfg.sensor.noise_sigma},
                 {"range_noise_sigma", cfg.sensor.range_noise_sigma},
                 {"mount_height", cfg.sensor.mount_height}};
  j["tracker"] = {{"q_pos", cfg.tracker.q_pos}, {"q_vel", cfg.tracker.q_vel},
                  {"q_acc", cfg.tracker.q_acc}, {"r_pos", cfg.tracker.r_pos},
                  {"r_vel", cfg.tracker.r_vel}, {"p0", cfg.tracker.p0}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"learning_rate", cfg.train.learning_rate},
                {"tbptt_window", cfg.train.tbptt_window},
                {"batch_size", cfg.train.batch_size},
                {"grad_clip", cfg.train.grad_clip},
                {"hidden_dim", cfg.gain_hidden_dim}};
  j["tuning"] = {{"d0", cfg.tuning.d0},
                 {"d1", cfg.tuning.d1},
                 {"d2", cfg.tuning.d2},
                 {"alpha", cfg.tuning.alpha},
                 {"beta", cfg.tuning.beta},
                 {"tau1_min", cfg.tuning.tau1_min},
                 {"tau2_min", cfg.tuning.tau2_min},
                 {"kappa_init", cfg.tuning.kappa_init},
                 {"delta_kappa", cfg.tuning.delta_kappa}};
  j["planner"] = {{"horizon", cfg.planner.horizon},
                  {"dt", cfg.planner.dt},
                  {"v_min", cfg.planner.w_min.v},
                  {"v_max", cfg.planner.w_max.v},
                  {"psi_min", cfg.planner.w_min.psi},
                  {"psi_max", cfg.planner.w_max.psi},
                  {"robot_length", cfg.planner.robot_dims.first},
                  {"robot_width", cfg.planner.robot_dims.second},
                  {"gamma", cfg.planner.gamma},
                  {"rho", cfg.planner.admm.rho},
                  {"max_iter", cfg.planner.admm.max_iter},
                  {"primal_tol", cfg.planner.admm.primal_tol},
                  {"dual_tol", cfg.planner.admm.dual_tol},
                  {"adaptive_rho", cfg.planner.admm.adaptive_rho},
                  {"sqp_outer_iters", cfg.planner.sqp_outer_iters}};
  j["synth"] = {{"trajectories", cfg.synth.trajectories},
                {"steps", cfg.synth.steps},
                {"freq_hz", cfg.synth.freq_hz},
                {"pos_noise", cfg.synth.pos_noise},
                {"vel_noise", cfg.synth.vel_noise}};
  j["scenario"] = {{"level", cfg.scenario_level},
                   {"obstacle_speed", cfg.obstacle_speed},
                   {"tracker_mode", cfg.tracker_mode},
                   {"timeout_s", cfg.timeout_s},
                   {"goal_radius", cfg.goal_radius}};
  return j;
}

}  // namespace dpnet
