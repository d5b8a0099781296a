#include "dpnet/cli_commands.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dpnet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("dpnet_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig fast_config() {
  ExperimentConfig cfg;
  cfg.scenario_level = "empty";
  cfg.timeout_s = 20.0;
  cfg.synth.trajectories = 10;
  cfg.synth.steps = 30;
  cfg.train.epochs = 3;
  cfg.gain_hidden_dim = 8;
  return cfg;
}

}  // namespace

TEST(Config, DumpParseRoundTrip) {
  const ExperimentConfig defaults;
  const nlohmann::json dumped = dump_config(defaults);
  const ExperimentConfig back = parse_config(dumped);
  EXPECT_EQ(dump_config(back).dump(), dumped.dump());
}

TEST(Config, UnknownKeyNamesField) {
  nlohmann::json j = dump_config(ExperimentConfig{});
  j["planner"]["gamm"] = 1.0;
  try {
    parse_config(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("planner.gamm"), std::string::npos);
  }
  nlohmann::json top = dump_config(ExperimentConfig{});
  top["plannerr"] = nlohmann::json::object();
  EXPECT_THROW(parse_config(top), ConfigError);
}

TEST(Config, BadValueReportsPath) {
  nlohmann::json j = dump_config(ExperimentConfig{});
  j["planner"]["horizon"] = "fifteen";
  try {
    parse_config(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("planner.horizon"),
              std::string::npos);
  }
}

TEST(Simulate, ByteIdenticalReports) {
  TempDir d1("sim1"), d2("sim2");
  ExperimentConfig cfg = fast_config();
  cfg.scenario_level = "1D-1S";
  cfg.seed = 7;
  std::ostringstream sink;
  cfg.out_dir = d1.path.string();
  ASSERT_EQ(cmd_simulate(cfg, 2, "dpnet", 2, false, "", sink), 0);
  cfg.out_dir = d2.path.string();
  ASSERT_EQ(cmd_simulate(cfg, 2, "dpnet", 1, false, "", sink), 0);
  EXPECT_EQ(slurp(d1.path / "report.csv"), slurp(d2.path / "report.csv"));
  EXPECT_FALSE(slurp(d1.path / "report.csv").empty());
}

TEST(Simulate, EmptyScenarioPassRate100) {
  TempDir dir("sim_empty");
  ExperimentConfig cfg = fast_config();
  cfg.out_dir = dir.path.string();
  std::ostringstream sink;
  ASSERT_EQ(cmd_simulate(cfg, 1, "dpnet", 1, false, "", sink), 0);
  const std::string report = slurp(dir.path / "report.csv");
  EXPECT_NE(report.find("aggregate"), std::string::npos);
  EXPECT_NE(report.find(",100\n"), std::string::npos);
}

TEST(Simulate, InvalidLevelFailsWithDiagnostic) {
  TempDir dir("sim_bad");
  ExperimentConfig cfg = fast_config();
  cfg.scenario_level = "9X";
  cfg.out_dir = dir.path.string();
  std::ostringstream log;
  EXPECT_EQ(cmd_simulate(cfg, 1, "dpnet", 1, false, "", log), 1);
  EXPECT_NE(log.str().find("level"), std::string::npos);
}

TEST(Simulate, MissingWeightsForLearnedTracker) {
  TempDir dir("sim_w");
  ExperimentConfig cfg = fast_config();
  cfg.tracker_mode = "dknet";
  cfg.out_dir = dir.path.string();
  std::ostringstream log;
  EXPECT_EQ(cmd_simulate(cfg, 1, "dpnet", 1, false, "", log), 1);
}

TEST(Train, WritesWeightsAndCurve) {
  TempDir dir("train");
  ExperimentConfig cfg = fast_config();
  cfg.out_dir = dir.path.string();
  const std::string weights = (dir.path / "w.txt").string();
  std::ostringstream sink;
  ASSERT_EQ(cmd_train(cfg, "dknet", weights, sink), 0);
  EXPECT_TRUE(fs::exists(weights));
  const GainNet net = load_weights(weights);
  EXPECT_EQ(net.obs_dim, 4);
  EXPECT_EQ(net.hidden_dim, 8);
  const std::string curve = slurp(dir.path / "loss_curve.csv");
  EXPECT_NE(curve.find("epoch,loss"), std::string::npos);
  EXPECT_NE(curve.find("\n2,"), std::string::npos);
}

TEST(Train, DeterministicWeights) {
  TempDir d1("train1"), d2("train2");
  ExperimentConfig cfg = fast_config();
  std::ostringstream sink;
  cfg.out_dir = d1.path.string();
  ASSERT_EQ(cmd_train(cfg, "knet", (d1.path / "w.txt").string(), sink), 0);
  cfg.out_dir = d2.path.string();
  ASSERT_EQ(cmd_train(cfg, "knet", (d2.path / "w.txt").string(), sink), 0);
  EXPECT_EQ(slurp(d1.path / "w.txt"), slurp(d2.path / "w.txt"));
  EXPECT_EQ(slurp(d1.path / "loss_curve.csv"),
            slurp(d2.path / "loss_curve.csv"));
}

TEST(TrackEval, NoiselessConstantVelocityHitsFloor) {
  TempDir dir("teval");
  ExperimentConfig cfg = fast_config();
  cfg.out_dir = dir.path.string();
  cfg.synth.pos_noise = 0.0;
  cfg.synth.vel_noise = 0.0;
  std::ostringstream sink;
  ASSERT_EQ(cmd_track_eval(cfg, "dkf", 10.0, 5, "", "constant", sink), 0);
  const std::string nmse = slurp(dir.path / "nmse_dkf.csv");
  EXPECT_NE(nmse.find(",-120,"), std::string::npos);
}

TEST(TrackEval, MissingWeightsFails) {
  TempDir dir("teval2");
  ExperimentConfig cfg = fast_config();
  cfg.out_dir = dir.path.string();
  std::ostringstream log;
  EXPECT_EQ(cmd_track_eval(cfg, "dknet", 10.0, 5, "", "all", log), 1);
}

TEST(TrackEval, ScalingBenchmarkRows) {
  ExperimentConfig cfg = fast_config();
  const auto rows = tracker_scaling_benchmark(cfg, FilterMode::kDkf, nullptr,
                                              3, 50);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].obstacle_count, 1);
  EXPECT_EQ(rows[2].obstacle_count, 3);
  for (const auto& r : rows) EXPECT_GT(r.mean_latency_s, 0.0);
}

TEST(PlanEval, CleanRun) {
  TempDir dir("peval");
  ExperimentConfig cfg = fast_config();
  cfg.out_dir = dir.path.string();
  std::ostringstream sink;
  ASSERT_EQ(cmd_plan_eval(cfg, 30, sink), 0);
  const std::string report = slurp(dir.path / "plan_eval.csv");
  EXPECT_NE(report.find("fuzz_invariant_violations,30,0"),
            std::string::npos);
}

TEST(Report, AggregatesTracesAndSkipsCorrupt) {
  TempDir dir("report");
  ExperimentConfig cfg = fast_config();
  cfg.scenario_level = "1D-1S";
  cfg.out_dir = dir.path.string();
  std::ostringstream sink;
  ASSERT_EQ(cmd_simulate(cfg, 1, "dpnet", 1, true, "", sink), 0);
  {
    std::ofstream bad(dir.path / "corrupt.jsonl");
    bad << "{\"dpnet_trace\":1}\nnot json\n";
  }
  std::ostringstream log;
  ASSERT_EQ(cmd_report(dir.path.string(), dir.path.string(), log), 0);
  EXPECT_NE(log.str().find("skipping"), std::string::npos);
  const std::string summary = slurp(dir.path / "report_summary.csv");
  EXPECT_NE(summary.find("trace_0000"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir.path / "series_trace_0000_path.csv"));
}

TEST(Report, AllCorruptFails) {
  TempDir dir("report2");
  {
    std::ofstream bad(dir.path / "corrupt.jsonl");
    bad << "garbage\n";
  }
  std::ostringstream log;
  EXPECT_EQ(cmd_report(dir.path.string(), dir.path.string(), log), 1);
}
