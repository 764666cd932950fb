#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tipguard/autoencoder.hpp"
#include "tipguard/checkpoint.hpp"
#include "tipguard/detector.hpp"
#include "tipguard/timeseries.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tipguard;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(TIPGUARD_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json read(const fs::path& p) { return json::parse(slurp(p)); }

void expect_provenance(const json& doc, const std::string& command) {
  ASSERT_TRUE(doc.contains("run_config")) << command;
  const auto& rc = doc["run_config"];
  EXPECT_EQ(rc["schema"], "tipguard-run/1");
  EXPECT_EQ(rc["command"], command);
  EXPECT_TRUE(rc.contains("seed"));
  EXPECT_TRUE(rc.contains("version"));
}

/// Smoke corpus plus a one-epoch model, shared by the tests below.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "tipguard_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(run("synth --preset smoke --seed 7 --out " + data().string()).code, 0);
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run("train --data " + data().string() + " --out " + model_dir().string() + " --budget 1 --seed 3");
    train_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ASSERT_EQ(r.code, 0) << r.output;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path data() { return root_ / "data"; }
  static fs::path model_dir() { return root_ / "model"; }
  static fs::path checkpoint() { return model_dir() / "model.json"; }

  static inline fs::path root_;
  static inline double train_seconds_ = 0.0;
};

}  // namespace

TEST_F(CliPipeline, SynthSmokeWritesTrialsAndManifest) {
  int csv = 0, json_files = 0;
  for (const auto& e : fs::directory_iterator(data())) {
    if (e.path().extension() == ".csv") ++csv;
    if (e.path().extension() == ".json" && e.path().filename() != "manifest.json") ++json_files;
  }
  EXPECT_EQ(csv, 3);
  EXPECT_EQ(json_files, 6);  // sidecar + ground truth per trial
  const auto manifest = read(data() / "manifest.json");
  expect_provenance(manifest, "synth");
  EXPECT_EQ(manifest["trials"].size(), 3u);
}

TEST_F(CliPipeline, SynthIsReproducible) {
  const auto again = root_ / "data_again";
  ASSERT_EQ(run("synth --preset smoke --seed 7 --out " + again.string()).code, 0);
  for (const auto& e : fs::directory_iterator(data())) {
    if (e.path().filename() == "manifest.json") continue;
    EXPECT_EQ(slurp(e.path()), slurp(again / e.path().filename())) << e.path();
  }
  EXPECT_EQ(read(data() / "manifest.json")["trials"], read(again / "manifest.json")["trials"]);
}

TEST_F(CliPipeline, ConfigFileEntriesYieldToFlags) {
  const auto cfg = root_ / "synth_config.json";
  std::ofstream(cfg) << R"({"preset": "smoke", "seed": 5})";
  const auto out = root_ / "cfg_data";
  ASSERT_EQ(run("synth --config " + cfg.string() + " --seed 6 --out " + out.string()).code, 0);
  const auto rc = read(out / "manifest.json")["run_config"];
  EXPECT_EQ(rc["seed"], 6);
  EXPECT_EQ(rc["preset"], "smoke");
}

TEST_F(CliPipeline, OneEpochTrainingWritesCheckpointAndReport) {
  EXPECT_LT(train_seconds_, 60.0);
  const auto report = read(model_dir() / "train_report.json");
  expect_provenance(report, "train");
  EXPECT_EQ(report["report"]["epochs_run"], 1);
  EXPECT_EQ(report["run_config"]["spec"]["autoencoder"]["encoder_layer_sizes"], json::array({19}));
  EXPECT_EQ(report["run_config"]["spec"]["window"]["step"], 10);
  const auto doc = ckpt::read_document(checkpoint());
  expect_provenance(doc["metadata"], "train");
  EXPECT_NO_THROW(ckpt::from_json(doc));
}

TEST_F(CliPipeline, ReportedR2MatchesRecomputation) {
  const auto report = read(model_dir() / "train_report.json");
  const auto model = ckpt::load(checkpoint());
  const auto trials = ts::load_trials(data());
  std::vector<ts::MultivariateSeries> test;
  for (const auto& id : report["test_trials"]) {
    for (const auto& t : trials) {
      if (t.trial_id() == id.get<std::string>()) test.push_back(model.normalizer->apply(t));
    }
  }
  ASSERT_FALSE(test.empty());
  const auto ds = ts::make_windows(test, ts::WindowSpec{25, 5, 10});
  const auto preds = ae::predict(model, ds);
  const auto targets = ae::collect_targets(ds);
  EXPECT_NEAR(report["r2"]["test"].get<double>(), ae::r2_score(preds, targets), 1e-12);
}

TEST_F(CliPipeline, MissingDataDirectoryIsADataError) {
  const auto r = run("train --data " + (root_ / "absent").string() + " --out " + (root_ / "x").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("not found"), std::string::npos);
}

TEST_F(CliPipeline, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --bogus").code, 2);
  EXPECT_EQ(run("detect --model m --data d --out o --metric huber").code, 2);
  EXPECT_EQ(run("detect --model m --data d --out o --thresholds guess").code, 2);
  EXPECT_EQ(run("synth --preset galaxy --out x").code, 2);
  EXPECT_EQ(run("train --data " + data().string() + " --out " + (root_ / "x").string() + " --train-frac 1.5").code, 2);
}

TEST_F(CliPipeline, NumericFailureExitsWithFour) {
  const auto dir = root_ / "overflow_data";
  fs::create_directories(dir);
  for (const std::string id : {"big_0", "big_1"}) {
    std::vector<double> stamps(200);
    ts::SeriesMatrix x(200, 6);
    for (Eigen::Index i = 0; i < 200; ++i) {
      stamps[static_cast<std::size_t>(i)] = static_cast<double>(i) / 100.0;
      x.row(i).setConstant(i % 2 ? 1e308 : -1e308);
    }
    ts::write_trial(dir / (id + ".csv"), ts::MultivariateSeries(stamps, x, 100.0, ts::Behavior::normal, id));
  }
  const auto r = run("train --data " + dir.string() + " --out " + (root_ / "overflow").string() + " --budget 1");
  EXPECT_EQ(r.code, 4) << r.output;
}

TEST_F(CliPipeline, ReferenceThresholdPresetIsAppliedExactly) {
  const auto out = root_ / "detect_reference";
  const auto r = run("detect --model " + checkpoint().string() + " --data " + data().string() + " --out " + out.string() +
                     " --metric mse --thresholds table4");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto det = read(out / "detection.json");
  expect_provenance(det, "detect");
  EXPECT_EQ(det["thresholds"]["metric"], "mse");
  const std::vector<double> expected = {0.04, 0.04, 0.04, 0.02, 0.05, 0.04};
  EXPECT_EQ(det["thresholds"]["values"].get<std::vector<double>>(), expected);
  EXPECT_TRUE(det.contains("summary"));
  const auto header = json::parse(slurp(out / "events.jsonl").substr(0, slurp(out / "events.jsonl").find('\n')));
  expect_provenance(header, "detect");
  for (const auto& t : det["trials"]) {
    const auto plot = slurp(out / "plots" / (t["trial_id"].get<std::string>() + ".csv"));
    EXPECT_EQ(plot.substr(0, plot.find('\n')), detect::kPlotHeader);
  }
}

TEST_F(CliPipeline, WindowSpecMismatchIsRejected) {
  const auto spec = root_ / "mismatch.json";
  std::ofstream(spec) << R"({"input_len": 50, "output_len": 5})";
  const auto r = run("detect --model " + checkpoint().string() + " --data " + data().string() + " --out " +
                     (root_ / "x").string() + " --thresholds table4 --spec " + spec.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("does not match"), std::string::npos);
}

TEST_F(CliPipeline, ModelGeneratedDataRaisesNoEvents) {
  const auto model = ckpt::load(checkpoint());
  const auto seed_trial = ts::load_trials(data()).front();
  const auto& norm = *model.normalizer;
  // Roll the model forward on its own forecasts in normalized units.
  ts::SeriesMatrix z = norm.transform(seed_trial.values()).topRows(25);
  while (z.rows() < 300) {
    const ts::SeriesMatrix f = ae::forecast(model, z.bottomRows(25));
    ts::SeriesMatrix grown(z.rows() + f.rows(), 6);
    grown << z, f;
    z = grown;
  }
  std::vector<double> stamps(static_cast<std::size_t>(z.rows()));
  for (std::size_t i = 0; i < stamps.size(); ++i) stamps[i] = static_cast<double>(i) / 100.0;
  const auto series = ts::MultivariateSeries(stamps, norm.inverse(z), 100.0, ts::Behavior::normal, "rollout");
  const auto dir = root_ / "rollout";
  fs::create_directories(dir);
  ts::write_trial(dir / "rollout.csv", series);
  const auto spec = root_ / "step5.json";
  std::ofstream(spec) << R"({"step": 5})";
  const auto out = root_ / "rollout_detect";
  const auto r = run("detect --model " + checkpoint().string() + " --data " + dir.string() + " --out " + out.string() +
                     " --thresholds table4 --spec " + spec.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto det = read(out / "detection.json");
  ASSERT_EQ(det["trials"].size(), 1u);
  EXPECT_GT(det["trials"][0]["windows"].get<int>(), 40);
  EXPECT_EQ(det["trials"][0]["events"], 0);
}

TEST_F(CliPipeline, TuneSmokeReportsIncumbentAndAuditsEveryEvaluation) {
  const auto out = root_ / "tune";
  const auto r = run("tune --data " + data().string() + " --out " + out.string() + " --seed 1 --workers 2");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto inc = read(out / "incumbent.json");
  expect_provenance(inc, "tune");
  EXPECT_TRUE(inc["result"]["incumbent"].contains("nodes_0"));
  std::ifstream audit(out / "observations.jsonl");
  std::string line;
  std::size_t rows = 0;
  std::getline(audit, line);
  expect_provenance(json::parse(line), "tune");
  while (std::getline(audit, line)) {
    const auto j = json::parse(line);
    for (const char* key : {"config", "loss", "budget", "wall_time", "rung"}) EXPECT_TRUE(j.contains(key)) << key;
    ++rows;
  }
  EXPECT_EQ(rows, inc["result"]["evaluations"].get<std::size_t>());

  const auto hb = root_ / "tune_hb";
  ASSERT_EQ(run("tune --data " + data().string() + " --out " + hb.string() + " --seed 1 --rho 1 --brackets 4").code, 0);
  EXPECT_EQ(read(hb / "incumbent.json")["result"]["kde_consultations"], 0);
}

TEST_F(CliPipeline, ReportHasAllSectionsAndIsDeterministic) {
  const auto run_dir = root_ / "report_run";
  fs::create_directories(run_dir);
  fs::copy_file(model_dir() / "train_report.json", run_dir / "train_report.json");
  auto missing = run("report " + run_dir.string());
  EXPECT_EQ(missing.code, 3);
  EXPECT_NE(missing.output.find("detection.json"), std::string::npos);
  EXPECT_NE(missing.output.find("loss_distribution.json"), std::string::npos);

  const auto spec = root_ / "step1.json";
  std::ofstream(spec) << R"({"step": 1})";
  ASSERT_EQ(run("detect --model " + checkpoint().string() + " --data " + data().string() + " --out " + run_dir.string() +
                " --thresholds fit --quantile 0.99 --spec " + spec.string())
                .code,
            0);
  ASSERT_EQ(run("report " + run_dir.string()).code, 0);
  const auto first = slurp(run_dir / "report.json");
  const auto report = json::parse(first);
  expect_provenance(report, "report");
  for (const char* section : {"r2", "loss_distribution", "event_timeline", "provenance"}) {
    EXPECT_TRUE(report.contains(section)) << section;
  }
  EXPECT_EQ(report["provenance"]["train"]["command"], "train");
  const auto md = slurp(run_dir / "report.md");
  for (const char* heading : {"## Forecast quality", "## Training loss distribution", "## Event timeline", "## Provenance"}) {
    EXPECT_NE(md.find(heading), std::string::npos) << heading;
  }
  ASSERT_EQ(run("report " + run_dir.string()).code, 0);
  EXPECT_EQ(slurp(run_dir / "report.json"), first);
}

TEST_F(CliPipeline, PipelineIsBitwiseReproducible) {
  std::string events[2];
  for (int pass = 0; pass < 2; ++pass) {
    const auto dir = root_ / "repro";
    fs::remove_all(dir);
    ASSERT_EQ(run("synth --preset smoke --seed 11 --out " + (dir / "data").string()).code, 0);
    ASSERT_EQ(run("train --data " + (dir / "data").string() + " --out " + (dir / "run").string() + " --budget 2 --seed 4").code, 0);
    ASSERT_EQ(run("detect --model " + (dir / "run" / "model.json").string() + " --data " + (dir / "data").string() +
                  " --out " + (dir / "run").string() + " --thresholds table4 --metric mae")
                  .code,
              0);
    events[pass] = slurp(dir / "run" / "events.jsonl");
  }
  EXPECT_FALSE(events[0].empty());
  EXPECT_EQ(events[0], events[1]);
}

TEST_F(CliPipeline, LogLevelFollowsEnvironment) {
  const auto quiet = run("synth --preset smoke --seed 7 --out " + (root_ / "log_a").string(), "TIPGUARD_LOG=error");
  EXPECT_EQ(quiet.output.find("[info]"), std::string::npos);
  const auto chatty = run("synth --preset smoke --seed 7 --out " + (root_ / "log_b").string(), "TIPGUARD_LOG=debug");
  EXPECT_NE(chatty.output.find("[debug]"), std::string::npos);
}
