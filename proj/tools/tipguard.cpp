// tipguard: synth -> train -> tune -> detect -> report.
//
// Exit codes: 0 ok, 2 usage, 3 data, 4 numeric.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tipguard/autoencoder.hpp"
#include "tipguard/bohb.hpp"
#include "tipguard/checkpoint.hpp"
#include "tipguard/detector.hpp"
#include "tipguard/synth.hpp"
#include "tipguard/timeseries.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tipguard;

namespace {

constexpr std::string_view kRunSchema = "tipguard-run/1";

// ---------------------------------------------------------------------------
// Small I/O helpers

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
}

/// FNV-1a 64-bit digest of a file, hex encoded.
std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json run_config(std::string_view command, json params) {
  params["schema"] = kRunSchema;
  params["command"] = command;
  params["version"] = kVersion;
  return params;
}

/// Value of a flag, or the config document's entry when the flag was not given.
template <class T>
T pick(const CLI::App& app, const std::string& flag, const T& flag_value, const json& config, const std::string& key) {
  if (app.count(flag) > 0 || !config.contains(key)) return flag_value;
  return config.at(key).get<T>();
}

json load_config(const std::string& path) { return path.empty() ? json::object() : read_json(path); }

// ---------------------------------------------------------------------------
// Shared pipeline pieces

struct ModelSetup {
  ae::AutoencoderSpec spec;
  ts::WindowSpec window;
};

/// Spec document: autoencoder fields plus an optional "step"; every field defaults
/// to the 25 -> 5, [19], step 10 profile.
ModelSetup read_setup(const json& doc) {
  ModelSetup s;
  s.spec.input_len = doc.value("input_len", s.spec.input_len);
  s.spec.output_len = doc.value("output_len", s.spec.output_len);
  s.spec.encoder_layer_sizes = doc.value("encoder_layer_sizes", s.spec.encoder_layer_sizes);
  s.spec.dropout_rate = doc.value("dropout_rate", s.spec.dropout_rate);
  s.window.input_len = s.spec.input_len;
  s.window.output_len = s.spec.output_len;
  s.window.step = (doc.contains("step") && doc["step"].is_null()) ? 1 : doc.value("step", std::size_t{10});
  s.spec.validate();
  s.window.validate();
  return s;
}

json setup_json(const ModelSetup& s) { return {{"autoencoder", s.spec}, {"window", s.window}}; }

struct PreparedData {
  ts::TrialSplit split;
  ts::Normalizer normalizer;
  ts::WindowedDataset train;
  ts::WindowedDataset test;
};

PreparedData prepare(const std::vector<ts::MultivariateSeries>& trials, const ts::WindowSpec& window, double train_frac,
                     std::uint64_t seed) {
  PreparedData p;
  p.split = ts::split_trials(trials, train_frac, seed);
  p.normalizer = ts::Normalizer::fit(p.split.train);
  std::vector<ts::MultivariateSeries> train, test;
  for (const auto& s : p.split.train) train.push_back(p.normalizer.apply(s));
  for (const auto& s : p.split.test) test.push_back(p.normalizer.apply(s));
  p.train = ts::make_windows(train, window);
  p.test = ts::make_windows(test, window);
  if (p.train.empty()) throw DataError("training trials are shorter than one window");
  return p;
}

std::vector<std::string> trial_ids(const std::vector<ts::MultivariateSeries>& trials) {
  std::vector<std::string> ids;
  for (const auto& t : trials) ids.push_back(t.trial_id());
  return ids;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("tipguard");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("TIPGUARD_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string_view(env) != "off") {
      spdlog::warn("unknown TIPGUARD_LOG level '{}', keeping info", env);
    } else {
      spdlog::set_level(level);
    }
  }
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  std::string preset = "smoke";
  std::uint64_t seed = 2024;
  std::string config;
};

int cmd_synth(const CLI::App& app, SynthArgs a) {
  const json cfg = load_config(a.config);
  a.out = pick(app, "--out", a.out, cfg, "out");
  a.preset = pick(app, "--preset", a.preset, cfg, "preset");
  a.seed = pick(app, "--seed", a.seed, cfg, "seed");
  if (a.out.empty()) throw UsageError("--out is required");
  const json rc = run_config("synth", {{"out", a.out}, {"preset", a.preset}, {"seed", a.seed},
                                       {"corpus_version", synth::kCorpusVersion}});
  const auto trials = synth::corpus(a.preset, a.seed);
  const fs::path dir(a.out);
  ensure_dir(dir);
  json entries = json::array();
  for (const auto& t : trials) {
    synth::write_trial(dir, t);
    const auto csv = dir / (t.series.trial_id() + ".csv");
    const auto side = ts::sidecar_path(csv);
    const auto truth = synth::truth_path(dir, t.series.trial_id());
    entries.push_back({{"trial_id", t.series.trial_id()},
                       {"behavior", std::string(ts::to_string(t.series.annotation()))},
                       {"samples", t.series.size()},
                       {"intervals", t.truth.intervals.size()},
                       {"files",
                        {{csv.filename().string(), file_digest(csv)},
                         {side.filename().string(), file_digest(side)},
                         {truth.filename().string(), file_digest(truth)}}}});
    spdlog::debug("wrote {}", csv.string());
  }
  const json manifest = {{"run_config", rc}, {"trials", entries}};
  write_json(dir / "manifest.json", manifest);
  spdlog::info("synthesized {} trials into {}", trials.size(), dir.string());
  std::cout << manifest.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data;
  std::string out;
  std::string spec;
  std::uint64_t seed = 0;
  std::size_t budget = 100;
  std::size_t batch = 16;
  double train_frac = 0.7;
  std::string config;
};

int cmd_train(const CLI::App& app, TrainArgs a) {
  const json cfg = load_config(a.config);
  a.data = pick(app, "--data", a.data, cfg, "data");
  a.out = pick(app, "--out", a.out, cfg, "out");
  a.seed = pick(app, "--seed", a.seed, cfg, "seed");
  a.budget = pick(app, "--budget", a.budget, cfg, "budget");
  a.batch = pick(app, "--batch", a.batch, cfg, "batch_size");
  a.train_frac = pick(app, "--train-frac", a.train_frac, cfg, "train_frac");
  if (a.data.empty() || a.out.empty()) throw UsageError("--data and --out are required");
  json spec_doc = cfg.value("spec", json::object());
  if (!a.spec.empty()) spec_doc = read_json(a.spec);
  const ModelSetup setup = read_setup(spec_doc);

  const json rc = run_config("train", {{"data", a.data},
                                       {"out", a.out},
                                       {"seed", a.seed},
                                       {"budget", a.budget},
                                       {"batch_size", a.batch},
                                       {"train_frac", a.train_frac},
                                       {"spec", setup_json(setup)},
                                       {"optimizer", {{"name", "adam"}, {"learning_rate", 1e-3}, {"clip_norm", 5.0}}},
                                       {"loss", "mse"}});
  const auto trials = ts::load_trials(a.data);
  const auto prep = prepare(trials, setup.window, a.train_frac, a.seed);
  spdlog::info("training on {} windows from {} trials; {} held-out trials", prep.train.size(), prep.split.train.size(),
               prep.split.test.size());

  auto model = ae::build(setup.spec, a.seed);
  model.normalizer = prep.normalizer;
  ae::TrainOptions opt;
  opt.epochs = a.budget;
  opt.batch_size = a.batch;
  opt.on_epoch = [](const ae::EpochStats& s) {
    spdlog::debug("epoch {} train {:.6g} validation {:.6g}", s.epoch, s.train_loss, s.validation_loss);
  };
  const auto report = ae::train(model, prep.train, opt);

  json per_trial = json::object();
  for (const auto& s : prep.split.test) {
    const auto ds = ts::make_windows(prep.normalizer.apply(s), setup.window);
    if (!ds.empty()) per_trial[s.trial_id()] = ae::evaluate_r2(model, ds);
  }
  const double r2_test = prep.test.empty() ? std::numeric_limits<double>::quiet_NaN() : ae::evaluate_r2(model, prep.test);
  const double r2_train = ae::evaluate_r2(model, prep.train);

  const fs::path dir(a.out);
  ensure_dir(dir);
  const json meta = {{"run_config", rc},
                     {"window", setup.window},
                     {"train_trials", trial_ids(prep.split.train)},
                     {"test_trials", trial_ids(prep.split.test)}};
  ckpt::save(dir / "model.json", model, meta);
  const json out = {{"run_config", rc},
                    {"report", report},
                    {"train_trials", trial_ids(prep.split.train)},
                    {"test_trials", trial_ids(prep.split.test)},
                    {"r2", {{"train", finite_or_null(r2_train)}, {"test", finite_or_null(r2_test)}, {"per_trial", per_trial}}}};
  write_json(dir / "train_report.json", out);
  spdlog::info("final train loss {:.6g}, held-out R2 {:.4f}", report.final_train_loss, r2_test);
  std::cout << json{{"r2_test", finite_or_null(r2_test)}, {"r2_train", r2_train}, {"epochs", report.epochs_run}}.dump()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// tune

struct TuneArgs {
  std::string data;
  std::string out;
  std::string spec;
  std::string space;
  std::string sh = "smoke";
  std::uint64_t seed = 0;
  double budget = 0.0;
  std::size_t workers = 1;
  std::size_t depth = 1;
  std::size_t brackets = 0;
  double rho = 1.0 / 3.0;
  double train_frac = 0.7;
  std::string config;
};

bohb::ShPreset sh_preset(const std::string& name) {
  if (name == "protocol") return bohb::kProtocolPreset;
  if (name == "default") return bohb::kDefaultPreset;
  if (name == "smoke") return {3.0, 1.0, 3.0};
  throw UsageError("unknown successive-halving preset '" + name + "' (protocol, default, smoke)");
}

int cmd_tune(const CLI::App& app, TuneArgs a) {
  const json cfg = load_config(a.config);
  a.data = pick(app, "--data", a.data, cfg, "data");
  a.out = pick(app, "--out", a.out, cfg, "out");
  a.seed = pick(app, "--seed", a.seed, cfg, "seed");
  a.budget = pick(app, "--budget", a.budget, cfg, "budget");
  a.workers = pick(app, "--workers", a.workers, cfg, "workers");
  a.sh = pick(app, "--sh", a.sh, cfg, "sh");
  a.depth = pick(app, "--depth", a.depth, cfg, "depth");
  a.brackets = pick(app, "--brackets", a.brackets, cfg, "brackets");
  a.rho = pick(app, "--rho", a.rho, cfg, "rho");
  a.train_frac = pick(app, "--train-frac", a.train_frac, cfg, "train_frac");
  if (a.data.empty() || a.out.empty()) throw UsageError("--data and --out are required");
  json spec_doc = cfg.value("spec", json::object());
  if (!a.spec.empty()) spec_doc = read_json(a.spec);
  const ModelSetup base = read_setup(spec_doc);

  bohb::ConfigSpace space = bohb::node_space(a.depth);
  if (!a.space.empty()) {
    space = read_json(a.space).get<bohb::ConfigSpace>();
  } else if (cfg.contains("space")) {
    space = cfg["space"].get<bohb::ConfigSpace>();
  }
  for (const auto& d : space.dims) {
    if (d.kind != bohb::DimKind::integer || d.low < 1) {
      throw UsageError("tune searches positive integer node counts; dimension '" + d.name + "' is not one");
    }
  }

  auto opt = bohb::BohbOptions::from_preset(sh_preset(a.sh));
  if (a.budget > 0.0) opt.max_budget = a.budget;
  opt.rho = a.rho;
  opt.seed = a.seed;
  opt.workers = a.workers;
  opt.brackets = a.brackets ? a.brackets : bohb::hyperband_s_max(opt.eta, opt.min_budget, opt.max_budget) + 1;
  opt.validate();

  const json rc = run_config("tune", {{"data", a.data},
                                      {"out", a.out},
                                      {"seed", a.seed},
                                      {"spec", setup_json(base)},
                                      {"space", space},
                                      {"sh", {{"preset", a.sh}, {"eta", opt.eta}, {"min_budget", opt.min_budget},
                                              {"max_budget", opt.max_budget}, {"brackets", opt.brackets}}},
                                      {"rho", opt.rho},
                                      {"q", opt.tpe.q},
                                      {"n_samples", opt.tpe.n_samples},
                                      {"bandwidth_factor", opt.tpe.bandwidth_factor},
                                      {"workers", opt.workers},
                                      {"train_frac", a.train_frac}});

  const auto trials = ts::load_trials(a.data);
  const auto prep = prepare(trials, base.window, a.train_frac, a.seed);
  const bohb::Objective objective = [&](const bohb::Config& c, double budget, std::uint64_t seed) {
    ae::AutoencoderSpec spec = base.spec;
    spec.encoder_layer_sizes.assign(c.begin(), c.end());
    auto model = ae::build(spec, seed);
    ae::TrainOptions t;
    t.epochs = static_cast<std::size_t>(std::max<long long>(1, std::llround(budget)));
    const auto r = ae::train(model, prep.train, t);
    return std::isfinite(r.final_validation_loss) ? r.final_validation_loss : r.final_train_loss;
  };

  const fs::path dir(a.out);
  ensure_dir(dir);
  std::ofstream audit(dir / "observations.jsonl", std::ios::binary);
  if (!audit) throw DataError("cannot write " + (dir / "observations.jsonl").string());
  audit << json{{"run_config", rc}}.dump() << '\n';
  std::size_t rows = 0;
  const auto result = bohb::bohb_run(space, objective, opt, [&](const bohb::Observation& o) {
    bohb::write_audit_line(audit, space, o);
    audit.flush();
    ++rows;
    if (!o.error.empty()) spdlog::warn("config {} failed at budget {}: {}", o.config_id, o.budget, o.error);
    spdlog::debug("config {} budget {:.4g} loss {:.6g}", o.config_id, o.budget, o.loss);
  });

  json summary = bohb::to_json(space, result, opt.max_budget);
  summary["audit_rows"] = rows;
  ae::AutoencoderSpec best = base.spec;
  best.encoder_layer_sizes.assign(result.incumbent.begin(), result.incumbent.end());
  const json out = {{"run_config", rc}, {"result", summary}, {"incumbent_spec", best}};
  write_json(dir / "incumbent.json", out);
  spdlog::info("incumbent {} with validation loss {:.6g} after {} evaluations", summary["incumbent"].dump(),
               result.incumbent_loss, result.observations.size());
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// detect

struct DetectArgs {
  std::string model;
  std::string data;
  std::string out;
  std::string spec;
  std::string metric = "mse";
  std::string thresholds = "fit";
  double quantile = 0.995;
  std::string config;
};

int cmd_detect(const CLI::App& app, DetectArgs a) {
  const json cfg = load_config(a.config);
  a.model = pick(app, "--model", a.model, cfg, "model");
  a.data = pick(app, "--data", a.data, cfg, "data");
  a.out = pick(app, "--out", a.out, cfg, "out");
  a.metric = pick(app, "--metric", a.metric, cfg, "metric");
  a.thresholds = pick(app, "--thresholds", a.thresholds, cfg, "thresholds");
  a.quantile = pick(app, "--quantile", a.quantile, cfg, "quantile");
  if (a.model.empty() || a.data.empty() || a.out.empty()) throw UsageError("--model, --data and --out are required");
  const auto metric = detect::metric_from_string(a.metric);
  if (a.thresholds != "fit" && a.thresholds != "table4") throw UsageError("--thresholds must be 'fit' or 'table4'");

  const json doc = ckpt::read_document(a.model);
  const auto model = ckpt::from_json(doc);
  const json meta = doc.value("metadata", json::object());
  ts::WindowSpec window{model.spec.input_len, model.spec.output_len, 10};
  if (meta.contains("window")) window = meta["window"].get<ts::WindowSpec>();
  json spec_doc = cfg.value("spec", json(nullptr));
  if (!a.spec.empty()) spec_doc = read_json(a.spec);
  if (!spec_doc.is_null()) {
    const auto override_setup = read_setup(spec_doc);
    if (override_setup.window.input_len != model.spec.input_len ||
        override_setup.window.output_len != model.spec.output_len) {
      throw UsageError("window spec " + std::to_string(override_setup.window.input_len) + "->" +
                       std::to_string(override_setup.window.output_len) + " does not match the checkpoint's " +
                       std::to_string(model.spec.input_len) + "->" + std::to_string(model.spec.output_len));
    }
    window = override_setup.window;
  }

  const json rc = run_config("detect", {{"model", a.model},
                                        {"model_seed", model.seed},
                                        {"seed", meta.contains("run_config") ? meta["run_config"].value("seed", json(nullptr)) : json(nullptr)},
                                        {"data", a.data},
                                        {"out", a.out},
                                        {"metric", a.metric},
                                        {"thresholds", a.thresholds},
                                        {"quantile", a.quantile},
                                        {"window", window},
                                        {"gap_tolerance", 1}});
  const auto trials = ts::load_trials(a.data);

  // Training-error distribution from the trials the checkpoint was trained on.
  std::optional<detect::LossDistribution> dist;
  std::vector<ts::MultivariateSeries> train;
  for (const auto& id : meta.value("train_trials", std::vector<std::string>{})) {
    for (const auto& t : trials) {
      if (t.trial_id() == id) train.push_back(model.normalizer ? model.normalizer->apply(t) : t);
    }
  }
  if (!train.empty()) {
    const auto ds = ts::make_windows(train, window);
    if (ds.size() >= detect::kMinDistributionSamples) dist = detect::fit_distribution(detect::compute_errors(model, ds), metric);
  }
  detect::ThresholdSet thresholds;
  if (a.thresholds == "table4") {
    thresholds = detect::reference_thresholds(metric);
  } else {
    if (!dist) throw DataError("cannot fit thresholds: the checkpoint's training trials are missing or too short in " + a.data);
    thresholds = detect::select_thresholds(*dist, a.quantile);
  }

  const fs::path dir(a.out);
  ensure_dir(dir);
  ensure_dir(dir / "plots");
  if (dist) write_json(dir / "loss_distribution.json", {{"run_config", rc}, {"distribution", detect::to_json(*dist)}});
  std::ofstream events(dir / "events.jsonl", std::ios::binary);
  if (!events) throw DataError("cannot write " + (dir / "events.jsonl").string());
  events << json{{"run_config", rc}}.dump() << '\n';

  json per_trial = json::array();
  std::vector<detect::TrialScore> scores;
  for (const auto& t : trials) {
    const auto r = detect::scan(model, t, thresholds, window);
    detect::write_events_jsonl(events, r.events, t);
    std::ofstream plot(dir / "plots" / (t.trial_id() + ".csv"), std::ios::binary);
    if (!plot) throw DataError("cannot write plot data for " + t.trial_id());
    detect::write_plot_csv(plot, r.errors, thresholds);
    json entry = {{"trial_id", t.trial_id()},
                  {"behavior", std::string(ts::to_string(t.annotation()))},
                  {"windows", r.errors.size()},
                  {"events", r.events.size()}};
    if (const auto truth = synth::read_ground_truth(a.data, t.trial_id())) {
      scores.push_back(detect::score_events(r.events, *truth, t.annotation(), window.output_len));
      entry["false_positive_events"] = scores.back().false_positive_events;
      entry["tip_over_detected"] = scores.back().tip_over_detected;
      entry["tip_over_intervals"] = scores.back().tip_over_intervals;
    }
    spdlog::debug("{}: {} events", t.trial_id(), r.events.size());
    per_trial.push_back(entry);
  }
  json out = {{"run_config", rc}, {"thresholds", thresholds}, {"trials", per_trial}};
  if (!scores.empty()) out["summary"] = detect::summarize(scores);
  write_json(dir / "detection.json", out);
  spdlog::info("detection over {} trials written to {}", trials.size(), dir.string());
  std::cout << (out.contains("summary") ? out["summary"] : json{{"trials", trials.size()}}).dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  std::string run_dir;
  std::string out;
};

std::string fmt_num(const json& v, int precision = 4) {
  if (!v.is_number()) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v.get<double>();
  return s.str();
}

int cmd_report(const ReportArgs& a) {
  const fs::path dir(a.run_dir);
  const std::vector<std::string> required = {"train_report.json", "loss_distribution.json", "detection.json",
                                             "events.jsonl"};
  std::vector<std::string> missing;
  for (const auto& f : required) {
    if (!fs::is_regular_file(dir / f)) missing.push_back(f);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("run directory " + dir.string() + " is missing: " + list);
  }
  const json train = read_json(dir / "train_report.json");
  const json dist = read_json(dir / "loss_distribution.json");
  const json detection = read_json(dir / "detection.json");

  json timeline = json::object();
  {
    std::ifstream in(dir / "events.jsonl");
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json e;
      try {
        e = json::parse(line);
      } catch (const json::exception& ex) {
        throw DataError("events.jsonl: " + std::string(ex.what()));
      }
      if (header && e.contains("run_config")) {
        header = false;
        continue;
      }
      header = false;
      timeline[e.at("trial_id").get<std::string>()].push_back(
          {{"start_ts", e["start_ts"]}, {"end_ts", e["end_ts"]}, {"channels", e["channels"]}});
    }
  }

  json provenance = {{"train", train.at("run_config")},
                     {"detect", detection.at("run_config")},
                     {"loss_distribution", dist.at("run_config")}};
  if (fs::is_regular_file(dir / "incumbent.json")) provenance["tune"] = read_json(dir / "incumbent.json").at("run_config");

  const json rc = run_config("report", {{"run_dir", a.run_dir}, {"out", a.out.empty() ? a.run_dir : a.out},
                                        {"seed", train.at("run_config").value("seed", json(nullptr))}});
  const json report = {{"run_config", rc},
                       {"r2", train.at("r2")},
                       {"loss_distribution", dist.at("distribution")},
                       {"thresholds", detection.at("thresholds")},
                       {"detection_summary", detection.value("summary", json(nullptr))},
                       {"event_timeline", timeline},
                       {"provenance", provenance}};

  std::ostringstream md;
  md << "# tipguard run report\n\n## Forecast quality (R^2)\n\n| split | R^2 |\n|---|---|\n";
  md << "| train | " << fmt_num(train["r2"]["train"]) << " |\n| held-out | " << fmt_num(train["r2"]["test"]) << " |\n";
  for (const auto& [id, v] : train["r2"]["per_trial"].items()) md << "| " << id << " | " << fmt_num(v) << " |\n";
  const auto& d = dist["distribution"];
  md << "\n## Training loss distribution (" << d["metric"].get<std::string>() << ", " << d["count"] << " windows)\n\n";
  md << "| quantile |";
  for (const auto& c : d["channels"]) md << ' ' << c.get<std::string>() << " |";
  md << "\n|---|";
  for (std::size_t c = 0; c < d["channels"].size(); ++c) md << "---|";
  md << '\n';
  for (const auto& [q, row] : d["quantiles"].items()) {
    md << "| " << q << " |";
    for (const auto& v : row) md << ' ' << fmt_num(v, 5) << " |";
    md << '\n';
  }
  md << "\n## Event timeline\n\n";
  if (timeline.empty()) md << "No events.\n";
  for (const auto& [id, evs] : timeline.items()) {
    md << "- " << id << ":";
    for (const auto& e : evs) md << " [" << fmt_num(e["start_ts"], 2) << ", " << fmt_num(e["end_ts"], 2) << "] x" << e["channels"].size();
    md << '\n';
  }
  if (detection.contains("summary")) {
    const auto& s = detection["summary"];
    md << "\nTip-over recall " << s["tip_over_detected"] << "/" << s["tip_over_intervals"] << ", false positives per normal trial "
       << fmt_num(s["false_positive_rate"], 2) << ".\n";
  }
  md << "\n## Provenance\n\n```json\n" << provenance.dump(2) << "\n```\n";

  const fs::path out_dir = a.out.empty() ? dir : fs::path(a.out);
  ensure_dir(out_dir);
  write_json(out_dir / "report.json", report);
  write_text(out_dir / "report.md", md.str());
  spdlog::info("report written to {}", out_dir.string());
  std::cout << md.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"tipguard: IMU forecasting autoencoder, hyperparameter search, and tip-over risk detection"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic trial corpus");
  synth->add_option("--out", synth_args.out, "Output directory");
  synth->add_option("--preset", synth_args.preset, "Corpus preset")->check(CLI::IsMember(synth::preset_names()));
  synth->add_option("--seed", synth_args.seed, "Corpus seed");
  synth->add_option("--config", synth_args.config, "JSON config; flags override its entries");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train the forecasting autoencoder");
  train->add_option("--data", train_args.data, "Directory of trial CSVs");
  train->add_option("--out", train_args.out, "Output directory for model.json and train_report.json");
  train->add_option("--spec", train_args.spec, "Architecture/window JSON");
  train->add_option("--seed", train_args.seed, "Split and initialization seed");
  train->add_option("--budget", train_args.budget, "Training epochs")->check(CLI::PositiveNumber);
  train->add_option("--batch", train_args.batch, "Mini-batch size")->check(CLI::PositiveNumber);
  train->add_option("--train-frac", train_args.train_frac, "Fraction of trials used for training");
  train->add_option("--config", train_args.config, "JSON config; flags override its entries");

  TuneArgs tune_args;
  auto* tune = app.add_subcommand("tune", "Search node counts with BOHB");
  tune->add_option("--data", tune_args.data, "Directory of trial CSVs");
  tune->add_option("--out", tune_args.out, "Output directory for incumbent.json and observations.jsonl");
  tune->add_option("--spec", tune_args.spec, "Base architecture/window JSON");
  tune->add_option("--space", tune_args.space, "Config space JSON (default: nodes 4..64 per layer)");
  tune->add_option("--sh", tune_args.sh, "Budget preset: protocol (20->100, eta sqrt 5), default (1->27, eta 3), smoke (1->3)");
  tune->add_option("--seed", tune_args.seed, "Search seed");
  tune->add_option("--budget", tune_args.budget, "Maximum budget in epochs (overrides the preset)");
  tune->add_option("--workers", tune_args.workers, "Concurrent evaluations per rung")->check(CLI::PositiveNumber);
  tune->add_option("--depth", tune_args.depth, "Encoder depth for the default space")->check(CLI::PositiveNumber);
  tune->add_option("--brackets", tune_args.brackets, "Hyperband brackets (default: one full cycle)");
  tune->add_option("--rho", tune_args.rho, "Fraction of random proposals; 1 gives plain Hyperband");
  tune->add_option("--train-frac", tune_args.train_frac, "Fraction of trials used for training");
  tune->add_option("--config", tune_args.config, "JSON config; flags override its entries");

  DetectArgs detect_args;
  auto* det = app.add_subcommand("detect", "Flag anomalous windows and emit events and plot data");
  det->add_option("--model", detect_args.model, "Checkpoint written by train");
  det->add_option("--data", detect_args.data, "Directory of trial CSVs");
  det->add_option("--out", detect_args.out, "Output directory");
  det->add_option("--spec", detect_args.spec, "Window JSON overriding the checkpoint's window");
  det->add_option("--metric", detect_args.metric, "Error metric")->check(CLI::IsMember({"mse", "mae"}));
  det->add_option("--thresholds", detect_args.thresholds, "Threshold source")->check(CLI::IsMember({"fit", "table4"}));
  det->add_option("--quantile", detect_args.quantile, "Quantile for fitted thresholds");
  det->add_option("--config", detect_args.config, "JSON config; flags override its entries");

  ReportArgs report_args;
  auto* rep = app.add_subcommand("report", "Consolidate a run directory into report.json and report.md");
  rep->add_option("run_dir", report_args.run_dir, "Directory holding train and detect outputs")->required();
  rep->add_option("--out", report_args.out, "Output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(*synth, synth_args);
    if (*train) return cmd_train(*train, train_args);
    if (*tune) return cmd_tune(*tune, tune_args);
    if (*det) return cmd_detect(*det, detect_args);
    if (*rep) return cmd_report(report_args);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const NumericError& e) {
    spdlog::error("{}", e.what());
    return 4;
  } catch (const json::exception& e) {
    spdlog::error("malformed JSON input: {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
