#pragma once

// Threshold detector over per-channel forecast errors.
//
// Errors are computed per window and channel over the L_out horizon in
// normalized space. A window is anomalous when any channel exceeds its
// threshold; anomalous windows separated by at most `gap` clean windows merge
// into one event spanning their target ranges.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tipguard/autoencoder.hpp"
#include "tipguard/common.hpp"
#include "tipguard/synth.hpp"
#include "tipguard/timeseries.hpp"

namespace tipguard::detect {

enum class Metric { mse, mae };

inline std::string_view to_string(Metric m) { return m == Metric::mse ? "mse" : "mae"; }

inline Metric metric_from_string(std::string_view s) {
  if (s == "mse" || s == "MSE") return Metric::mse;
  if (s == "mae" || s == "MAE") return Metric::mae;
  throw UsageError("unknown metric '" + std::string(s) + "' (expected mse or mae)");
}

using ErrorMatrix = Eigen::Matrix<double, Eigen::Dynamic, static_cast<int>(kChannels), Eigen::RowMajor>;

struct ChannelErrors {
  std::size_t input_len = 0;
  std::size_t output_len = 0;
  std::vector<std::size_t> window_starts;  // source index of each window's first input sample
  ErrorMatrix mse;
  ErrorMatrix mae;

  std::size_t size() const { return window_starts.size(); }
  const ErrorMatrix& values(Metric m) const { return m == Metric::mse ? mse : mae; }
  std::size_t target_start(std::size_t k) const { return window_starts[k] + input_len; }
  std::size_t target_end(std::size_t k) const { return window_starts[k] + input_len + output_len - 1; }

  void append(const ChannelErrors& other) {
    if (size() == 0) {
      *this = other;
      return;
    }
    if (other.input_len != input_len || other.output_len != output_len) {
      throw UsageError("cannot pool errors from different window shapes");
    }
    window_starts.insert(window_starts.end(), other.window_starts.begin(), other.window_starts.end());
    ErrorMatrix a(mse.rows() + other.mse.rows(), mse.cols());
    a << mse, other.mse;
    ErrorMatrix b(mae.rows() + other.mae.rows(), mae.cols());
    b << mae, other.mae;
    mse = std::move(a);
    mae = std::move(b);
  }
};

/// Per-window, per-channel errors from forecasts and their targets.
inline ChannelErrors errors_from_predictions(std::span<const ts::SeriesMatrix> predictions,
                                             std::span<const ts::SeriesMatrix> targets,
                                             std::vector<std::size_t> window_starts, std::size_t input_len) {
  if (predictions.size() != targets.size() || targets.size() != window_starts.size()) {
    throw UsageError("errors: prediction, target and start counts differ");
  }
  ChannelErrors e;
  e.input_len = input_len;
  e.output_len = targets.empty() ? 0 : static_cast<std::size_t>(targets.front().rows());
  e.window_starts = std::move(window_starts);
  const auto n = static_cast<Eigen::Index>(targets.size());
  e.mse.resize(n, static_cast<Eigen::Index>(kChannels));
  e.mae.resize(n, static_cast<Eigen::Index>(kChannels));
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& p = predictions[static_cast<std::size_t>(k)];
    const auto& t = targets[static_cast<std::size_t>(k)];
    if (p.rows() != t.rows() || p.cols() != t.cols() || static_cast<std::size_t>(t.rows()) != e.output_len) {
      throw UsageError("errors: prediction/target shape mismatch");
    }
    const auto diff = (p - t).array();
    e.mse.row(k) = diff.square().colwise().mean();
    e.mae.row(k) = diff.abs().colwise().mean();
  }
  return e;
}

/// Errors of `model` on every window of `ds` (already normalized).
inline ChannelErrors compute_errors(const ae::AutoencoderModel& model, const ts::WindowedDataset& ds) {
  const auto preds = ae::predict(model, ds);
  const auto targets = ae::collect_targets(ds);
  std::vector<std::size_t> starts(ds.size());
  for (std::size_t k = 0; k < ds.size(); ++k) starts[k] = ds.window_start(k);
  return errors_from_predictions(preds, targets, std::move(starts), ds.input_len());
}

// ---------------------------------------------------------------------------
// Distributions and thresholds

inline constexpr std::array<double, 5> kSummaryQuantiles = {0.5, 0.9, 0.95, 0.99, 0.995};
inline constexpr std::size_t kMinDistributionSamples = 100;

/// Type-7 (linear interpolation) sample quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw UsageError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw UsageError("quantile level must lie in [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct LossDistribution {
  Metric metric = Metric::mse;
  std::array<std::vector<double>, kChannels> sorted;

  std::size_t count() const { return sorted[0].size(); }
  double quantile(std::size_t channel, double p) const { return quantile_sorted(sorted.at(channel), p); }
  std::array<ChannelArray, kSummaryQuantiles.size()> summary() const {
    std::array<ChannelArray, kSummaryQuantiles.size()> out{};
    for (std::size_t q = 0; q < kSummaryQuantiles.size(); ++q) {
      for (std::size_t c = 0; c < kChannels; ++c) out[q][c] = quantile(c, kSummaryQuantiles[q]);
    }
    return out;
  }
};

/// Builds the per-channel error distribution; meant for training-data errors only.
inline LossDistribution fit_distribution(const ChannelErrors& errors, Metric metric) {
  const auto& v = errors.values(metric);
  if (errors.size() < kMinDistributionSamples) {
    throw DataError("loss distribution needs at least " + std::to_string(kMinDistributionSamples) +
                    " windows per channel, got " + std::to_string(errors.size()));
  }
  LossDistribution d;
  d.metric = metric;
  for (std::size_t c = 0; c < kChannels; ++c) {
    const auto col = v.col(static_cast<Eigen::Index>(c));
    auto& s = d.sorted[c];
    s.clear();
    s.reserve(static_cast<std::size_t>(col.size()));
    for (Eigen::Index k = 0; k < col.size(); ++k) s.push_back(col(k));
    if (!std::all_of(s.begin(), s.end(), [](double x) { return std::isfinite(x) && x >= 0.0; })) {
      throw DataError("loss distribution contains negative or non-finite errors");
    }
    std::sort(s.begin(), s.end());
    if (s.back() == 0.0) {
      throw DataError(std::string("all training errors are zero on ") + std::string(kChannelNames[c]) +
                      " (degenerate fit or leakage)");
    }
  }
  return d;
}

struct ThresholdSet {
  Metric metric = Metric::mse;
  ChannelArray values{};

  void validate() const {
    for (double v : values) {
      if (!(v > 0.0) || !std::isfinite(v)) throw UsageError("thresholds must be finite and strictly positive");
    }
  }
  bool operator==(const ThresholdSet&) const = default;
};

inline ThresholdSet select_thresholds(const LossDistribution& dist, double quantile) {
  if (!(quantile > 0.0 && quantile < 1.0)) throw UsageError("threshold quantile must lie in (0, 1)");
  ThresholdSet t;
  t.metric = dist.metric;
  for (std::size_t c = 0; c < kChannels; ++c) t.values[c] = dist.quantile(c, quantile);
  for (std::size_t c = 0; c < kChannels; ++c) {
    if (!(t.values[c] > 0.0)) {
      throw NumericError(std::string("fitted threshold for ") + std::string(kChannelNames[c]) + " is zero");
    }
  }
  return t;
}

/// Fixed reference thresholds, accel_x .. gyro_z.
inline ThresholdSet reference_thresholds(Metric m) {
  if (m == Metric::mse) return {Metric::mse, {0.04, 0.04, 0.04, 0.02, 0.05, 0.04}};
  return {Metric::mae, {0.25, 0.25, 0.25, 0.25, 0.25, 0.25}};
}

// ---------------------------------------------------------------------------
// Events

struct AnomalyEvent {
  std::size_t start_index = 0;  // first target sample of the first flagged window
  std::size_t end_index = 0;    // last target sample of the last flagged window (inclusive)
  std::size_t first_window = 0;
  std::size_t last_window = 0;
  Metric metric = Metric::mse;
  std::vector<std::size_t> channels;  // triggering channels, ascending
  ChannelArray peak_errors{};         // max error per channel over the event's windows
  std::array<std::optional<std::size_t>, kChannels> onset_window{};  // first flagged window per channel

  bool operator==(const AnomalyEvent&) const = default;
};

using FlagMatrix = Eigen::Array<bool, Eigen::Dynamic, static_cast<int>(kChannels), Eigen::RowMajor>;

inline FlagMatrix flag_windows(const ChannelErrors& errors, const ThresholdSet& t) {
  t.validate();
  const auto& v = errors.values(t.metric);
  FlagMatrix f(v.rows(), v.cols());
  for (Eigen::Index c = 0; c < v.cols(); ++c) f.col(c) = v.col(c).array() > t.values[static_cast<std::size_t>(c)];
  return f;
}

/// Merges events whose window ranges are separated by at most `gap` windows.
/// Input must be ordered by first_window; idempotent.
inline std::vector<AnomalyEvent> merge_events(std::span<const AnomalyEvent> events, std::size_t gap = 1) {
  std::vector<AnomalyEvent> out;
  for (const auto& e : events) {
    if (!out.empty() && e.first_window <= out.back().last_window + gap + 1) {
      auto& m = out.back();
      m.last_window = std::max(m.last_window, e.last_window);
      m.end_index = std::max(m.end_index, e.end_index);
      m.start_index = std::min(m.start_index, e.start_index);
      for (std::size_t c = 0; c < kChannels; ++c) {
        m.peak_errors[c] = std::max(m.peak_errors[c], e.peak_errors[c]);
        if (e.onset_window[c] && (!m.onset_window[c] || *e.onset_window[c] < *m.onset_window[c])) {
          m.onset_window[c] = e.onset_window[c];
        }
      }
      std::vector<std::size_t> ch;
      std::set_union(m.channels.begin(), m.channels.end(), e.channels.begin(), e.channels.end(), std::back_inserter(ch));
      m.channels = std::move(ch);
    } else {
      out.push_back(e);
    }
  }
  return out;
}

/// One single-window event per flagged window, then merged.
inline std::vector<AnomalyEvent> events_from_errors(const ChannelErrors& errors, const ThresholdSet& t,
                                                    std::size_t gap = 1) {
  const auto flags = flag_windows(errors, t);
  const auto& v = errors.values(t.metric);
  std::vector<AnomalyEvent> raw;
  for (std::size_t k = 0; k < errors.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    if (!flags.row(row).any()) continue;
    AnomalyEvent e;
    e.start_index = errors.target_start(k);
    e.end_index = errors.target_end(k);
    e.first_window = e.last_window = k;
    e.metric = t.metric;
    for (std::size_t c = 0; c < kChannels; ++c) {
      e.peak_errors[c] = v(row, static_cast<Eigen::Index>(c));
      if (flags(row, static_cast<Eigen::Index>(c))) {
        e.channels.push_back(c);
        e.onset_window[c] = k;
      }
    }
    raw.push_back(std::move(e));
  }
  return merge_events(raw, gap);
}

struct ScanResult {
  ChannelErrors errors;
  std::vector<AnomalyEvent> events;
};

/// Normalizes `series` with the model's normalizer, windows it at `spec`,
/// forecasts, and thresholds the errors.
inline ScanResult scan(const ae::AutoencoderModel& model, const ts::MultivariateSeries& series, const ThresholdSet& t,
                       const ts::WindowSpec& spec, std::size_t gap = 1) {
  spec.validate();
  if (spec.input_len != model.spec.input_len || spec.output_len != model.spec.output_len) {
    throw UsageError("window spec does not match the model's input/output lengths");
  }
  const auto normalized = model.normalizer ? model.normalizer->apply(series) : series;
  const auto ds = ts::make_windows(normalized, spec);
  ScanResult r;
  if (ds.empty()) {
    r.errors.input_len = spec.input_len;
    r.errors.output_len = spec.output_len;
    return r;
  }
  r.errors = compute_errors(model, ds);
  r.events = events_from_errors(r.errors, t, gap);
  return r;
}

inline std::vector<AnomalyEvent> detect(const ae::AutoencoderModel& model, const ts::MultivariateSeries& series,
                                        const ThresholdSet& t, const ts::WindowSpec& spec) {
  return scan(model, series, t, spec).events;
}

// ---------------------------------------------------------------------------
// Scoring against synthetic ground truth

struct TrialScore {
  std::string trial_id;
  ts::Behavior behavior = ts::Behavior::unlabeled;
  std::size_t events = 0;
  std::size_t true_positive_events = 0;
  std::size_t false_positive_events = 0;
  std::size_t tip_over_intervals = 0;
  std::size_t tip_over_detected = 0;
  std::size_t slip_intervals = 0;
  std::size_t slip_detected = 0;
  /// Largest spread of per-channel onset windows among events matching a tip-over.
  std::optional<std::size_t> max_onset_spread;
  /// Smallest number of triggering channels among events matching a tip-over.
  std::optional<std::size_t> min_tip_over_channels;
};

inline bool overlaps(const AnomalyEvent& e, const synth::Interval& iv, std::size_t tolerance) {
  const std::size_t lo = iv.start_index > tolerance ? iv.start_index - tolerance : 0;
  const std::size_t hi = iv.end_index + tolerance;
  return e.start_index <= hi && e.end_index >= lo;
}

/// An event is a true positive when it lies within `tolerance` samples of a
/// ground-truth interval; every other event is a false positive.
inline TrialScore score_events(std::span<const AnomalyEvent> events, const synth::GroundTruth& truth,
                               ts::Behavior behavior, std::size_t tolerance) {
  TrialScore s;
  s.trial_id = truth.trial_id;
  s.behavior = behavior;
  s.events = events.size();
  for (const auto& e : events) {
    const bool hit = std::any_of(truth.intervals.begin(), truth.intervals.end(),
                                 [&](const synth::Interval& iv) { return overlaps(e, iv, tolerance); });
    (hit ? s.true_positive_events : s.false_positive_events)++;
  }
  for (const auto& iv : truth.intervals) {
    const bool tip = iv.kind == synth::TransientKind::tip_over;
    (tip ? s.tip_over_intervals : s.slip_intervals)++;
    bool found = false;
    for (const auto& e : events) {
      if (!overlaps(e, iv, tolerance)) continue;
      found = true;
      if (!tip) continue;
      std::size_t lo = SIZE_MAX, hi = 0;
      for (const auto& w : e.onset_window) {
        if (!w) continue;
        lo = std::min(lo, *w);
        hi = std::max(hi, *w);
      }
      s.max_onset_spread = std::max(s.max_onset_spread.value_or(0), hi - lo);
      s.min_tip_over_channels = std::min(s.min_tip_over_channels.value_or(kChannels), e.channels.size());
    }
    if (found) (tip ? s.tip_over_detected : s.slip_detected)++;
  }
  return s;
}

struct DetectionSummary {
  std::size_t trials = 0;
  std::size_t normal_trials = 0;
  std::size_t events = 0;
  std::size_t false_positive_events = 0;
  std::size_t normal_trial_false_positives = 0;
  std::size_t max_normal_trial_false_positives = 0;
  std::size_t tip_over_intervals = 0;
  std::size_t tip_over_detected = 0;
  std::size_t slip_intervals = 0;
  std::size_t slip_detected = 0;
  std::optional<std::size_t> max_onset_spread;
  std::optional<std::size_t> min_tip_over_channels;

  double recall() const {
    return tip_over_intervals == 0 ? std::numeric_limits<double>::quiet_NaN()
                                   : static_cast<double>(tip_over_detected) / static_cast<double>(tip_over_intervals);
  }
  double precision() const {
    return events == 0 ? std::numeric_limits<double>::quiet_NaN()
                       : static_cast<double>(events - false_positive_events) / static_cast<double>(events);
  }
  /// False-positive events per normal trial.
  double false_positive_rate() const {
    return normal_trials == 0 ? std::numeric_limits<double>::quiet_NaN()
                              : static_cast<double>(normal_trial_false_positives) / static_cast<double>(normal_trials);
  }
};

inline DetectionSummary summarize(std::span<const TrialScore> scores) {
  DetectionSummary d;
  for (const auto& s : scores) {
    ++d.trials;
    d.events += s.events;
    d.false_positive_events += s.false_positive_events;
    d.tip_over_intervals += s.tip_over_intervals;
    d.tip_over_detected += s.tip_over_detected;
    d.slip_intervals += s.slip_intervals;
    d.slip_detected += s.slip_detected;
    if (s.behavior == ts::Behavior::normal) {
      ++d.normal_trials;
      d.normal_trial_false_positives += s.false_positive_events;
      d.max_normal_trial_false_positives = std::max(d.max_normal_trial_false_positives, s.false_positive_events);
    }
    if (s.max_onset_spread) d.max_onset_spread = std::max(d.max_onset_spread.value_or(0), *s.max_onset_spread);
    if (s.min_tip_over_channels) {
      d.min_tip_over_channels = std::min(d.min_tip_over_channels.value_or(kChannels), *s.min_tip_over_channels);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const ThresholdSet& t) {
  j = {{"metric", std::string(to_string(t.metric))}, {"values", t.values}};
}
inline void from_json(const nlohmann::json& j, ThresholdSet& t) {
  t.metric = metric_from_string(j.at("metric").get<std::string>());
  t.values = j.at("values").get<ChannelArray>();
  t.validate();
}

inline nlohmann::json to_json(const LossDistribution& d) {
  nlohmann::json q = nlohmann::json::object();
  const auto summary = d.summary();
  for (std::size_t i = 0; i < kSummaryQuantiles.size(); ++i) {
    char key[16];
    std::snprintf(key, sizeof key, "%g", kSummaryQuantiles[i]);
    q[key] = summary[i];
  }
  nlohmann::json mean = nlohmann::json::array();
  for (const auto& s : d.sorted) {
    double sum = 0.0;
    for (double x : s) sum += x;
    mean.push_back(sum / static_cast<double>(s.size()));
  }
  return {{"metric", std::string(to_string(d.metric))},
          {"count", d.count()},
          {"channels", kChannelNames},
          {"mean", mean},
          {"quantiles", q}};
}

/// One JSON-lines record per event.
inline nlohmann::json event_record(const AnomalyEvent& e, const ts::MultivariateSeries& s) {
  nlohmann::json channels = nlohmann::json::array();
  nlohmann::json peaks = nlohmann::json::array();
  for (auto c : e.channels) {
    channels.push_back(std::string(kChannelNames[c]));
    peaks.push_back(e.peak_errors[c]);
  }
  const auto& ts = s.timestamps();
  return {{"trial_id", s.trial_id()},
          {"start_ts", ts[std::min(e.start_index, ts.size() - 1)]},
          {"end_ts", ts[std::min(e.end_index, ts.size() - 1)]},
          {"metric", std::string(to_string(e.metric))},
          {"channels", channels},
          {"peak_errors", peaks}};
}

inline void write_events_jsonl(std::ostream& out, std::span<const AnomalyEvent> events, const ts::MultivariateSeries& s) {
  for (const auto& e : events) out << event_record(e, s).dump() << '\n';
}

inline constexpr std::string_view kPlotHeader = "window_start,channel,metric,error,threshold,flagged";

/// Long-format rows: one per window and channel.
inline void write_plot_csv(std::ostream& out, const ChannelErrors& errors, const ThresholdSet& t) {
  out << kPlotHeader << '\n';
  const auto& v = errors.values(t.metric);
  std::string line;
  for (std::size_t k = 0; k < errors.size(); ++k) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      const double err = v(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
      line.clear();
      line += std::to_string(errors.window_starts[k]);
      line += ',';
      line += kChannelNames[c];
      line += ',';
      line += to_string(t.metric);
      line += ',';
      ts::detail::append_double(line, err);
      line += ',';
      ts::detail::append_double(line, t.values[c]);
      line += err > t.values[c] ? ",1\n" : ",0\n";
      out << line;
    }
  }
}

inline void to_json(nlohmann::json& j, const DetectionSummary& d) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  auto opt = [](const std::optional<std::size_t>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j = {{"trials", d.trials},
       {"normal_trials", d.normal_trials},
       {"events", d.events},
       {"false_positive_events", d.false_positive_events},
       {"normal_trial_false_positives", d.normal_trial_false_positives},
       {"max_normal_trial_false_positives", d.max_normal_trial_false_positives},
       {"false_positive_rate", num(d.false_positive_rate())},
       {"tip_over_intervals", d.tip_over_intervals},
       {"tip_over_detected", d.tip_over_detected},
       {"slip_intervals", d.slip_intervals},
       {"slip_detected", d.slip_detected},
       {"recall", num(d.recall())},
       {"precision", num(d.precision())},
       {"max_onset_spread_windows", opt(d.max_onset_spread)},
       {"min_tip_over_channels", opt(d.min_tip_over_channels)}};
}

}  // namespace tipguard::detect
