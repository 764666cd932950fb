#pragma once

// Multivariate IMU streams: ingestion, z-score normalization, forecasting
// windows and trial-level train/test partitioning.

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tipguard/common.hpp"

namespace tipguard::ts {

using SeriesMatrix = Eigen::Matrix<double, Eigen::Dynamic, static_cast<int>(kChannels), Eigen::RowMajor>;

inline constexpr double kDefaultRate = 100.0;
inline constexpr std::string_view kCsvHeader = "timestamp,accel_x,accel_y,accel_z,gyro_x,gyro_y,gyro_z";

struct Sample {
  double t = 0.0;
  ChannelArray values{};
};

enum class Behavior { normal, tip_over_risk, slip, unlabeled };

inline std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::normal: return "normal";
    case Behavior::tip_over_risk: return "tip_over_risk";
    case Behavior::slip: return "slip";
    case Behavior::unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

inline Behavior behavior_from_string(std::string_view s) {
  if (s == "normal") return Behavior::normal;
  if (s == "tip_over_risk") return Behavior::tip_over_risk;
  if (s == "slip") return Behavior::slip;
  if (s == "unlabeled") return Behavior::unlabeled;
  throw DataError("unknown behavior annotation '" + std::string(s) + "'");
}

/// 1 / median sampling interval. Falls back to kDefaultRate for a single sample.
inline double estimate_rate(std::span<const double> timestamps) {
  if (timestamps.size() < 2) return kDefaultRate;
  std::vector<double> dt(timestamps.size() - 1);
  for (std::size_t i = 1; i < timestamps.size(); ++i) dt[i - 1] = timestamps[i] - timestamps[i - 1];
  const auto mid = dt.begin() + static_cast<std::ptrdiff_t>(dt.size() / 2);
  std::nth_element(dt.begin(), mid, dt.end());
  double median = *mid;
  if (dt.size() % 2 == 0) {
    const double lower = *std::max_element(dt.begin(), mid);
    median = 0.5 * (median + lower);
  }
  return 1.0 / median;
}

/// A timestamped T x 6 block of accelerometer / gyroscope readings.
///
/// Storage is shared and immutable, so copies are cheap and the type can be
/// handed to worker threads freely.
class MultivariateSeries {
 public:
  MultivariateSeries(std::vector<double> timestamps, SeriesMatrix values,
                     std::optional<double> nominal_rate = std::nullopt,
                     Behavior annotation = Behavior::unlabeled, std::string trial_id = {})
      : annotation_(annotation), trial_id_(std::move(trial_id)) {
    if (timestamps.empty()) throw DataError("series must contain at least one sample");
    if (static_cast<Eigen::Index>(timestamps.size()) != values.rows()) {
      throw DataError("timestamp count does not match sample rows");
    }
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
      if (!std::isfinite(timestamps[i])) throw DataError("non-finite timestamp at row " + std::to_string(i + 1));
      if (i > 0 && !(timestamps[i] > timestamps[i - 1])) {
        throw DataError("timestamps not strictly increasing at row " + std::to_string(i + 1));
      }
    }
    if (!values.allFinite()) throw DataError("series contains non-finite channel values");
    rate_ = nominal_rate ? *nominal_rate : estimate_rate(timestamps);
    if (!(rate_ > 0.0) || !std::isfinite(rate_)) throw DataError("nominal rate must be positive");
    t_ = std::make_shared<const std::vector<double>>(std::move(timestamps));
    x_ = std::make_shared<const SeriesMatrix>(std::move(values));
  }

  static MultivariateSeries from_samples(std::span<const Sample> samples,
                                         std::optional<double> nominal_rate = std::nullopt,
                                         Behavior annotation = Behavior::unlabeled,
                                         std::string trial_id = {}) {
    std::vector<double> t(samples.size());
    SeriesMatrix x(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(kChannels));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      t[i] = samples[i].t;
      for (std::size_t c = 0; c < kChannels; ++c) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = samples[i].values[c];
    }
    return MultivariateSeries(std::move(t), std::move(x), nominal_rate, annotation, std::move(trial_id));
  }

  /// Same timestamps and metadata, new channel values.
  MultivariateSeries with_values(SeriesMatrix values) const {
    if (values.rows() != x_->rows()) throw DataError("replacement values have wrong row count");
    MultivariateSeries out = *this;
    if (!values.allFinite()) throw DataError("series contains non-finite channel values");
    out.x_ = std::make_shared<const SeriesMatrix>(std::move(values));
    return out;
  }

  MultivariateSeries with_metadata(Behavior annotation, std::string trial_id) const {
    MultivariateSeries out = *this;
    out.annotation_ = annotation;
    out.trial_id_ = std::move(trial_id);
    return out;
  }

  std::size_t size() const { return t_->size(); }
  const std::vector<double>& timestamps() const { return *t_; }
  const SeriesMatrix& values() const { return *x_; }
  std::shared_ptr<const SeriesMatrix> shared_values() const { return x_; }
  double nominal_rate() const { return rate_; }
  Behavior annotation() const { return annotation_; }
  const std::string& trial_id() const { return trial_id_; }

  Sample sample(std::size_t i) const {
    Sample s;
    s.t = (*t_)[i];
    for (std::size_t c = 0; c < kChannels; ++c) s.values[c] = (*x_)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    return s;
  }

 private:
  std::shared_ptr<const std::vector<double>> t_;
  std::shared_ptr<const SeriesMatrix> x_;
  double rate_ = kDefaultRate;
  Behavior annotation_ = Behavior::unlabeled;
  std::string trial_id_;
};

// ---------------------------------------------------------------------------
// CSV + sidecar I/O

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(',', pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

inline void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace detail

/// Parses a trial CSV. Errors name the 1-based data row and file line.
inline MultivariateSeries parse_csv(std::istream& in, const std::string& source_name = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source_name + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = detail::trim(line);
  if (header != kCsvHeader) {
    const auto cols = detail::split_commas(header);
    static constexpr std::array<std::string_view, 7> expected = {
        "timestamp", "accel_x", "accel_y", "accel_z", "gyro_x", "gyro_y", "gyro_z"};
    for (auto name : expected) {
      if (std::find(cols.begin(), cols.end(), name) == cols.end()) {
        throw DataError(source_name + ": missing column '" + std::string(name) + "' in header");
      }
    }
    throw DataError(source_name + ": header must be exactly '" + std::string(kCsvHeader) + "'");
  }

  std::vector<double> t;
  std::vector<double> flat;
  std::size_t line_no = 1;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    ++row;
    const auto fields = detail::split_commas(trimmed);
    const auto where = [&] {
      return source_name + ": row " + std::to_string(row) + " (line " + std::to_string(line_no) + ")";
    };
    if (fields.size() != 7) {
      throw DataError(where() + ": expected 7 fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t k = 0; k < 7; ++k) {
      const auto f = detail::trim(fields[k]);
      double v = 0.0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) {
        throw DataError(where() + ": cannot parse '" + std::string(f) + "'");
      }
      const std::string_view col = k == 0 ? std::string_view("timestamp") : kChannelNames[k - 1];
      if (!std::isfinite(v)) throw DataError(where() + ": non-finite value in column " + std::string(col));
      if (k == 0) {
        if (!t.empty() && !(v > t.back())) {
          throw DataError(where() + ": timestamp not strictly increasing");
        }
        t.push_back(v);
      } else {
        flat.push_back(v);
      }
    }
  }
  if (t.empty()) throw DataError(source_name + ": no data rows");
  SeriesMatrix x = Eigen::Map<const SeriesMatrix>(flat.data(), static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(kChannels));
  return MultivariateSeries(std::move(t), std::move(x));
}

struct Annotation {
  std::string trial_id;
  Behavior behavior = Behavior::unlabeled;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".json");
  return p;
}

inline std::optional<Annotation> read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  nlohmann::json j;
  try {
    in >> j;
    Annotation a;
    a.trial_id = j.at("trial_id").get<std::string>();
    a.behavior = behavior_from_string(j.at("behavior").get<std::string>());
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed annotation sidecar: " + e.what());
  }
}

/// Ingests a trial CSV plus its optional `<stem>.json` annotation sidecar.
inline MultivariateSeries ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  auto series = parse_csv(in, path.string());
  Annotation ann{path.stem().string(), Behavior::unlabeled};
  if (auto side = read_sidecar(sidecar_path(path))) ann = *side;
  return series.with_metadata(ann.behavior, ann.trial_id);
}

inline std::string to_csv(const MultivariateSeries& s) {
  std::string out;
  out.reserve(s.size() * 96 + 64);
  out.append(kCsvHeader);
  out.push_back('\n');
  const auto& x = s.values();
  for (std::size_t i = 0; i < s.size(); ++i) {
    detail::append_double(out, s.timestamps()[i]);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      out.push_back(',');
      detail::append_double(out, x(static_cast<Eigen::Index>(i), c));
    }
    out.push_back('\n');
  }
  return out;
}

inline void write_trial(const std::filesystem::path& csv_path, const MultivariateSeries& s) {
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + csv_path.string());
    out << to_csv(s);
  }
  nlohmann::json j = {{"trial_id", s.trial_id()}, {"behavior", std::string(to_string(s.annotation()))}};
  std::ofstream side(sidecar_path(csv_path), std::ios::binary);
  if (!side) throw DataError("cannot write sidecar for " + csv_path.string());
  side << j.dump(2) << '\n';
}

/// All `*.csv` trials in a directory, ordered by filename.
inline std::vector<MultivariateSeries> load_trials(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("data directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no trial CSVs in " + dir.string());
  std::vector<MultivariateSeries> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(ingest_csv(f));
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-channel z-score transform. Fit on training trials only.
struct Normalizer {
  ChannelArray mean{};
  ChannelArray scale{1, 1, 1, 1, 1, 1};

  static Normalizer fit(std::span<const MultivariateSeries> train) {
    if (train.empty()) throw DataError("cannot fit normalizer on empty input");
    Normalizer n;
    std::array<double, kChannels> sum{};
    double count = 0.0;
    for (const auto& s : train) {
      const auto& x = s.values();
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < kChannels; ++c) sum[c] += x(r, static_cast<Eigen::Index>(c));
      }
      count += static_cast<double>(x.rows());
    }
    for (std::size_t c = 0; c < kChannels; ++c) n.mean[c] = sum[c] / count;
    std::array<double, kChannels> ss{};
    for (const auto& s : train) {
      const auto& x = s.values();
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < kChannels; ++c) {
          const double d = x(r, static_cast<Eigen::Index>(c)) - n.mean[c];
          ss[c] += d * d;
        }
      }
    }
    for (std::size_t c = 0; c < kChannels; ++c) {
      const double sd = std::sqrt(ss[c] / count);
      n.scale[c] = sd > 0.0 ? sd : 1.0;
    }
    return n;
  }

  SeriesMatrix transform(const SeriesMatrix& x) const {
    SeriesMatrix out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const auto ci = static_cast<std::size_t>(c);
      out.col(c) = (x.col(c).array() - mean[ci]) / scale[ci];
    }
    return out;
  }

  SeriesMatrix inverse(const SeriesMatrix& z) const {
    SeriesMatrix out(z.rows(), z.cols());
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const auto ci = static_cast<std::size_t>(c);
      out.col(c) = z.col(c).array() * scale[ci] + mean[ci];
    }
    return out;
  }

  MultivariateSeries apply(const MultivariateSeries& s) const { return s.with_values(transform(s.values())); }
  MultivariateSeries invert(const MultivariateSeries& s) const { return s.with_values(inverse(s.values())); }
};

inline void to_json(nlohmann::json& j, const Normalizer& n) { j = {{"mean", n.mean}, {"scale", n.scale}}; }
inline void from_json(const nlohmann::json& j, Normalizer& n) {
  j.at("mean").get_to(n.mean);
  j.at("scale").get_to(n.scale);
  for (double s : n.scale) {
    if (!(s > 0.0)) throw DataError("normalizer scale must be positive");
  }
}

// ---------------------------------------------------------------------------
// Windowing

struct WindowSpec {
  std::size_t input_len = 25;
  std::size_t output_len = 5;
  std::size_t step = 10;

  void validate() const {
    if (input_len < 1 || output_len < 1 || step < 1) {
      throw UsageError("window spec requires input_len, output_len and step >= 1");
    }
  }
  std::size_t span() const { return input_len + output_len; }
  bool operator==(const WindowSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const WindowSpec& w) {
  j = {{"input_len", w.input_len}, {"output_len", w.output_len}, {"step", w.step}};
}
inline void from_json(const nlohmann::json& j, WindowSpec& w) {
  w.input_len = j.at("input_len").get<std::size_t>();
  w.output_len = j.at("output_len").get<std::size_t>();
  // "step": null means every offset.
  w.step = (!j.contains("step") || j.at("step").is_null()) ? 1 : j.at("step").get<std::size_t>();
}

/// floor((T - L_in - L_out) / step) + 1, or 0 when no window fits.
inline std::size_t window_count(std::size_t length, const WindowSpec& spec) {
  if (length < spec.span()) return 0;
  return (length - spec.span()) / spec.step + 1;
}

/// Paired (input, target) forecasting windows referencing shared source data.
class WindowedDataset {
 public:
  WindowedDataset() = default;
  WindowedDataset(std::size_t input_len, std::size_t output_len) : input_len_(input_len), output_len_(output_len) {}

  /// Builds a dataset from explicit windows; each pair becomes its own source.
  static WindowedDataset from_pairs(std::span<const SeriesMatrix> inputs, std::span<const SeriesMatrix> targets) {
    if (inputs.size() != targets.size() || inputs.empty()) throw UsageError("from_pairs needs equal, non-empty lists");
    WindowedDataset ds(static_cast<std::size_t>(inputs[0].rows()), static_cast<std::size_t>(targets[0].rows()));
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (static_cast<std::size_t>(inputs[k].rows()) != ds.input_len_ ||
          static_cast<std::size_t>(targets[k].rows()) != ds.output_len_) {
        throw UsageError("from_pairs: inconsistent window lengths");
      }
      SeriesMatrix joined(inputs[k].rows() + targets[k].rows(), static_cast<Eigen::Index>(kChannels));
      joined << inputs[k], targets[k];
      ds.sources_.push_back(std::make_shared<const SeriesMatrix>(std::move(joined)));
      ds.entries_.push_back({static_cast<std::uint32_t>(ds.sources_.size() - 1), 0});
    }
    return ds;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t input_len() const { return input_len_; }
  std::size_t output_len() const { return output_len_; }

  auto input(std::size_t k) const {
    const auto& e = entries_.at(k);
    return sources_[e.source]->middleRows(static_cast<Eigen::Index>(e.start), static_cast<Eigen::Index>(input_len_));
  }
  auto target(std::size_t k) const {
    const auto& e = entries_.at(k);
    return sources_[e.source]->middleRows(static_cast<Eigen::Index>(e.start + input_len_),
                                          static_cast<Eigen::Index>(output_len_));
  }
  /// Index of the window's first input sample within its source series.
  std::size_t window_start(std::size_t k) const { return entries_.at(k).start; }
  std::size_t source_index(std::size_t k) const { return entries_.at(k).source; }

  void append(const WindowedDataset& other) {
    if (other.empty()) return;
    if (empty() && sources_.empty()) {
      input_len_ = other.input_len_;
      output_len_ = other.output_len_;
    }
    if (other.input_len_ != input_len_ || other.output_len_ != output_len_) {
      throw UsageError("cannot append datasets with different window lengths");
    }
    const auto offset = static_cast<std::uint32_t>(sources_.size());
    sources_.insert(sources_.end(), other.sources_.begin(), other.sources_.end());
    for (const auto& e : other.entries_) entries_.push_back({e.source + offset, e.start});
  }

  WindowedDataset subset(std::span<const std::size_t> indices) const {
    WindowedDataset out(input_len_, output_len_);
    out.sources_ = sources_;
    out.entries_.reserve(indices.size());
    for (auto k : indices) out.entries_.push_back(entries_.at(k));
    return out;
  }

 private:
  friend WindowedDataset make_windows(const MultivariateSeries&, const WindowSpec&);

  struct Entry {
    std::uint32_t source;
    std::size_t start;
  };
  std::size_t input_len_ = 0;
  std::size_t output_len_ = 0;
  std::vector<std::shared_ptr<const SeriesMatrix>> sources_;
  std::vector<Entry> entries_;
};

/// Window k covers input [k*step, k*step + L_in) and target [k*step + L_in, k*step + L_in + L_out).
inline WindowedDataset make_windows(const MultivariateSeries& series, const WindowSpec& spec) {
  spec.validate();
  WindowedDataset ds(spec.input_len, spec.output_len);
  const std::size_t n = window_count(series.size(), spec);
  if (n == 0) return ds;
  ds.sources_.push_back(series.shared_values());
  ds.entries_.reserve(n);
  for (std::size_t k = 0; k < n; ++k) ds.entries_.push_back({0, k * spec.step});
  return ds;
}

inline WindowedDataset make_windows(std::span<const MultivariateSeries> trials, const WindowSpec& spec) {
  WindowedDataset ds(spec.input_len, spec.output_len);
  for (const auto& s : trials) ds.append(make_windows(s, spec));
  return ds;
}

// ---------------------------------------------------------------------------
// Trial split

struct TrialSplit {
  std::vector<MultivariateSeries> train;
  std::vector<MultivariateSeries> test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

inline bool trainable(Behavior b) { return b == Behavior::normal || b == Behavior::unlabeled; }

/// Whole-trial split. Only normal (or unlabeled) trials may land in train;
/// round(train_frac * N) of them do, chosen by a seeded shuffle.
inline TrialSplit split_trials(std::span<const MultivariateSeries> trials, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw UsageError("train_frac must lie in (0, 1)");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trainable(trials[i].annotation())) eligible.push_back(i);
  }
  if (eligible.empty()) throw DataError("no normal trials available for training");

  std::mt19937_64 rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  const auto wanted = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(trials.size())));
  const std::size_t n_train = std::clamp<std::size_t>(wanted, 1, eligible.size());

  std::vector<bool> in_train(trials.size(), false);
  for (std::size_t k = 0; k < n_train; ++k) in_train[eligible[k]] = true;

  TrialSplit split;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (in_train[i]) {
      split.train.push_back(trials[i]);
      split.train_indices.push_back(i);
    } else {
      split.test.push_back(trials[i]);
      split.test_indices.push_back(i);
    }
  }
  return split;
}

}  // namespace tipguard::ts
