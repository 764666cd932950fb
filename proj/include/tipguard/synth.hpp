#pragma once

// Rover-like synthetic IMU trials with ground-truth risk intervals.
//
// The baseline is built in unit-free "base" coordinates and then mapped to
// physical units (m/s^2, rad/s). Per channel it is the wheel undulation
// (fundamental + second harmonic, with slowly varying wheel speed), a smooth
// slope-attitude drift, and white noise. Risk transients and benign rough
// terrain patches are added on top.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tipguard/common.hpp"
#include "tipguard/timeseries.hpp"

namespace tipguard::synth {

enum class TransientKind { tip_over, slip };

inline std::string_view to_string(TransientKind k) { return k == TransientKind::tip_over ? "tip_over" : "slip"; }

inline TransientKind transient_kind_from_string(std::string_view s) {
  if (s == "tip_over") return TransientKind::tip_over;
  if (s == "slip") return TransientKind::slip;
  throw DataError("unknown transient kind '" + std::string(s) + "'");
}

struct Transient {
  TransientKind kind = TransientKind::tip_over;
  double start = 0.0;     // seconds
  double duration = 1.5;  // seconds
  double amplitude = 1.0; // base units
};

/// Benign high-variance terrain segment. Not a risk, not in GroundTruth.
struct RoughPatch {
  double start = 0.0;
  double duration = 1.5;
  double amplitude = 0.4;  // extra noise sigma, base units
};

struct SynthConfig {
  std::string trial_id = "trial";
  ts::Behavior behavior = ts::Behavior::normal;
  double duration = 60.0;
  double rate = 100.0;
  double wheel_frequency = 2.0;
  ChannelArray noise_sigma{0.05, 0.05, 0.05, 0.05, 0.05, 0.05};
  double speed_variation = 0.1;  // relative amplitude of wheel-speed modulation
  double attitude_drift = 1.0;   // scale of the slope-attitude drift
  std::vector<Transient> transients;
  std::vector<RoughPatch> rough_patches;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(rate > 0.0)) throw UsageError("synth rate must be positive");
    if (!(duration > 0.0)) throw UsageError("synth duration must be positive");
    if (!(wheel_frequency > 0.0) || wheel_frequency >= rate / 2.0) {
      throw UsageError("wheel frequency must lie in (0, rate/2)");
    }
    for (double s : noise_sigma) {
      if (!(s >= 0.0)) throw UsageError("noise sigma must be non-negative");
    }
    if (speed_variation < 0.0 || speed_variation >= 1.0) throw UsageError("speed_variation must lie in [0, 1)");
    if (attitude_drift < 0.0) throw UsageError("attitude_drift must be non-negative");
    auto check_window = [&](double start, double dur, double amp, const char* what) {
      if (!(start >= 0.0) || !(dur > 0.0) || start + dur > duration) {
        throw UsageError(std::string(what) + " must lie within the trial duration");
      }
      if (!(amp > 0.0)) throw UsageError(std::string(what) + " amplitude must be positive");
    };
    for (const auto& t : transients) check_window(t.start, t.duration, t.amplitude, "transient");
    for (const auto& p : rough_patches) check_window(p.start, p.duration, p.amplitude, "rough patch");
    std::vector<std::pair<double, double>> spans;
    for (const auto& t : transients) spans.emplace_back(t.start, t.start + t.duration);
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i].first < spans[i - 1].second) throw UsageError("transients must not overlap");
    }
  }
};

struct Interval {
  TransientKind kind = TransientKind::tip_over;
  std::size_t start_index = 0;
  std::size_t end_index = 0;  // inclusive
};

struct GroundTruth {
  std::string trial_id;
  std::vector<Interval> intervals;
  std::vector<std::pair<std::size_t, std::size_t>> rough_patches;  // inclusive index ranges
};

struct Trial {
  ts::MultivariateSeries series;
  GroundTruth truth;
};

/// Physical mapping of the base signal: offset + scale * u.
inline constexpr ChannelArray kPhysicalScale = {0.5, 0.5, 0.5, 0.2, 0.2, 0.2};
inline constexpr ChannelArray kPhysicalOffset = {0.0, 0.0, 9.81, 0.0, 0.0, 0.0};

namespace detail {

struct Harmonic {
  double amplitude;
  double frequency;
  double phase;
};

inline std::vector<Harmonic> draw_slow_process(std::mt19937_64& rng, double scale, double fmin, double fmax) {
  std::uniform_real_distribution<double> f(fmin, fmax);
  std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> a(0.5, 1.0);
  std::vector<Harmonic> h(3);
  for (auto& c : h) c = {scale * a(rng) / 3.0, f(rng), ph(rng)};
  return h;
}

inline double eval(const std::vector<Harmonic>& hs, double t) {
  double v = 0.0;
  for (const auto& h : hs) v += h.amplitude * std::sin(2.0 * std::numbers::pi * h.frequency * t + h.phase);
  return v;
}

inline double eval_derivative(const std::vector<Harmonic>& hs, double t) {
  double v = 0.0;
  for (const auto& h : hs) {
    const double w = 2.0 * std::numbers::pi * h.frequency;
    v += h.amplitude * w * std::cos(w * t + h.phase);
  }
  return v;
}

/// Integral from 0 to t.
inline double eval_integral(const std::vector<Harmonic>& hs, double t) {
  double v = 0.0;
  for (const auto& h : hs) {
    const double w = 2.0 * std::numbers::pi * h.frequency;
    v += h.amplitude * (std::cos(h.phase) - std::cos(w * t + h.phase)) / w;
  }
  return v;
}

// Undulation amplitudes (fundamental, harmonic) and phase offsets per channel.
inline constexpr ChannelArray kFundamental = {0.7, 0.6, 0.9, 0.6, 0.8, 0.6};
inline constexpr ChannelArray kHarmonic = {0.2, 0.15, 0.3, 0.2, 0.25, 0.15};
inline constexpr ChannelArray kPhase = {0.0, 1.1, 0.4, 2.0, 0.9, 2.7};

// Tip-over onset jump per unit amplitude; gyro channels then ramp to double.
inline constexpr ChannelArray kTipOverGain = {0.8, 1.0, -0.9, 1.0, 0.8, 0.75};

inline std::size_t to_index(double seconds, double rate) { return static_cast<std::size_t>(std::llround(seconds * rate)); }

}  // namespace detail

/// Deterministic in (config, seed).
inline Trial generate(const SynthConfig& cfg) {
  cfg.validate();
  using std::numbers::pi;
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration * cfg.rate));
  if (n == 0) throw UsageError("synth trial has no samples");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * pi);
  const double phase0 = phase(rng);
  const auto speed = detail::draw_slow_process(rng, 1.0, 0.05, 0.3);
  const auto pitch = detail::draw_slow_process(rng, cfg.attitude_drift, 0.02, 0.15);
  const auto roll = detail::draw_slow_process(rng, cfg.attitude_drift, 0.02, 0.15);
  const auto yaw = detail::draw_slow_process(rng, 0.5 * cfg.attitude_drift, 0.02, 0.1);
  std::mt19937_64 noise_rng(mix_seed(cfg.seed, 17));
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> t(n);
  ts::SeriesMatrix u(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kChannels));
  for (std::size_t i = 0; i < n; ++i) {
    const double ti = static_cast<double>(i) / cfg.rate;
    t[i] = ti;
    const double wheel_phase =
        phase0 + 2.0 * pi * cfg.wheel_frequency * (ti + cfg.speed_variation * detail::eval_integral(speed, ti));
    const double p = detail::eval(pitch, ti);
    const double r = detail::eval(roll, ti);
    ChannelArray drift = {0.8 * p, 0.8 * r, -0.3 * (p * p + r * r), detail::eval_derivative(roll, ti),
                          detail::eval_derivative(pitch, ti), detail::eval_derivative(yaw, ti)};
    for (std::size_t c = 0; c < kChannels; ++c) {
      const double und = detail::kFundamental[c] * std::sin(wheel_phase + detail::kPhase[c]) +
                         detail::kHarmonic[c] * std::sin(2.0 * wheel_phase + 2.0 * detail::kPhase[c]);
      const double noise = cfg.noise_sigma[c] > 0.0 ? cfg.noise_sigma[c] * gauss(noise_rng) : 0.0;
      u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = und + drift[c] + noise;
    }
  }

  GroundTruth truth;
  truth.trial_id = cfg.trial_id;
  std::mt19937_64 patch_rng(mix_seed(cfg.seed, 29));
  for (const auto& patch : cfg.rough_patches) {
    const std::size_t s = detail::to_index(patch.start, cfg.rate);
    const std::size_t e = std::min(n, detail::to_index(patch.start + patch.duration, cfg.rate));
    for (std::size_t i = s; i < e; ++i) {
      for (std::size_t c = 0; c < kChannels; ++c) {
        u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) += patch.amplitude * gauss(patch_rng);
      }
    }
    if (e > s) truth.rough_patches.emplace_back(s, e - 1);
  }

  for (const auto& tr : cfg.transients) {
    const std::size_t s = detail::to_index(tr.start, cfg.rate);
    const std::size_t e = std::min(n, detail::to_index(tr.start + tr.duration, cfg.rate));
    if (e <= s) continue;
    const double len = static_cast<double>(e - s);
    for (std::size_t i = s; i < e; ++i) {
      const double tau = static_cast<double>(i - s) / len;
      const auto row = static_cast<Eigen::Index>(i);
      if (tr.kind == TransientKind::tip_over) {
        // Accelerometer step (the body tilts), gyro jump that keeps growing.
        for (std::size_t c = 0; c < 3; ++c) u(row, static_cast<Eigen::Index>(c)) += tr.amplitude * detail::kTipOverGain[c];
        for (std::size_t c = 3; c < kChannels; ++c) {
          u(row, static_cast<Eigen::Index>(c)) += tr.amplitude * detail::kTipOverGain[c] * (1.0 + tau);
        }
      } else {
        // Hann-windowed 12 Hz vibration on the accelerometer axes.
        const double env = std::sin(pi * tau) * std::sin(pi * tau);
        const double ti = t[i];
        for (std::size_t c = 0; c < 3; ++c) {
          u(row, static_cast<Eigen::Index>(c)) +=
              tr.amplitude * env * std::sin(2.0 * pi * 12.0 * ti + static_cast<double>(c));
        }
      }
    }
    truth.intervals.push_back({tr.kind, s, e - 1});
  }
  std::sort(truth.intervals.begin(), truth.intervals.end(),
            [](const Interval& a, const Interval& b) { return a.start_index < b.start_index; });

  ts::SeriesMatrix x(u.rows(), u.cols());
  for (std::size_t c = 0; c < kChannels; ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    x.col(ci) = (u.col(ci).array() * kPhysicalScale[c] + kPhysicalOffset[c]).matrix();
  }
  return {ts::MultivariateSeries(std::move(t), std::move(x), cfg.rate, cfg.behavior, cfg.trial_id), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Presets

inline constexpr int kCorpusVersion = 1;

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"smoke", "paper-analog"};
  return names;
}

namespace detail {

/// Places `count` intervals of length `len` in [lo, hi), each at least `gap`
/// seconds away from every entry of `taken`.
inline std::vector<double> place(std::mt19937_64& rng, std::size_t count, double len, double lo, double hi, double gap,
                                 std::vector<std::pair<double, double>>& taken) {
  std::vector<double> starts;
  std::uniform_real_distribution<double> u(lo, hi - len);
  for (std::size_t k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double s = std::round(u(rng) * 100.0) / 100.0;
      const bool clear = std::all_of(taken.begin(), taken.end(), [&](const auto& iv) {
        return s + len + gap <= iv.first || s >= iv.second + gap;
      });
      if (clear) {
        taken.emplace_back(s, s + len);
        starts.push_back(s);
        break;
      }
    }
  }
  return starts;
}

}  // namespace detail

/// Synth configs of a named corpus; every trial seed derives from `seed`.
inline std::vector<SynthConfig> preset_configs(const std::string& name, std::uint64_t seed) {
  std::vector<SynthConfig> out;
  if (name == "smoke") {
    const ts::Behavior kinds[] = {ts::Behavior::normal, ts::Behavior::normal, ts::Behavior::tip_over_risk};
    for (std::size_t i = 0; i < 3; ++i) {
      SynthConfig c;
      c.trial_id = "smoke_" + std::to_string(i);
      c.behavior = kinds[i];
      c.duration = 3.0;
      c.seed = mix_seed(seed, i);
      if (kinds[i] == ts::Behavior::tip_over_risk) c.transients.push_back({TransientKind::tip_over, 1.5, 0.5, 1.0});
      out.push_back(std::move(c));
    }
    return out;
  }
  if (name == "paper-analog") {
    // 10 trials x 250 s at 100 Hz: 7 normal, 2 tip-over, 1 slip.
    for (std::size_t i = 0; i < 10; ++i) {
      SynthConfig c;
      c.duration = 250.0;
      c.seed = mix_seed(seed, i);
      std::mt19937_64 layout(mix_seed(c.seed, 101));
      std::vector<std::pair<double, double>> taken;
      if (i < 7) {
        c.trial_id = "normal_" + std::to_string(i);
        c.behavior = ts::Behavior::normal;
      } else if (i < 9) {
        c.trial_id = "tip_over_" + std::to_string(i - 7);
        c.behavior = ts::Behavior::tip_over_risk;
        for (double s : detail::place(layout, 1, 1.5, 0.3 * c.duration, 0.8 * c.duration, 0.0, taken)) {
          c.transients.push_back({TransientKind::tip_over, s, 1.5, 1.0});
        }
      } else {
        c.trial_id = "slip_0";
        c.behavior = ts::Behavior::slip;
        for (double s : detail::place(layout, 1, 1.0, 0.3 * c.duration, 0.8 * c.duration, 0.0, taken)) {
          c.transients.push_back({TransientKind::slip, s, 1.0, 1.0});
        }
      }
      for (double s : detail::place(layout, 1, 3.0, 5.0, c.duration - 5.0, 5.0, taken)) {
        c.rough_patches.push_back({s, 3.0, 0.4});
      }
      out.push_back(std::move(c));
    }
    return out;
  }
  throw UsageError("unknown corpus preset '" + name + "'");
}

inline std::vector<Trial> corpus(const std::string& name, std::uint64_t seed) {
  std::vector<Trial> out;
  for (const auto& c : preset_configs(name, seed)) out.push_back(generate(c));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const GroundTruth& g, const ts::MultivariateSeries& s) {
  nlohmann::json iv = nlohmann::json::array();
  for (const auto& i : g.intervals) {
    iv.push_back({{"kind", std::string(to_string(i.kind))},
                  {"start_index", i.start_index},
                  {"end_index", i.end_index},
                  {"start_ts", s.timestamps()[i.start_index]},
                  {"end_ts", s.timestamps()[i.end_index]}});
  }
  nlohmann::json rp = nlohmann::json::array();
  for (const auto& [a, b] : g.rough_patches) rp.push_back({{"start_index", a}, {"end_index", b}});
  return {{"trial_id", g.trial_id}, {"intervals", iv}, {"rough_patches", rp}};
}

inline GroundTruth ground_truth_from_json(const nlohmann::json& j) {
  GroundTruth g;
  g.trial_id = j.at("trial_id").get<std::string>();
  for (const auto& i : j.at("intervals")) {
    g.intervals.push_back({transient_kind_from_string(i.at("kind").get<std::string>()),
                           i.at("start_index").get<std::size_t>(), i.at("end_index").get<std::size_t>()});
  }
  if (j.contains("rough_patches")) {
    for (const auto& p : j.at("rough_patches")) {
      g.rough_patches.emplace_back(p.at("start_index").get<std::size_t>(), p.at("end_index").get<std::size_t>());
    }
  }
  return g;
}

inline std::filesystem::path truth_path(const std::filesystem::path& dir, const std::string& trial_id) {
  return dir / (trial_id + ".truth.json");
}

/// Writes `<id>.csv`, the `<id>.json` annotation sidecar and `<id>.truth.json`.
inline void write_trial(const std::filesystem::path& dir, const Trial& trial) {
  std::filesystem::create_directories(dir);
  ts::write_trial(dir / (trial.series.trial_id() + ".csv"), trial.series);
  std::ofstream out(truth_path(dir, trial.series.trial_id()), std::ios::binary);
  if (!out) throw DataError("cannot write ground truth in " + dir.string());
  out << to_json(trial.truth, trial.series).dump(2) << '\n';
}

inline std::optional<GroundTruth> read_ground_truth(const std::filesystem::path& dir, const std::string& trial_id) {
  std::ifstream in(truth_path(dir, trial_id));
  if (!in) return std::nullopt;
  try {
    return ground_truth_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(truth_path(dir, trial_id).string() + ": " + e.what());
  }
}

}  // namespace tipguard::synth
