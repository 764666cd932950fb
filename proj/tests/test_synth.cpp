#include <gtest/gtest.h>

#include <complex>
#include <filesystem>
#include <numbers>

#include "tipguard/synth.hpp"

using namespace tipguard;
using synth::SynthConfig;
using synth::TransientKind;

namespace {

double dft_magnitude(const Eigen::VectorXd& x, double freq, double rate) {
  std::complex<double> acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    acc += x(i) * std::polar(1.0, -2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate);
  }
  return std::abs(acc);
}

double energy(const Eigen::VectorXd& col, std::size_t begin, std::size_t len, double mean) {
  return (col.segment(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(len)).array() - mean).square().mean();
}

}  // namespace

TEST(Synth, NoiselessBaselineIsPeriodicWithPeakAtWheelFrequency) {
  SynthConfig c;
  c.duration = 10.0;
  c.noise_sigma.fill(0.0);
  c.speed_variation = 0.0;
  c.attitude_drift = 0.0;
  const auto trial = synth::generate(c);
  const auto& x = trial.series.values();
  const auto period = static_cast<Eigen::Index>(c.rate / c.wheel_frequency);
  for (Eigen::Index i = 0; i + period < x.rows(); ++i) {
    for (Eigen::Index ch = 0; ch < 6; ++ch) ASSERT_NEAR(x(i, ch), x(i + period, ch), 1e-9);
  }
  // Bin spacing 0.1 Hz; the fundamental must dominate every other bin up to Nyquist.
  for (Eigen::Index ch = 0; ch < 6; ++ch) {
    Eigen::VectorXd col = x.col(ch).array() - x.col(ch).mean();
    const double peak = dft_magnitude(col, c.wheel_frequency, c.rate);
    for (int k = 1; k < 500; ++k) {
      const double f = 0.1 * k;
      if (std::abs(f - c.wheel_frequency) < 1e-9) continue;
      ASSERT_LT(dft_magnitude(col, f, c.rate), peak) << "channel " << ch << " bin " << f;
    }
  }
}

TEST(Synth, TipOverIntervalIndexFollowsRate) {
  for (double rate : {100.0, 200.0}) {
    SynthConfig c;
    c.rate = rate;
    c.transients.push_back({TransientKind::tip_over, 30.0, 2.0, 2.0});
    const auto trial = synth::generate(c);
    ASSERT_EQ(trial.series.size(), static_cast<std::size_t>(60.0 * rate));
    ASSERT_EQ(trial.truth.intervals.size(), 1u);
    EXPECT_EQ(trial.truth.intervals[0].start_index, static_cast<std::size_t>(3000 * (rate / 100.0)));
    EXPECT_EQ(trial.truth.intervals[0].end_index, static_cast<std::size_t>(3200 * (rate / 100.0)) - 1);
    EXPECT_EQ(trial.truth.intervals[0].kind, TransientKind::tip_over);
  }
}

TEST(Synth, GenerationIsPureInConfigAndSeed) {
  SynthConfig c;
  c.duration = 20.0;
  c.seed = 42;
  c.transients.push_back({TransientKind::slip, 5.0, 1.0, 1.5});
  c.rough_patches.push_back({12.0, 1.5, 0.6});
  const auto a = synth::generate(c);
  const auto b = synth::generate(c);
  EXPECT_TRUE(a.series.values() == b.series.values());
  EXPECT_EQ(a.series.timestamps(), b.series.timestamps());
  c.seed = 43;
  EXPECT_FALSE(synth::generate(c).series.values() == a.series.values());
}

TEST(Synth, ConfigValidation) {
  SynthConfig c;
  c.duration = 10.0;
  c.transients.push_back({TransientKind::tip_over, 9.5, 1.0, 2.0});
  EXPECT_THROW(synth::generate(c), UsageError);
  c.transients = {{TransientKind::tip_over, 1.0, 1.0, -1.0}};
  EXPECT_THROW(synth::generate(c), UsageError);
  c.transients = {{TransientKind::tip_over, 1.0, 2.0, 1.0}, {TransientKind::slip, 2.0, 1.0, 1.0}};
  EXPECT_THROW(synth::generate(c), UsageError);
  c.transients.clear();
  c.rate = 0.0;
  EXPECT_THROW(synth::generate(c), UsageError);
}

TEST(Synth, SmokePresetIsShort) {
  const auto trials = synth::corpus("smoke", 7);
  ASSERT_EQ(trials.size(), 3u);
  double total = 0.0;
  for (const auto& t : trials) total += t.series.timestamps().back() - t.series.timestamps().front();
  EXPECT_LT(total, 10.0);
  EXPECT_EQ(trials[2].series.annotation(), ts::Behavior::tip_over_risk);
  EXPECT_EQ(trials[2].truth.intervals.size(), 1u);
}

TEST(Synth, FullCorpusPresetMirrorsTrialMix) {
  const auto trials = synth::corpus("paper-analog", 2024);
  ASSERT_EQ(trials.size(), 10u);
  std::size_t samples = 0;
  int normal = 0, tip = 0, slip = 0;
  for (const auto& t : trials) {
    samples += t.series.size();
    switch (t.series.annotation()) {
      case ts::Behavior::normal:
        ++normal;
        EXPECT_TRUE(t.truth.intervals.empty());
        break;
      case ts::Behavior::tip_over_risk:
        ++tip;
        ASSERT_EQ(t.truth.intervals.size(), 1u);
        EXPECT_EQ(t.truth.intervals[0].kind, TransientKind::tip_over);
        break;
      case ts::Behavior::slip:
        ++slip;
        ASSERT_EQ(t.truth.intervals.size(), 1u);
        EXPECT_EQ(t.truth.intervals[0].kind, TransientKind::slip);
        break;
      default:
        FAIL();
    }
  }
  EXPECT_EQ(samples, 250000u);
  EXPECT_EQ(normal, 7);
  EXPECT_EQ(tip, 2);
  EXPECT_EQ(slip, 1);
  const auto again = synth::corpus("paper-analog", 2024);
  for (std::size_t i = 0; i < trials.size(); ++i) EXPECT_TRUE(trials[i].series.values() == again[i].series.values());
  EXPECT_THROW(synth::corpus("nope", 1), UsageError);
}

TEST(Synth, TransientsCarryMoreEnergyThanSurroundingBaseline) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& trial : synth::corpus("paper-analog", seed)) {
      const auto& x = trial.series.values();
      for (const auto& iv : trial.truth.intervals) {
        const std::size_t len = iv.end_index - iv.start_index + 1;
        ASSERT_GE(iv.start_index, len);
        ASSERT_LE(iv.end_index + 1 + len, trial.series.size());
        const std::size_t channels = iv.kind == TransientKind::slip ? 3 : 6;
        for (std::size_t c = 0; c < channels; ++c) {
          // Energy about the level of the baseline on both sides of the interval.
          const Eigen::VectorXd col = x.col(static_cast<Eigen::Index>(c));
          const auto before = col.segment(static_cast<Eigen::Index>(iv.start_index - len), static_cast<Eigen::Index>(len));
          const auto after = col.segment(static_cast<Eigen::Index>(iv.end_index + 1), static_cast<Eigen::Index>(len));
          const double level = 0.5 * (before.mean() + after.mean());
          const double context = 0.5 * (energy(col, iv.start_index - len, len, level) + energy(col, iv.end_index + 1, len, level));
          EXPECT_GT(energy(col, iv.start_index, len, level), context) << trial.truth.trial_id << " ch " << c;
        }
      }
    }
  }
}

TEST(Synth, NormalTrialsAreStationary) {
  for (const auto& trial : synth::corpus("paper-analog", 11)) {
    if (trial.series.annotation() != ts::Behavior::normal) continue;
    const auto& x = trial.series.values();
    const auto win = static_cast<Eigen::Index>(5.0 * trial.series.nominal_rate());
    for (Eigen::Index c = 0; c < 6; ++c) {
      const double mean = x.col(c).mean();
      const double sigma = std::sqrt((x.col(c).array() - mean).square().mean());
      for (Eigen::Index s = 0; s + win <= x.rows(); s += 100) {
        ASSERT_LT(std::abs(x.col(c).segment(s, win).mean() - mean), 3.0 * sigma);
      }
    }
  }
}

TEST(Synth, FilesRoundTripThroughIngestion) {
  const auto dir = std::filesystem::temp_directory_path() / "tipguard_synth_roundtrip";
  std::filesystem::remove_all(dir);
  const auto trials = synth::corpus("smoke", 3);
  for (const auto& t : trials) synth::write_trial(dir, t);
  const auto loaded = ts::load_trials(dir);
  ASSERT_EQ(loaded.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[i].trial_id(), trials[i].series.trial_id());
    EXPECT_EQ(loaded[i].annotation(), trials[i].series.annotation());
    EXPECT_TRUE(loaded[i].values() == trials[i].series.values());
    const auto truth = synth::read_ground_truth(dir, loaded[i].trial_id());
    ASSERT_TRUE(truth.has_value());
    ASSERT_EQ(truth->intervals.size(), trials[i].truth.intervals.size());
    for (std::size_t k = 0; k < truth->intervals.size(); ++k) {
      EXPECT_EQ(truth->intervals[k].start_index, trials[i].truth.intervals[k].start_index);
      EXPECT_EQ(truth->intervals[k].end_index, trials[i].truth.intervals[k].end_index);
    }
  }
  EXPECT_FALSE(synth::read_ground_truth(dir, "absent").has_value());
  std::filesystem::remove_all(dir);
}
