#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "tipguard/timeseries.hpp"

namespace fs = std::filesystem;
using namespace tipguard;
using namespace tipguard::ts;

namespace {

MultivariateSeries ramp_series(std::size_t n, double offset = 0.0, Behavior b = Behavior::normal, std::string id = "t") {
  std::vector<double> t(n);
  SeriesMatrix x(static_cast<Eigen::Index>(n), 6);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = 0.01 * static_cast<double>(i);
    for (int c = 0; c < 6; ++c) x(static_cast<Eigen::Index>(i), c) = offset + static_cast<double>(i) * (c + 1) + 0.5 * c;
  }
  return MultivariateSeries(std::move(t), std::move(x), std::nullopt, b, std::move(id));
}

MultivariateSeries random_series(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> t(n);
  SeriesMatrix x(static_cast<Eigen::Index>(n), 6);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = 0.01 * static_cast<double>(i);
    for (int c = 0; c < 6; ++c) x(static_cast<Eigen::Index>(i), c) = 3.0 * c + (c + 1) * nd(rng);
  }
  return MultivariateSeries(std::move(t), std::move(x));
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tipguard_ts_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Ingest, ParsesWellFormedFileAndEstimatesRate) {
  std::istringstream in(
      "timestamp,accel_x,accel_y,accel_z,gyro_x,gyro_y,gyro_z\n"
      "0.00,1,2,3,4,5,6\n"
      "0.01,1.5,2,3,4,5,6\n"
      "0.02,2,2,3,4,5,-6e-1\n");
  const auto s = parse_csv(in);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_NEAR(s.nominal_rate(), 100.0, 1e-9);
  EXPECT_DOUBLE_EQ(s.values()(1, 0), 1.5);
  EXPECT_DOUBLE_EQ(s.values()(2, 5), -0.6);
}

TEST(Ingest, NanRowIsReportedByRowNumber) {
  std::ostringstream csv;
  csv << kCsvHeader << '\n';
  for (int r = 1; r <= 9; ++r) {
    csv << 0.01 * r << ",0," << (r == 7 ? "nan" : "1") << ",2,3,4,5\n";
  }
  std::istringstream in(csv.str());
  try {
    parse_csv(in);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 7"), std::string::npos) << msg;
    EXPECT_NE(msg.find("accel_y"), std::string::npos) << msg;
  }
}

TEST(Ingest, RejectsMalformedRowsAndHeaders) {
  {
    std::istringstream in(std::string(kCsvHeader) + "\n0,1,2,3,4,5,6\n0.01,1,2,3,4,5\n");
    EXPECT_THROW(parse_csv(in), DataError);
  }
  {
    std::istringstream in(std::string(kCsvHeader) + "\n0,1,2,3,4,5,6\n0.01,1,2,abc,4,5,6\n");
    EXPECT_THROW(parse_csv(in), DataError);
  }
  {
    std::istringstream in(std::string(kCsvHeader) + "\n0.02,1,2,3,4,5,6\n0.01,1,2,3,4,5,6\n");
    EXPECT_THROW(parse_csv(in), DataError);
  }
  {
    std::istringstream in("timestamp,accel_x,accel_y,accel_z,gyro_x,gyro_y\n0,1,2,3,4,5\n");
    try {
      parse_csv(in);
      FAIL();
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find("gyro_z"), std::string::npos);
    }
  }
}

TEST(Ingest, LargeTrialAtHundredHertz) {
  const std::size_t n = 250000;
  std::string csv(kCsvHeader);
  csv.push_back('\n');
  csv.reserve(n * 40);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> jitter(-0.001, 0.001);
  for (std::size_t i = 0; i < n; ++i) {
    csv += std::to_string(0.01 * static_cast<double>(i) + jitter(rng) + 1.0);
    csv += ",0.1,0.2,9.8,0.01,0.02,0.03\n";
  }
  std::istringstream in(csv);
  const auto s = parse_csv(in);
  EXPECT_EQ(s.size(), n);
  EXPECT_NEAR(s.nominal_rate(), 100.0, 2.0);
}

TEST(Ingest, RoundTripsThroughFileWithSidecar) {
  const auto dir = temp_dir("roundtrip");
  const auto s = random_series(50, 11).with_metadata(Behavior::slip, "trial_x");
  write_trial(dir / "trial_x.csv", s);
  const auto back = ingest_csv(dir / "trial_x.csv");
  EXPECT_EQ(back.trial_id(), "trial_x");
  EXPECT_EQ(back.annotation(), Behavior::slip);
  ASSERT_EQ(back.size(), s.size());
  EXPECT_EQ(back.values(), s.values());
  EXPECT_EQ(back.timestamps(), s.timestamps());
  fs::remove_all(dir);
}

TEST(Normalizer, ConstantChannelFallsBackToUnitScale) {
  std::vector<double> t = {0.0, 0.01, 0.02};
  SeriesMatrix x(3, 6);
  x.setConstant(5.0);
  x(0, 1) = 0.0;
  x(1, 1) = 2.0;
  x(2, 1) = 1.0;
  const MultivariateSeries s(t, x);
  const auto n = Normalizer::fit(std::span(&s, 1));
  EXPECT_DOUBLE_EQ(n.mean[0], 5.0);
  EXPECT_DOUBLE_EQ(n.scale[0], 1.0);
  EXPECT_DOUBLE_EQ(n.mean[1], 1.0);
}

TEST(Normalizer, PopulationStdOfZeroAndTwoIsOne) {
  std::vector<double> t = {0.0, 0.01};
  SeriesMatrix x(2, 6);
  x.row(0).setZero();
  x.row(1).setConstant(2.0);
  const MultivariateSeries s(t, x);
  const auto n = Normalizer::fit(std::span(&s, 1));
  for (int c = 0; c < 6; ++c) {
    EXPECT_DOUBLE_EQ(n.mean[c], 1.0);
    EXPECT_DOUBLE_EQ(n.scale[c], 1.0);
  }
}

TEST(Normalizer, PooledFitEqualsConcatenation) {
  const auto a = random_series(40, 1);
  const auto b = random_series(70, 2);
  SeriesMatrix joined(110, 6);
  joined << a.values(), b.values();
  std::vector<double> t(110);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  const MultivariateSeries cat(t, joined);
  const std::vector<MultivariateSeries> both = {a, b};
  const auto n1 = Normalizer::fit(both);
  const auto n2 = Normalizer::fit(std::span(&cat, 1));
  EXPECT_EQ(n1.mean, n2.mean);
  EXPECT_EQ(n1.scale, n2.scale);
  EXPECT_THROW(Normalizer::fit(std::span<const MultivariateSeries>{}), DataError);
}

TEST(Normalizer, CentersRoundTripsAndStandardizes) {
  const std::vector<MultivariateSeries> train = {random_series(500, 5), random_series(300, 6)};
  const auto n = Normalizer::fit(train);

  SeriesMatrix at_mean(1, 6);
  for (int c = 0; c < 6; ++c) at_mean(0, c) = n.mean[c];
  EXPECT_LT(n.transform(at_mean).cwiseAbs().maxCoeff(), 1e-15);

  for (const auto& s : train) {
    const auto back = n.invert(n.apply(s));
    EXPECT_LT((back.values() - s.values()).cwiseAbs().maxCoeff(), 1e-12);
  }

  // Recompute moments over the transformed corpus.
  std::array<double, 6> sum{}, sq{};
  double count = 0;
  for (const auto& s : train) {
    const auto z = n.apply(s).values();
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      for (int c = 0; c < 6; ++c) {
        sum[c] += z(r, c);
        sq[c] += z(r, c) * z(r, c);
      }
    }
    count += static_cast<double>(z.rows());
  }
  for (int c = 0; c < 6; ++c) {
    const double mu = sum[c] / count;
    EXPECT_LT(std::abs(mu), 1e-9);
    EXPECT_NEAR(std::sqrt(sq[c] / count - mu * mu), 1.0, 1e-9);
  }
}

TEST(Normalizer, TestTrialsDoNotInfluenceStatistics) {
  std::vector<MultivariateSeries> trials;
  for (int i = 0; i < 6; ++i) {
    trials.push_back(random_series(100, 40 + i).with_metadata(i < 4 ? Behavior::normal : Behavior::tip_over_risk,
                                                              "t" + std::to_string(i)));
  }
  const auto split = split_trials(trials, 0.5, 9);
  const auto fitted = Normalizer::fit(split.train);
  std::vector<MultivariateSeries> only_train;
  for (auto i : split.train_indices) only_train.push_back(trials[i]);
  const auto recomputed = Normalizer::fit(only_train);
  EXPECT_EQ(fitted.mean, recomputed.mean);
  EXPECT_EQ(fitted.scale, recomputed.scale);
}

TEST(Windows, CountsFromExamples) {
  EXPECT_EQ(make_windows(ramp_series(30), {25, 5, 10}).size(), 1u);
  const auto ds = make_windows(ramp_series(100), {25, 5, 10});
  ASSERT_EQ(ds.size(), 8u);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(ds.window_start(k), 10 * k);
  EXPECT_EQ(make_windows(ramp_series(29), {25, 5, 10}).size(), 0u);
  EXPECT_THROW(make_windows(ramp_series(29), {0, 5, 10}), UsageError);
}

TEST(Windows, CountMatchesBruteForceEnumeration) {
  for (std::size_t T = 1; T <= 200; ++T) {
    for (std::size_t lin = 1; lin <= 12; ++lin) {
      for (std::size_t lout = 1; lout <= 7; ++lout) {
        for (std::size_t step : {1u, 2u, 3u, 10u}) {
          std::size_t brute = 0;
          for (std::size_t off = 0; off + lin + lout <= T; off += step) ++brute;
          ASSERT_EQ(window_count(T, {lin, lout, step}), brute) << T << " " << lin << " " << lout << " " << step;
        }
      }
    }
  }
}

TEST(Windows, InputAndTargetReconstructSourceSlice) {
  const auto s = random_series(137, 21);
  for (WindowSpec spec : {WindowSpec{25, 5, 10}, WindowSpec{7, 3, 1}, WindowSpec{10, 10, 4}}) {
    const auto ds = make_windows(s, spec);
    for (std::size_t k = 0; k < ds.size(); ++k) {
      SeriesMatrix joined(static_cast<Eigen::Index>(spec.span()), 6);
      joined << ds.input(k), ds.target(k);
      const auto start = static_cast<Eigen::Index>(ds.window_start(k));
      EXPECT_EQ(joined, s.values().middleRows(start, static_cast<Eigen::Index>(spec.span())));
    }
  }
}

TEST(Windows, AppendAndSubsetPreserveWindows) {
  const std::vector<MultivariateSeries> trials = {random_series(60, 1), random_series(45, 2)};
  const auto all = make_windows(trials, {10, 5, 5});
  EXPECT_EQ(all.size(), window_count(60, {10, 5, 5}) + window_count(45, {10, 5, 5}));
  const std::vector<std::size_t> pick = {all.size() - 1, 0};
  const auto sub = all.subset(pick);
  EXPECT_EQ(sub.input(0), all.input(all.size() - 1));
  EXPECT_EQ(sub.target(1), all.target(0));
}

TEST(Split, SevenOfTenTrialsGoToTraining) {
  std::vector<MultivariateSeries> trials;
  for (int i = 0; i < 10; ++i) {
    const auto b = i < 7 ? Behavior::normal : (i < 9 ? Behavior::tip_over_risk : Behavior::slip);
    trials.push_back(ramp_series(40, i, b, "trial" + std::to_string(i)));
  }
  const auto split = split_trials(trials, 0.7, 1);
  EXPECT_EQ(split.train.size(), 7u);
  EXPECT_EQ(split.test.size(), 3u);
  for (const auto& s : split.train) EXPECT_EQ(s.annotation(), Behavior::normal);
}

TEST(Split, RiskTrialsAreForcedIntoTest) {
  const std::vector<MultivariateSeries> trials = {ramp_series(40, 0, Behavior::tip_over_risk, "risk"),
                                                  ramp_series(40, 1, Behavior::normal, "norm")};
  const auto split = split_trials(trials, 0.5, 77);
  ASSERT_EQ(split.train.size(), 1u);
  EXPECT_EQ(split.train[0].trial_id(), "norm");
  EXPECT_EQ(split.test[0].trial_id(), "risk");
}

TEST(Split, DeterministicPerSeedAndRejectsNoNormalTrials) {
  std::vector<MultivariateSeries> trials;
  for (int i = 0; i < 12; ++i) trials.push_back(ramp_series(40, i, Behavior::normal, std::to_string(i)));
  const auto a = split_trials(trials, 0.6, 5);
  const auto b = split_trials(trials, 0.6, 5);
  EXPECT_EQ(a.train_indices, b.train_indices);
  EXPECT_EQ(a.test_indices, b.test_indices);

  const std::vector<MultivariateSeries> risky = {ramp_series(40, 0, Behavior::slip)};
  EXPECT_THROW(split_trials(risky, 0.7, 1), DataError);
  EXPECT_THROW(split_trials(trials, 1.0, 1), UsageError);
}
