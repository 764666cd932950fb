#pragma once

// Tree-Parzen-style density models: the best observations form l(x), the worst
// form g(x), and proposals maximise l(x) / g(x) among draws from a widened l.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "tipguard/bohb/space.hpp"
#include "tipguard/common.hpp"

namespace tipguard::bohb {

struct TpeParams {
  double q = 0.15;                ///< fraction of observations forming the good density
  std::size_t n_min = 0;          ///< 0 means d + 1
  std::size_t n_samples = 64;     ///< candidates drawn per proposal
  double bandwidth_factor = 3.0;  ///< widening applied to l for the candidates
  double min_bandwidth = 1e-3;

  std::size_t min_points(const ConfigSpace& space) const { return n_min ? n_min : space.size() + 1; }
};

inline constexpr double kDensityFloor = 1e-32;

struct SplitCounts {
  std::size_t n_good = 0;
  std::size_t n_bad = 0;
  bool operator==(const SplitCounts&) const = default;
};

/// N_good = max(N_min, floor(q N)), N_bad = max(N_min, N - N_good).
inline SplitCounts split_counts(std::size_t n, double q, std::size_t n_min) {
  const auto good = static_cast<std::size_t>(std::floor(q * static_cast<double>(n) + 1e-9));
  SplitCounts s;
  s.n_good = std::max(n_min, good);
  s.n_bad = std::max(n_min, n > s.n_good ? n - s.n_good : std::size_t{0});
  return s;
}

/// Product-kernel density over the relaxed coordinates: Gaussian kernels on
/// integer dimensions, a Laplace-smoothed frequency table per categorical one.
/// Integer bandwidths never drop below one grid step.
class Kde {
 public:
  Kde() = default;

  Kde(const ConfigSpace& space, std::vector<std::vector<double>> points, double min_bandwidth)
      : points_(std::move(points)) {
    if (points_.empty()) throw UsageError("density needs at least one point");
    const std::size_t d = space.size();
    const auto n = static_cast<double>(points_.size());
    bandwidth_.assign(d, 0.0);
    tables_.assign(d, {});
    const double scott = std::pow(n, -1.0 / (static_cast<double>(d) + 4.0));
    for (std::size_t j = 0; j < d; ++j) {
      if (space.dims[j].kind == DimKind::categorical) {
        auto& table = tables_[j];
        table.assign(static_cast<std::size_t>(space.dims[j].cardinality()), 1.0);
        for (const auto& p : points_) table[static_cast<std::size_t>(p[j])] += 1.0;
        const double total = n + static_cast<double>(table.size());
        for (auto& t : table) t /= total;
        continue;
      }
      double mean = 0.0;
      for (const auto& p : points_) mean += p[j];
      mean /= n;
      double var = 0.0;
      for (const auto& p : points_) var += (p[j] - mean) * (p[j] - mean);
      const double sd = points_.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
      const double step = space.dims[j].high > space.dims[j].low
                              ? 1.0 / static_cast<double>(space.dims[j].high - space.dims[j].low)
                              : 1.0;
      bandwidth_[j] = std::max({min_bandwidth, step, sd * scott});
    }
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<double>& bandwidths() const { return bandwidth_; }
  const std::vector<std::vector<double>>& points() const { return points_; }

  double pdf(const std::vector<double>& u) const {
    double cat = 1.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
      if (!tables_[j].empty()) cat *= tables_[j][static_cast<std::size_t>(std::llround(u[j]))];
    }
    double sum = 0.0;
    for (const auto& p : points_) {
      double k = 1.0;
      for (std::size_t j = 0; j < u.size(); ++j) {
        if (!tables_[j].empty()) continue;
        const double z = (u[j] - p[j]) / bandwidth_[j];
        k *= std::exp(-0.5 * z * z) / (bandwidth_[j] * std::sqrt(2.0 * std::numbers::pi));
      }
      sum += k;
    }
    return cat * sum / static_cast<double>(points_.size());
  }

  /// Draw around a random member with bandwidths scaled by `factor`; integer
  /// coordinates are truncated to [0, 1] by rejection, categoricals come from the table.
  std::vector<double> draw(double factor, std::mt19937_64& rng) const {
    const auto& centre = points_[std::uniform_int_distribution<std::size_t>(0, points_.size() - 1)(rng)];
    std::vector<double> u(centre.size());
    for (std::size_t j = 0; j < u.size(); ++j) {
      if (!tables_[j].empty()) {
        std::discrete_distribution<std::size_t> pick(tables_[j].begin(), tables_[j].end());
        u[j] = static_cast<double>(pick(rng));
        continue;
      }
      std::normal_distribution<double> noise(centre[j], bandwidth_[j] * factor);
      double v = noise(rng);
      for (int tries = 0; (v < 0.0 || v > 1.0) && tries < 100; ++tries) v = noise(rng);
      u[j] = std::clamp(v, 0.0, 1.0);
    }
    return u;
  }

 private:
  std::vector<std::vector<double>> points_;
  std::vector<double> bandwidth_;
  std::vector<std::vector<double>> tables_;
};

struct KdeModel {
  Kde good;
  Kde bad;
  double y_star = 0.0;  ///< loss of the worst member of the good set
  SplitCounts counts;
};

/// Observation order matters only for ties: equal losses keep insertion order.
inline KdeModel tpe_fit(const ConfigSpace& space, const std::vector<Config>& configs, const std::vector<double>& losses,
                        const TpeParams& params) {
  if (configs.size() != losses.size()) throw UsageError("tpe_fit: configs and losses differ in length");
  const std::size_t n_min = params.min_points(space);
  const std::size_t n = configs.size();
  if (n < n_min + 2) throw UsageError("tpe_fit: need at least N_min + 2 observations");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
  const SplitCounts counts = split_counts(n, params.q, n_min);
  std::vector<std::vector<double>> good, bad;
  for (std::size_t i = 0; i < counts.n_good; ++i) good.push_back(space.to_unit(configs[order[i]]));
  for (std::size_t i = n - counts.n_bad; i < n; ++i) bad.push_back(space.to_unit(configs[order[i]]));
  KdeModel m;
  m.good = Kde(space, std::move(good), params.min_bandwidth);
  m.bad = Kde(space, std::move(bad), params.min_bandwidth);
  m.y_star = losses[order[counts.n_good - 1]];
  m.counts = counts;
  return m;
}

/// Ratio l/g with both densities floored so an empty g cannot divide by zero.
inline double density_ratio(const KdeModel& model, const std::vector<double>& u) {
  return std::max(model.good.pdf(u), kDensityFloor) / std::max(model.bad.pdf(u), kDensityFloor);
}

/// Candidates are rounded onto the integer grid before scoring, so the
/// returned configuration is exactly the one whose ratio was maximal.
inline Config tpe_sample(const ConfigSpace& space, const KdeModel& model, const TpeParams& params,
                         std::mt19937_64& rng) {
  if (params.n_samples < 1) throw UsageError("tpe_sample: need at least one candidate");
  Config best;
  double best_score = -1.0;
  for (std::size_t s = 0; s < params.n_samples; ++s) {
    const auto u = model.good.draw(params.bandwidth_factor, rng);
    Config c(space.size());
    for (std::size_t j = 0; j < c.size(); ++j) c[j] = space.from_unit(j, u[j]);
    const double score = density_ratio(model, space.to_unit(c));
    if (score > best_score) {
      best_score = score;
      best = std::move(c);
    }
  }
  return best;
}

}  // namespace tipguard::bohb
