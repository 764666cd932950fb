#pragma once

// Successive Halving ladders and Hyperband brackets.

#include <cmath>
#include <vector>

#include "tipguard/common.hpp"

namespace tipguard::bohb {

struct Rung {
  std::size_t n_configs = 0;
  double budget = 0.0;
};

struct ShSchedule {
  double eta = 3.0;
  double min_budget = 1.0;
  double max_budget = 1.0;
  std::vector<Rung> rungs;

  double total_budget() const {
    double t = 0.0;
    for (const auto& r : rungs) t += static_cast<double>(r.n_configs) * r.budget;
    return t;
  }
};

namespace detail {

/// floor(log_eta(x)) with a guard against representation error at exact powers.
inline std::size_t floor_log(double x, double eta) {
  if (x < 1.0) return 0;
  return static_cast<std::size_t>(std::floor(std::log(x) / std::log(eta) + 1e-9));
}

}  // namespace detail

/// Ladder for n configurations: survivors ceil(n / eta^i), budgets growing by
/// eta and ending at max_budget. The rung count is limited both by how many
/// times n can be divided by eta and by how many eta-steps fit between the budgets.
inline ShSchedule sh_schedule(std::size_t n, double eta, double min_budget, double max_budget) {
  if (!(eta > 1.0)) throw UsageError("eta must be > 1");
  if (!(min_budget > 0.0) || !(max_budget >= min_budget)) throw UsageError("budgets must satisfy 0 < min <= max");
  if (n < 1) throw UsageError("successive halving needs at least one configuration");
  ShSchedule s;
  s.eta = eta;
  s.min_budget = min_budget;
  s.max_budget = max_budget;
  const std::size_t rungs =
      std::min(detail::floor_log(static_cast<double>(n), eta), detail::floor_log(max_budget / min_budget, eta)) + 1;
  for (std::size_t i = 0; i < rungs; ++i) {
    const double shrink = std::pow(eta, static_cast<double>(i));
    const auto survivors = static_cast<std::size_t>(std::ceil(static_cast<double>(n) / shrink - 1e-9));
    const double budget = max_budget * std::pow(eta, -static_cast<double>(rungs - 1 - i));
    s.rungs.push_back({survivors, budget});
  }
  return s;
}

struct Bracket {
  std::size_t s = 0;
  ShSchedule schedule;
};

/// Largest bracket index: floor(log_eta(max / min)).
inline std::size_t hyperband_s_max(double eta, double min_budget, double max_budget) {
  if (!(eta > 1.0)) throw UsageError("eta must be > 1");
  if (!(min_budget > 0.0) || !(max_budget >= min_budget)) throw UsageError("budgets must satisfy 0 < min <= max");
  return detail::floor_log(max_budget / min_budget, eta);
}

/// Bracket run at Hyperband iteration `iteration` (0-based); cycles s_max .. 0.
inline Bracket hyperband_bracket(std::size_t iteration, double eta, double min_budget, double max_budget) {
  const std::size_t s_max = hyperband_s_max(eta, min_budget, max_budget);
  const std::size_t s = s_max - iteration % (s_max + 1);
  const double eta_s = std::pow(eta, static_cast<double>(s));
  const auto n = static_cast<std::size_t>(
      std::ceil(static_cast<double>(s_max + 1) / static_cast<double>(s + 1) * eta_s - 1e-9));
  return {s, sh_schedule(n, eta, max_budget / eta_s, max_budget)};
}

/// Full-protocol preset: 20 -> 100 epochs in three rungs, eta = sqrt(5).
struct ShPreset {
  double eta;
  double min_budget;
  double max_budget;
};

inline constexpr ShPreset kProtocolPreset{2.23606797749979, 20.0, 100.0};
inline constexpr ShPreset kDefaultPreset{3.0, 1.0, 27.0};

}  // namespace tipguard::bohb
