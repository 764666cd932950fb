#pragma once

#include <cmath>
#include <random>

#include "tipguard/bohb.hpp"

namespace tipguard::testing {

inline constexpr long long kPlantedX = 19;
inline constexpr long long kPlantedY = 45;
inline constexpr double kPlantedMaxBudget = 27.0;

inline bohb::ConfigSpace planted_space() {
  bohb::ConfigSpace s;
  s.dims = {bohb::Dimension::integer("x", 4, 64), bohb::Dimension::integer("y", 4, 64)};
  return s;
}

inline double planted_true_loss(const bohb::Config& c) {
  const double dx = static_cast<double>(c[0] - kPlantedX);
  const double dy = static_cast<double>(c[1] - kPlantedY);
  return (dx * dx + dy * dy) / 1000.0;
}

/// Exact at the maximum budget; cheaper budgets add a smooth bias and seeded
/// noise, both shrinking linearly with the budget.
inline double planted_objective(const bohb::Config& c, double budget, std::uint64_t seed) {
  const double fidelity_gap = 1.0 - std::min(budget, kPlantedMaxBudget) / kPlantedMaxBudget;
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(std::llround(budget * 1000.0))));
  const double noise = std::normal_distribution<double>(0.0, 0.01)(rng);
  const double bias = 0.02 * (std::sin(static_cast<double>(c[0]) / 3.0) + std::cos(static_cast<double>(c[1]) / 4.0));
  return planted_true_loss(c) + fidelity_gap * (bias + noise);
}

inline bohb::BohbOptions planted_options(std::uint64_t seed) {
  bohb::BohbOptions o;
  o.eta = 3.0;
  o.min_budget = 1.0;
  o.max_budget = kPlantedMaxBudget;
  o.brackets = 16;
  o.seed = seed;
  return o;
}

}  // namespace tipguard::testing
