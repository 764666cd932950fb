#pragma once

// Hyperband brackets whose new configurations come from TPE (with probability
// 1 - rho) or uniformly at random.

#include <algorithm>
#include <chrono>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tipguard/bohb/schedule.hpp"
#include "tipguard/bohb/space.hpp"
#include "tipguard/bohb/tpe.hpp"
#include "tipguard/common.hpp"

namespace tipguard::bohb {

/// Loss for a configuration trained with `budget`; `seed` is the per-config seed.
using Objective = std::function<double(const Config& config, double budget, std::uint64_t seed)>;

struct BohbOptions {
  double eta = 3.0;
  double min_budget = 1.0;
  double max_budget = 27.0;
  std::size_t brackets = 4;  ///< Hyperband iterations, cycling s_max .. 0
  double rho = 1.0 / 3.0;
  TpeParams tpe;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (!(rho >= 0.0 && rho <= 1.0)) throw UsageError("rho must lie in [0, 1]");
    if (!(tpe.q > 0.0 && tpe.q < 1.0)) throw UsageError("q must lie in (0, 1)");
    if (tpe.n_samples < 1) throw UsageError("N_s must be >= 1");
    if (!(tpe.bandwidth_factor > 0.0)) throw UsageError("bandwidth factor must be > 0");
    if (brackets < 1) throw UsageError("need at least one bracket");
    if (workers < 1) throw UsageError("need at least one worker");
    hyperband_s_max(eta, min_budget, max_budget);
  }

  static BohbOptions from_preset(const ShPreset& p) {
    BohbOptions o;
    o.eta = p.eta;
    o.min_budget = p.min_budget;
    o.max_budget = p.max_budget;
    return o;
  }
};

struct Observation {
  std::size_t config_id = 0;
  Config config;
  double loss = 0.0;  ///< +inf when the objective failed
  double budget = 0.0;
  std::size_t bracket = 0;
  std::size_t rung = 0;
  double wall_seconds = 0.0;
  bool model_based = false;
  std::string error;
};

struct BohbResult {
  Config incumbent;
  double incumbent_loss = std::numeric_limits<double>::infinity();
  std::size_t incumbent_id = 0;
  std::vector<Observation> observations;
  std::vector<Config> proposals;  ///< every new configuration in proposal order
  std::size_t kde_consultations = 0;
  std::size_t failures = 0;

  std::size_t unique_configs() const { return std::set<Config>(proposals.begin(), proposals.end()).size(); }

  std::size_t full_budget_evaluations(double max_budget) const {
    return static_cast<std::size_t>(
        std::count_if(observations.begin(), observations.end(), [&](const Observation& o) { return o.budget >= max_budget; }));
  }

  double total_budget() const {
    double t = 0.0;
    for (const auto& o : observations) t += o.budget;
    return t;
  }
};

using ObservationSink = std::function<void(const Observation&)>;

namespace detail {

inline Observation evaluate(const Objective& f, std::size_t id, const Config& c, double budget, std::uint64_t seed) {
  Observation o;
  o.config_id = id;
  o.config = c;
  o.budget = budget;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    o.loss = f(c, budget, mix_seed(seed, id));
    if (std::isnan(o.loss)) {
      o.loss = std::numeric_limits<double>::infinity();
      o.error = "objective returned NaN";
    }
  } catch (const std::exception& e) {
    o.loss = std::numeric_limits<double>::infinity();
    o.error = e.what();
  }
  o.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return o;
}

/// Evaluates all configurations of one rung; results are placed by position,
/// so the outcome does not depend on which worker finishes first.
inline std::vector<Observation> evaluate_rung(const Objective& f, const std::vector<std::size_t>& ids,
                                              const std::vector<Config>& configs, double budget, std::uint64_t seed,
                                              std::size_t workers) {
  std::vector<Observation> out(ids.size());
  if (workers <= 1 || ids.size() <= 1) {
    for (std::size_t k = 0; k < ids.size(); ++k) out[k] = evaluate(f, ids[k], configs[k], budget, seed);
    return out;
  }
  std::size_t next = 0;
  while (next < ids.size()) {
    std::vector<std::future<Observation>> batch;
    const std::size_t first = next;
    for (; next < ids.size() && next - first < workers; ++next) {
      batch.push_back(std::async(std::launch::async, evaluate, std::cref(f), ids[next], std::cref(configs[next]), budget, seed));
    }
    for (std::size_t k = 0; k < batch.size(); ++k) out[first + k] = batch[k].get();
  }
  return out;
}

/// Largest budget holding at least `needed` observations.
inline std::optional<double> model_budget(const std::map<double, std::vector<std::size_t>>& by_budget, std::size_t needed) {
  for (auto it = by_budget.rbegin(); it != by_budget.rend(); ++it) {
    if (it->second.size() >= needed) return it->first;
  }
  return std::nullopt;
}

}  // namespace detail

inline BohbResult bohb_run(const ConfigSpace& space, const Objective& objective, const BohbOptions& opt,
                           const ObservationSink& sink = {}) {
  space.validate();
  opt.validate();
  BohbResult result;
  std::mt19937_64 rng(mix_seed(opt.seed, 0));
  std::map<double, std::vector<std::size_t>> by_budget;  // budget -> observation indices
  const std::size_t needed = opt.tpe.min_points(space) + 2;
  std::size_t next_id = 0;

  for (std::size_t it = 0; it < opt.brackets; ++it) {
    const Bracket bracket = hyperband_bracket(it, opt.eta, opt.min_budget, opt.max_budget);
    const auto& rungs = bracket.schedule.rungs;

    std::optional<KdeModel> model;
    if (opt.rho < 1.0) {
      if (const auto b = detail::model_budget(by_budget, needed)) {
        std::vector<Config> xs;
        std::vector<double> ys;
        for (std::size_t k : by_budget.at(*b)) {
          xs.push_back(result.observations[k].config);
          ys.push_back(result.observations[k].loss);
        }
        model = tpe_fit(space, xs, ys, opt.tpe);
      }
    }

    std::vector<std::size_t> ids;
    std::vector<Config> configs;
    std::vector<bool> from_model;
    for (std::size_t k = 0; k < rungs.front().n_configs; ++k) {
      bool use_model = false;
      if (opt.rho < 1.0) use_model = std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= opt.rho && model.has_value();
      Config c;
      if (use_model) {
        ++result.kde_consultations;
        c = tpe_sample(space, *model, opt.tpe, rng);
      } else {
        c = space.sample_uniform(rng);
      }
      ids.push_back(next_id++);
      configs.push_back(c);
      from_model.push_back(use_model);
      result.proposals.push_back(std::move(c));
    }
    std::map<std::size_t, bool> origin;
    for (std::size_t k = 0; k < ids.size(); ++k) origin[ids[k]] = from_model[k];

    for (std::size_t r = 0; r < rungs.size(); ++r) {
      auto obs = detail::evaluate_rung(objective, ids, configs, rungs[r].budget, opt.seed, opt.workers);
      for (auto& o : obs) {
        o.bracket = it;
        o.rung = r;
        o.model_based = origin[o.config_id];
        if (!std::isfinite(o.loss)) ++result.failures;
        by_budget[o.budget].push_back(result.observations.size());
        if (sink) sink(o);
        result.observations.push_back(o);
      }
      if (r + 1 == rungs.size()) break;
      std::vector<std::size_t> order(obs.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return obs[a].loss < obs[b].loss; });
      order.resize(std::min(order.size(), rungs[r + 1].n_configs));
      std::vector<std::size_t> next_ids;
      std::vector<Config> next_configs;
      for (std::size_t k : order) {
        next_ids.push_back(ids[k]);
        next_configs.push_back(configs[k]);
      }
      ids = std::move(next_ids);
      configs = std::move(next_configs);
    }
  }

  bool found = false;
  for (const auto& o : result.observations) {
    if (o.budget < opt.max_budget) continue;
    if (!found || o.loss < result.incumbent_loss) {
      found = true;
      result.incumbent = o.config;
      result.incumbent_loss = o.loss;
      result.incumbent_id = o.config_id;
    }
  }
  return result;
}

/// Random search baseline: uniform configurations at `budget` until the
/// cumulative budget would exceed `total_budget`.
inline BohbResult random_search(const ConfigSpace& space, const Objective& objective, double budget,
                                double total_budget, std::uint64_t seed) {
  space.validate();
  BohbResult result;
  std::mt19937_64 rng(mix_seed(seed, 0));
  double spent = 0.0;
  for (std::size_t id = 0; spent + budget <= total_budget * (1.0 + 1e-12); ++id) {
    Config c = space.sample_uniform(rng);
    result.proposals.push_back(c);
    auto o = detail::evaluate(objective, id, c, budget, seed);
    if (!std::isfinite(o.loss)) ++result.failures;
    if (o.loss < result.incumbent_loss || result.observations.empty()) {
      result.incumbent = c;
      result.incumbent_loss = o.loss;
      result.incumbent_id = id;
    }
    result.observations.push_back(std::move(o));
    spent += budget;
  }
  return result;
}

inline nlohmann::json audit_record(const ConfigSpace& space, const Observation& o) {
  nlohmann::json j;
  j["config_id"] = o.config_id;
  j["config"] = space.config_json(o.config);
  j["loss"] = std::isfinite(o.loss) ? nlohmann::json(o.loss) : nlohmann::json(nullptr);
  j["budget"] = o.budget;
  j["wall_time"] = o.wall_seconds;
  j["bracket"] = o.bracket;
  j["rung"] = o.rung;
  j["model_based"] = o.model_based;
  if (!o.error.empty()) j["error"] = o.error;
  return j;
}

inline void write_audit_line(std::ostream& out, const ConfigSpace& space, const Observation& o) {
  out << audit_record(space, o).dump() << '\n';
}

inline nlohmann::json to_json(const ConfigSpace& space, const BohbResult& r, double max_budget) {
  nlohmann::json j;
  j["incumbent"] = space.config_json(r.incumbent);
  j["incumbent_loss"] = std::isfinite(r.incumbent_loss) ? nlohmann::json(r.incumbent_loss) : nlohmann::json(nullptr);
  j["incumbent_id"] = r.incumbent_id;
  j["evaluations"] = r.observations.size();
  j["unique_configs"] = r.unique_configs();
  j["full_budget_evaluations"] = r.full_budget_evaluations(max_budget);
  j["kde_consultations"] = r.kde_consultations;
  j["failures"] = r.failures;
  j["total_budget"] = r.total_budget();
  return j;
}

}  // namespace tipguard::bohb
