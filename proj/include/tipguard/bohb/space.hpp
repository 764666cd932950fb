#pragma once

// Search spaces of integer and categorical dimensions. Configurations are
// vectors of integers (the value for integer dimensions, the choice index for
// categorical ones). The model side works on the unit-cube relaxation.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tipguard/common.hpp"

namespace tipguard::bohb {

enum class DimKind { integer, categorical };

struct Dimension {
  std::string name;
  DimKind kind = DimKind::integer;
  long long low = 0;
  long long high = 0;
  std::vector<std::string> choices;

  static Dimension integer(std::string name, long long low, long long high) {
    return {std::move(name), DimKind::integer, low, high, {}};
  }
  static Dimension categorical(std::string name, std::vector<std::string> choices) {
    return {std::move(name), DimKind::categorical, 0, static_cast<long long>(choices.size()) - 1, std::move(choices)};
  }

  /// Number of distinct values.
  long long cardinality() const { return high - low + 1; }
};

using Config = std::vector<long long>;

struct ConfigSpace {
  std::vector<Dimension> dims;

  std::size_t size() const { return dims.size(); }

  void validate() const {
    if (dims.empty()) throw UsageError("config space needs at least one dimension");
    for (const auto& d : dims) {
      if (d.name.empty()) throw UsageError("config space dimension without a name");
      if (d.kind == DimKind::integer && d.low > d.high) {
        throw UsageError("dimension '" + d.name + "': low > high");
      }
      if (d.kind == DimKind::categorical && d.choices.empty()) {
        throw UsageError("dimension '" + d.name + "': no choices");
      }
    }
  }

  bool contains(const Config& c) const {
    if (c.size() != dims.size()) return false;
    for (std::size_t j = 0; j < dims.size(); ++j) {
      if (c[j] < dims[j].low || c[j] > dims[j].high) return false;
    }
    return true;
  }

  Config sample_uniform(std::mt19937_64& rng) const {
    Config c(dims.size());
    for (std::size_t j = 0; j < dims.size(); ++j) {
      c[j] = std::uniform_int_distribution<long long>(dims[j].low, dims[j].high)(rng);
    }
    return c;
  }

  /// Integer value -> [0, 1]; categorical dimensions keep the choice index.
  double to_unit(std::size_t j, long long v) const {
    const auto& d = dims[j];
    if (d.kind == DimKind::categorical) return static_cast<double>(v);
    if (d.high == d.low) return 0.5;
    return static_cast<double>(v - d.low) / static_cast<double>(d.high - d.low);
  }

  /// Rounds a relaxed coordinate to the nearest valid integer.
  long long from_unit(std::size_t j, double u) const {
    const auto& d = dims[j];
    if (d.kind == DimKind::categorical) return std::clamp(std::llround(u), d.low, d.high);
    const double x = static_cast<double>(d.low) + std::clamp(u, 0.0, 1.0) * static_cast<double>(d.high - d.low);
    return std::clamp(std::llround(x), d.low, d.high);
  }

  std::vector<double> to_unit(const Config& c) const {
    std::vector<double> u(c.size());
    for (std::size_t j = 0; j < c.size(); ++j) u[j] = to_unit(j, c[j]);
    return u;
  }

  nlohmann::json config_json(const Config& c) const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t k = 0; k < dims.size(); ++k) {
      if (dims[k].kind == DimKind::categorical) {
        j[dims[k].name] = dims[k].choices.at(static_cast<std::size_t>(c[k]));
      } else {
        j[dims[k].name] = c[k];
      }
    }
    return j;
  }

  Config config_from_json(const nlohmann::json& j) const {
    Config c(dims.size());
    for (std::size_t k = 0; k < dims.size(); ++k) {
      const auto& v = j.at(dims[k].name);
      if (dims[k].kind == DimKind::categorical) {
        const auto it = std::find(dims[k].choices.begin(), dims[k].choices.end(), v.get<std::string>());
        if (it == dims[k].choices.end()) throw DataError("unknown choice for '" + dims[k].name + "'");
        c[k] = it - dims[k].choices.begin();
      } else {
        c[k] = v.get<long long>();
      }
    }
    if (!contains(c)) throw DataError("configuration outside the search space");
    return c;
  }
};

/// Document form: {"dimensions": [{"name", "kind": "integer", "low", "high"} |
/// {"name", "kind": "categorical", "choices": [...]}]}
inline void to_json(nlohmann::json& j, const ConfigSpace& s) {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : s.dims) {
    if (d.kind == DimKind::integer) {
      dims.push_back({{"name", d.name}, {"kind", "integer"}, {"low", d.low}, {"high", d.high}});
    } else {
      dims.push_back({{"name", d.name}, {"kind", "categorical"}, {"choices", d.choices}});
    }
  }
  j = {{"dimensions", dims}};
}

inline void from_json(const nlohmann::json& j, ConfigSpace& s) {
  s.dims.clear();
  for (const auto& d : j.at("dimensions")) {
    const auto kind = d.at("kind").get<std::string>();
    if (kind == "integer") {
      s.dims.push_back(Dimension::integer(d.at("name"), d.at("low"), d.at("high")));
    } else if (kind == "categorical") {
      s.dims.push_back(Dimension::categorical(d.at("name"), d.at("choices").get<std::vector<std::string>>()));
    } else {
      throw UsageError("unknown dimension kind '" + kind + "'");
    }
  }
  s.validate();
}

/// One node-count dimension per encoder layer, 4..64 units each.
inline ConfigSpace node_space(std::size_t depth) {
  ConfigSpace s;
  for (std::size_t l = 0; l < depth; ++l) s.dims.push_back(Dimension::integer("nodes_" + std::to_string(l), 4, 64));
  return s;
}

}  // namespace tipguard::bohb
