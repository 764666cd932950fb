#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace tipguard::nn {

/// A trainable tensor viewed as flat storage, paired with its gradient.
struct ParamSlot {
  std::span<double> value;
  std::span<const double> grad;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam update. Returns false (and leaves parameters and
/// moments untouched) when any gradient entry is non-finite.
inline bool adam_step(std::span<const ParamSlot> slots, AdamState& state) {
  if (state.m.empty()) {
    state.m.reserve(slots.size());
    state.v.reserve(slots.size());
    for (const auto& s : slots) {
      state.m.emplace_back(s.value.size(), 0.0);
      state.v.emplace_back(s.value.size(), 0.0);
    }
  }
  if (state.m.size() != slots.size()) throw std::invalid_argument("adam_step: parameter list changed shape");
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (slots[k].grad.size() != slots[k].value.size() || state.m[k].size() != slots[k].value.size()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    for (double g : slots[k].grad) {
      if (!std::isfinite(g)) return false;
    }
  }

  const auto& cfg = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto value = slots[k].value;
    const auto grad = slots[k].grad;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      value[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
  return true;
}

inline double global_norm(std::span<const std::span<double>> grads) {
  double ss = 0.0;
  for (auto g : grads) {
    for (double x : g) ss += x * x;
  }
  return std::sqrt(ss);
}

/// Rescales the gradients in place so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_global_norm(std::span<const std::span<double>> grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (auto g : grads) {
      for (double& x : g) x *= s;
    }
  }
  return norm;
}

}  // namespace tipguard::nn
