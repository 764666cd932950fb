#pragma once

#include <Eigen/Core>

#include <random>
#include <stdexcept>

namespace tipguard::nn {

/// Inverted-dropout mask: entries are 0 or 1 / (1 - rate).
inline Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  const double keep_scale = 1.0 / (1.0 - rate);
  Eigen::MatrixXd mask(rows, cols);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = u(rng) < rate ? 0.0 : keep_scale;
  }
  return mask;
}

/// Identity in inference mode or at rate 0; otherwise zeroes each unit with
/// probability `rate` and rescales survivors. The applied mask is written to
/// `mask_out` when provided.
inline Eigen::MatrixXd dropout_apply(const Eigen::MatrixXd& activations, double rate, std::mt19937_64& rng,
                                     bool training, Eigen::MatrixXd* mask_out = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) {
    if (mask_out) *mask_out = Eigen::MatrixXd::Ones(activations.rows(), activations.cols());
    return activations;
  }
  Eigen::MatrixXd mask = dropout_mask(activations.rows(), activations.cols(), rate, rng);
  Eigen::MatrixXd out = activations.cwiseProduct(mask);
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

inline Eigen::MatrixXd dropout_apply(const Eigen::MatrixXd& activations, double rate, std::uint64_t seed,
                                     bool training) {
  std::mt19937_64 rng(seed);
  return dropout_apply(activations, rate, rng, training);
}

}  // namespace tipguard::nn
