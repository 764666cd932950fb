#pragma once

#include <Eigen/Core>

#include <stdexcept>

#include "tipguard/nn/lstm.hpp"

namespace tipguard::nn {

struct LossGrad {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // d loss / d prediction
};

/// (1/n) sum (y - yhat)^2 and its gradient (2/n)(yhat - y).
template <typename P, typename T>
LossGrad mse_loss(const Eigen::MatrixBase<P>& prediction, const Eigen::MatrixBase<T>& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw std::invalid_argument("mse_loss: shape mismatch");
  }
  const auto n = static_cast<double>(prediction.size());
  Eigen::MatrixXd diff = prediction - target;
  LossGrad out;
  out.loss = diff.squaredNorm() / n;
  out.grad = (2.0 / n) * diff;
  return out;
}

template <typename P, typename T>
double mae_loss(const Eigen::MatrixBase<P>& prediction, const Eigen::MatrixBase<T>& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw std::invalid_argument("mae_loss: shape mismatch");
  }
  return (prediction - target).cwiseAbs().sum() / static_cast<double>(prediction.size());
}

/// MSE pooled over every element of a batched sequence; gradient per step.
struct SequenceLoss {
  double loss = 0.0;
  Sequence grad;
};

inline SequenceLoss mse_loss(const Sequence& prediction, const Sequence& target) {
  if (prediction.size() != target.size() || prediction.empty()) {
    throw std::invalid_argument("mse_loss: sequence length mismatch");
  }
  double n = 0.0;
  for (const auto& p : prediction) n += static_cast<double>(p.size());
  SequenceLoss out;
  out.grad.resize(prediction.size());
  for (std::size_t t = 0; t < prediction.size(); ++t) {
    if (prediction[t].rows() != target[t].rows() || prediction[t].cols() != target[t].cols()) {
      throw std::invalid_argument("mse_loss: shape mismatch");
    }
    Eigen::MatrixXd diff = prediction[t] - target[t];
    out.loss += diff.squaredNorm();
    out.grad[t] = (2.0 / n) * diff;
  }
  out.loss /= n;
  return out;
}

}  // namespace tipguard::nn
