#pragma once

#include <Eigen/Core>

#include <stdexcept>

#include "tipguard/nn/lstm.hpp"

namespace tipguard::nn {

/// Time-distributed affine head: y_t = W h_t + b at every step.
struct DenseParams {
  Eigen::MatrixXd W;  // O x H
  Eigen::VectorXd b;  // O

  static DenseParams zeros(Eigen::Index input_size, Eigen::Index output_size) {
    return {Eigen::MatrixXd::Zero(output_size, input_size), Eigen::VectorXd::Zero(output_size)};
  }
  Eigen::Index parameter_count() const { return W.size() + b.size(); }
};

inline Sequence dense_forward(const Sequence& h, const DenseParams& p) {
  if (p.b.size() != p.W.rows()) throw std::invalid_argument("dense: bias/weight shape mismatch");
  Sequence y(h.size());
  for (std::size_t t = 0; t < h.size(); ++t) {
    if (h[t].rows() != p.W.cols()) throw std::invalid_argument("dense: input feature mismatch");
    y[t].noalias() = p.W * h[t];
    y[t].colwise() += p.b;
  }
  return y;
}

struct DenseGrads {
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;
  Sequence dh;
};

inline DenseGrads dense_backward(const Sequence& dy, const Sequence& h, const DenseParams& p) {
  if (dy.size() != h.size()) throw std::invalid_argument("dense_backward: length mismatch");
  DenseGrads g{Eigen::MatrixXd::Zero(p.W.rows(), p.W.cols()), Eigen::VectorXd::Zero(p.b.size()), Sequence(h.size())};
  for (std::size_t t = 0; t < h.size(); ++t) {
    g.dW.noalias() += dy[t] * h[t].transpose();
    g.db += dy[t].rowwise().sum();
    g.dh[t].noalias() = p.W.transpose() * dy[t];
  }
  return g;
}

}  // namespace tipguard::nn
