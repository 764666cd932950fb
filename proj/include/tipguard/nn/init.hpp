#pragma once

#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <random>

namespace tipguard::nn {

/// Glorot/Xavier uniform with fan_in = cols, fan_out = rows.
inline Eigen::MatrixXd glorot_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  }
  return m;
}

/// Matrix with orthonormal columns (rows >= cols) or rows (rows < cols), from
/// the QR factorization of a Gaussian draw with the sign of diag(R) folded in.
inline Eigen::MatrixXd orthogonal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const bool tall = rows >= cols;
  const Eigen::Index r = tall ? rows : cols;
  const Eigen::Index c = tall ? cols : rows;
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd a(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) a(i, j) = n(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  const Eigen::MatrixXd rr = qr.matrixQR().topLeftCorner(c, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    if (rr(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return tall ? q : Eigen::MatrixXd(q.transpose());
}

}  // namespace tipguard::nn
