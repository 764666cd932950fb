#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

#include "tipguard/common.hpp"

namespace tipguard::nn {

/// A sequence of L batch matrices, each (features x batch).
using Sequence = std::vector<Eigen::MatrixXd>;

/// One LSTM layer. Gate rows are stacked in the order input, forget, cell, output.
struct LstmParams {
  Eigen::MatrixXd W;  // 4H x D
  Eigen::MatrixXd U;  // 4H x H
  Eigen::VectorXd b;  // 4H

  static LstmParams zeros(Eigen::Index input_size, Eigen::Index hidden_size) {
    return {Eigen::MatrixXd::Zero(4 * hidden_size, input_size),
            Eigen::MatrixXd::Zero(4 * hidden_size, hidden_size),
            Eigen::VectorXd::Zero(4 * hidden_size)};
  }

  Eigen::Index input_size() const { return W.cols(); }
  Eigen::Index hidden_size() const { return U.cols(); }
  Eigen::Index parameter_count() const { return W.size() + U.size() + b.size(); }

  void check() const {
    const auto h = hidden_size();
    if (W.rows() != 4 * h || U.rows() != 4 * h || b.size() != 4 * h) {
      throw std::invalid_argument("LSTM parameter shapes are inconsistent");
    }
  }
};

struct LstmState {
  Eigen::MatrixXd h;  // H x B
  Eigen::MatrixXd c;  // H x B

  static LstmState zeros(Eigen::Index hidden, Eigen::Index batch) {
    return {Eigen::MatrixXd::Zero(hidden, batch), Eigen::MatrixXd::Zero(hidden, batch)};
  }
};

/// Everything the backward pass needs from a forward call.
struct LstmCache {
  Sequence x;
  Sequence gates;   // post-activation (i, f, g, o), 4H x B
  Sequence c;       // cell state after each step
  Sequence tanh_c;
  Sequence h;       // hidden state after each step
  LstmState initial;
};

struct LstmForward {
  Sequence hidden;
  LstmState final_state;
  LstmCache cache;
};

namespace detail {
inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& a) {
  return (1.0 + (-a.array()).exp()).inverse().matrix();
}
}  // namespace detail

inline LstmForward lstm_forward(const Sequence& x, const LstmParams& p, const LstmState& initial) {
  p.check();
  const Eigen::Index H = p.hidden_size();
  if (x.empty()) throw std::invalid_argument("lstm_forward: empty sequence");
  const Eigen::Index B = x.front().cols();
  if (initial.h.rows() != H || initial.c.rows() != H || initial.h.cols() != B || initial.c.cols() != B) {
    throw std::invalid_argument("lstm_forward: initial state shape mismatch");
  }

  LstmForward out;
  auto& cache = out.cache;
  cache.initial = initial;
  cache.x = x;
  cache.gates.reserve(x.size());
  cache.c.reserve(x.size());
  cache.tanh_c.reserve(x.size());
  cache.h.reserve(x.size());

  Eigen::MatrixXd a(4 * H, B);
  const Eigen::MatrixXd* h_prev = &initial.h;
  const Eigen::MatrixXd* c_prev = &initial.c;
  for (const auto& xt : x) {
    if (xt.rows() != p.input_size() || xt.cols() != B) {
      throw std::invalid_argument("lstm_forward: input has " + std::to_string(xt.rows()) + " features, layer expects " +
                                  std::to_string(p.input_size()));
    }
    if (!xt.allFinite()) throw NumericError("lstm_forward: non-finite input");
    a.noalias() = p.W * xt;
    a.noalias() += p.U * *h_prev;
    a.colwise() += p.b;

    Eigen::MatrixXd gates(4 * H, B);
    gates.topRows(2 * H) = detail::sigmoid(a.topRows(2 * H));
    gates.middleRows(2 * H, H) = a.middleRows(2 * H, H).array().tanh().matrix();
    gates.bottomRows(H) = detail::sigmoid(a.bottomRows(H));

    Eigen::MatrixXd c = gates.middleRows(H, H).cwiseProduct(*c_prev) +
                        gates.topRows(H).cwiseProduct(gates.middleRows(2 * H, H));
    Eigen::MatrixXd tc = c.array().tanh().matrix();
    Eigen::MatrixXd h = gates.bottomRows(H).cwiseProduct(tc);

    cache.gates.push_back(std::move(gates));
    cache.c.push_back(std::move(c));
    cache.tanh_c.push_back(std::move(tc));
    cache.h.push_back(std::move(h));
    h_prev = &cache.h.back();
    c_prev = &cache.c.back();
  }
  out.hidden = cache.h;
  out.final_state = {cache.h.back(), cache.c.back()};
  return out;
}

struct LstmGrads {
  Eigen::MatrixXd dW;
  Eigen::MatrixXd dU;
  Eigen::VectorXd db;
  Sequence dx;
  LstmState d_initial;
};

/// Backpropagation through time.
///
/// `d_hidden` is the upstream gradient for each emitted hidden state; pass an
/// empty sequence when only the final state receives gradient.
inline LstmGrads lstm_backward(const Sequence& d_hidden, const Eigen::MatrixXd& dh_final,
                               const Eigen::MatrixXd& dc_final, const LstmCache& cache, const LstmParams& p) {
  const std::size_t L = cache.h.size();
  if (L == 0) throw std::invalid_argument("lstm_backward: empty cache");
  if (!d_hidden.empty() && d_hidden.size() != L) throw std::invalid_argument("lstm_backward: gradient length mismatch");
  const Eigen::Index H = p.hidden_size();
  const Eigen::Index B = cache.h.front().cols();
  if (p.W.rows() != cache.gates.front().rows()) throw std::invalid_argument("lstm_backward: cache/params mismatch");

  LstmGrads g;
  g.dW = Eigen::MatrixXd::Zero(p.W.rows(), p.W.cols());
  g.dU = Eigen::MatrixXd::Zero(p.U.rows(), p.U.cols());
  g.db = Eigen::VectorXd::Zero(p.b.size());
  g.dx.resize(L);

  Eigen::MatrixXd dh_next = dh_final.size() ? dh_final : Eigen::MatrixXd::Zero(H, B);
  Eigen::MatrixXd dc_next = dc_final.size() ? dc_final : Eigen::MatrixXd::Zero(H, B);
  Eigen::MatrixXd da(4 * H, B);

  for (std::size_t step = L; step-- > 0;) {
    const auto& gates = cache.gates[step];
    const auto i = gates.topRows(H).array();
    const auto f = gates.middleRows(H, H).array();
    const auto gg = gates.middleRows(2 * H, H).array();
    const auto o = gates.bottomRows(H).array();
    const auto tc = cache.tanh_c[step].array();
    const Eigen::MatrixXd& c_prev = step == 0 ? cache.initial.c : cache.c[step - 1];
    const Eigen::MatrixXd& h_prev = step == 0 ? cache.initial.h : cache.h[step - 1];

    Eigen::ArrayXXd dh = dh_next.array();
    if (!d_hidden.empty()) dh += d_hidden[step].array();

    const Eigen::ArrayXXd dc = dc_next.array() + dh * o * (1.0 - tc * tc);
    da.topRows(H) = (dc * gg * i * (1.0 - i)).matrix();
    da.middleRows(H, H) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
    da.middleRows(2 * H, H) = (dc * i * (1.0 - gg * gg)).matrix();
    da.bottomRows(H) = (dh * tc * o * (1.0 - o)).matrix();

    g.dW.noalias() += da * cache.x[step].transpose();
    g.dU.noalias() += da * h_prev.transpose();
    g.db += da.rowwise().sum();
    g.dx[step].noalias() = p.W.transpose() * da;
    dh_next.noalias() = p.U.transpose() * da;
    dc_next = (dc * f).matrix();
  }
  g.d_initial = {std::move(dh_next), std::move(dc_next)};
  return g;
}

}  // namespace tipguard::nn
