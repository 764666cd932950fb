#pragma once

// Sequence-to-sequence LSTM autoencoder: an encoder stack compresses the input
// window into the last layer's final hidden state, that latent vector is
// repeated once per output step into a mirrored decoder stack, and a
// time-distributed dense head maps every decoder step back to the channels.

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tipguard/common.hpp"
#include "tipguard/nn/adam.hpp"
#include "tipguard/nn/dense.hpp"
#include "tipguard/nn/dropout.hpp"
#include "tipguard/nn/init.hpp"
#include "tipguard/nn/loss.hpp"
#include "tipguard/nn/lstm.hpp"
#include "tipguard/timeseries.hpp"

namespace tipguard::ae {

using nn::Sequence;

struct AutoencoderSpec {
  std::size_t input_len = 25;
  std::size_t output_len = 5;
  std::vector<std::size_t> encoder_layer_sizes{19};
  double dropout_rate = 0.0;
  std::size_t channels = kChannels;

  static constexpr std::size_t kMinNodes = 4;
  static constexpr std::size_t kMaxNodes = 64;
  static constexpr std::size_t kMaxDepth = 3;

  /// Shape sanity only; used by tiny test networks.
  void validate_structure() const {
    if (input_len < 1 || output_len < 1) throw UsageError("input_len and output_len must be positive");
    if (encoder_layer_sizes.empty()) throw UsageError("at least one encoder layer is required");
    for (auto h : encoder_layer_sizes) {
      if (h < 1) throw UsageError("hidden sizes must be positive");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("dropout_rate must lie in [0, 1)");
    if (channels < 1) throw UsageError("channels must be positive");
  }

  /// Full contract: depth 1-3, every layer 4-64 units, six channels.
  void validate() const {
    validate_structure();
    if (encoder_layer_sizes.size() > kMaxDepth) throw UsageError("encoder depth must be 1, 2 or 3");
    for (auto h : encoder_layer_sizes) {
      if (h < kMinNodes || h > kMaxNodes) {
        throw UsageError("hidden size " + std::to_string(h) + " outside [4, 64]");
      }
    }
    if (channels != kChannels) throw UsageError("autoencoder operates on exactly 6 channels");
  }

  std::vector<std::size_t> decoder_layer_sizes() const {
    return {encoder_layer_sizes.rbegin(), encoder_layer_sizes.rend()};
  }

  std::size_t parameter_count() const {
    auto lstm = [](std::size_t d, std::size_t h) { return 4 * h * (d + h + 1); };
    std::size_t n = 0;
    std::size_t d = channels;
    for (auto h : encoder_layer_sizes) {
      n += lstm(d, h);
      d = h;
    }
    for (auto h : decoder_layer_sizes()) {
      n += lstm(d, h);
      d = h;
    }
    return n + d * channels + channels;
  }

  bool operator==(const AutoencoderSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const AutoencoderSpec& s) {
  j = {{"input_len", s.input_len},
       {"output_len", s.output_len},
       {"encoder_layer_sizes", s.encoder_layer_sizes},
       {"dropout_rate", s.dropout_rate},
       {"channels", s.channels}};
}
inline void from_json(const nlohmann::json& j, AutoencoderSpec& s) {
  s.input_len = j.at("input_len").get<std::size_t>();
  s.output_len = j.at("output_len").get<std::size_t>();
  s.encoder_layer_sizes = j.at("encoder_layer_sizes").get<std::vector<std::size_t>>();
  s.dropout_rate = j.value("dropout_rate", 0.0);
  s.channels = j.value("channels", kChannels);
}

/// Parameter container; gradients use the same layout.
struct ParameterPack {
  std::vector<nn::LstmParams> encoder;
  std::vector<nn::LstmParams> decoder;
  nn::DenseParams head;

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (auto* stack : {&encoder, &decoder}) {
      for (auto& l : *stack) {
        fn(l.W.data(), l.W.size());
        fn(l.U.data(), l.U.size());
        fn(l.b.data(), l.b.size());
      }
    }
    fn(head.W.data(), head.W.size());
    fn(head.b.data(), head.b.size());
  }

  std::vector<std::span<double>> spans() {
    std::vector<std::span<double>> out;
    for_each_tensor([&](double* p, Eigen::Index n) { out.emplace_back(p, static_cast<std::size_t>(n)); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = static_cast<std::size_t>(head.parameter_count());
    for (const auto& l : encoder) n += static_cast<std::size_t>(l.parameter_count());
    for (const auto& l : decoder) n += static_cast<std::size_t>(l.parameter_count());
    return n;
  }

  /// Zero-filled pack with the same shapes.
  ParameterPack zeros_like() const {
    ParameterPack z;
    for (const auto& l : encoder) z.encoder.push_back(nn::LstmParams::zeros(l.input_size(), l.hidden_size()));
    for (const auto& l : decoder) z.decoder.push_back(nn::LstmParams::zeros(l.input_size(), l.hidden_size()));
    z.head = nn::DenseParams::zeros(head.W.cols(), head.W.rows());
    return z;
  }
};

struct AutoencoderModel {
  AutoencoderSpec spec;
  ParameterPack params;
  std::optional<ts::Normalizer> normalizer;
  std::uint64_t seed = 0;
};

namespace detail {

inline nn::LstmParams init_lstm(std::size_t input, std::size_t hidden, std::mt19937_64& rng) {
  const auto D = static_cast<Eigen::Index>(input);
  const auto H = static_cast<Eigen::Index>(hidden);
  nn::LstmParams p;
  p.W = nn::glorot_uniform(4 * H, D, rng);
  p.U = nn::orthogonal(4 * H, H, rng);
  p.b = Eigen::VectorXd::Zero(4 * H);
  p.b.segment(H, H).setOnes();
  return p;
}

inline AutoencoderModel make_model(const AutoencoderSpec& spec, std::uint64_t seed) {
  AutoencoderModel m;
  m.spec = spec;
  m.seed = seed;
  std::mt19937_64 rng(mix_seed(seed, 0));
  std::size_t d = spec.channels;
  for (auto h : spec.encoder_layer_sizes) {
    m.params.encoder.push_back(init_lstm(d, h, rng));
    d = h;
  }
  for (auto h : spec.decoder_layer_sizes()) {
    m.params.decoder.push_back(init_lstm(d, h, rng));
    d = h;
  }
  m.params.head.W = nn::glorot_uniform(static_cast<Eigen::Index>(spec.channels), static_cast<Eigen::Index>(d), rng);
  m.params.head.b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.channels));
  return m;
}

}  // namespace detail

/// Builds a freshly initialized model: Glorot-uniform input weights,
/// orthogonal recurrent weights, forget-gate bias 1, zero head bias.
inline AutoencoderModel build(const AutoencoderSpec& spec, std::uint64_t seed) {
  spec.validate();
  return detail::make_model(spec, seed);
}

/// As build(), but only checks structure; allows the sub-4-unit networks used
/// for gradient checking.
inline AutoencoderModel build_unchecked(const AutoencoderSpec& spec, std::uint64_t seed) {
  spec.validate_structure();
  return detail::make_model(spec, seed);
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardTrace {
  std::vector<nn::LstmCache> encoder;
  std::vector<nn::LstmCache> decoder;
  std::vector<Sequence> encoder_masks;  // empty when dropout is off
  std::vector<Sequence> decoder_masks;
  Sequence head_input;
  Sequence output;
};

namespace detail {

inline void apply_dropout(Sequence& seq, double rate, std::mt19937_64* rng, Sequence& masks) {
  if (rng == nullptr || rate == 0.0) return;
  masks.resize(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    masks[t] = nn::dropout_mask(seq[t].rows(), seq[t].cols(), rate, *rng);
    seq[t] = seq[t].cwiseProduct(masks[t]);
  }
}

inline void apply_masks(Sequence& grads, const Sequence& masks) {
  if (masks.empty()) return;
  for (std::size_t t = 0; t < grads.size(); ++t) grads[t] = grads[t].cwiseProduct(masks[t]);
}

}  // namespace detail

/// Batched forward pass. `input` holds L_in matrices of (channels x batch).
/// Dropout is active only when `dropout_rng` is non-null.
inline ForwardTrace forward(const ParameterPack& p, const AutoencoderSpec& spec, const Sequence& input,
                            std::mt19937_64* dropout_rng = nullptr) {
  if (input.size() != spec.input_len) {
    throw UsageError("forward: expected " + std::to_string(spec.input_len) + " input steps, got " +
                     std::to_string(input.size()));
  }
  const Eigen::Index batch = input.front().cols();
  ForwardTrace tr;
  tr.encoder_masks.resize(p.encoder.size());
  tr.decoder_masks.resize(p.decoder.size());

  Sequence seq = input;
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    auto out = nn::lstm_forward(seq, p.encoder[l], nn::LstmState::zeros(p.encoder[l].hidden_size(), batch));
    seq = std::move(out.hidden);
    detail::apply_dropout(seq, spec.dropout_rate, dropout_rng, tr.encoder_masks[l]);
    tr.encoder.push_back(std::move(out.cache));
  }

  Sequence repeated(spec.output_len, seq.back());
  seq = std::move(repeated);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    auto out = nn::lstm_forward(seq, p.decoder[l], nn::LstmState::zeros(p.decoder[l].hidden_size(), batch));
    seq = std::move(out.hidden);
    detail::apply_dropout(seq, spec.dropout_rate, dropout_rng, tr.decoder_masks[l]);
    tr.decoder.push_back(std::move(out.cache));
  }
  tr.output = nn::dense_forward(seq, p.head);
  tr.head_input = std::move(seq);
  return tr;
}

/// Gradient of a loss with respect to every parameter, given d loss / d output.
inline ParameterPack backward(const ParameterPack& p, const ForwardTrace& tr, const Sequence& d_output) {
  ParameterPack g;
  g.encoder.resize(p.encoder.size());
  g.decoder.resize(p.decoder.size());

  auto head = nn::dense_backward(d_output, tr.head_input, p.head);
  g.head.W = std::move(head.dW);
  g.head.b = std::move(head.db);
  Sequence d_seq = std::move(head.dh);

  for (std::size_t l = p.decoder.size(); l-- > 0;) {
    detail::apply_masks(d_seq, tr.decoder_masks[l]);
    auto lg = nn::lstm_backward(d_seq, {}, {}, tr.decoder[l], p.decoder[l]);
    g.decoder[l] = {std::move(lg.dW), std::move(lg.dU), std::move(lg.db)};
    d_seq = std::move(lg.dx);
  }

  // The latent vector was fed to every decoder step.
  Eigen::MatrixXd d_latent = d_seq.front();
  for (std::size_t t = 1; t < d_seq.size(); ++t) d_latent += d_seq[t];

  const std::size_t top = p.encoder.size() - 1;
  {
    const auto& masks = tr.encoder_masks[top];
    if (!masks.empty()) d_latent = d_latent.cwiseProduct(masks.back());
    auto lg = nn::lstm_backward({}, d_latent, {}, tr.encoder[top], p.encoder[top]);
    g.encoder[top] = {std::move(lg.dW), std::move(lg.dU), std::move(lg.db)};
    d_seq = std::move(lg.dx);
  }
  for (std::size_t l = top; l-- > 0;) {
    detail::apply_masks(d_seq, tr.encoder_masks[l]);
    auto lg = nn::lstm_backward(d_seq, {}, {}, tr.encoder[l], p.encoder[l]);
    g.encoder[l] = {std::move(lg.dW), std::move(lg.dU), std::move(lg.db)};
    d_seq = std::move(lg.dx);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batching helpers

inline Sequence batch_inputs(const ts::WindowedDataset& ds, std::span<const std::size_t> idx) {
  Sequence seq(ds.input_len(), Eigen::MatrixXd(static_cast<Eigen::Index>(kChannels), static_cast<Eigen::Index>(idx.size())));
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto win = ds.input(idx[b]);
    for (std::size_t t = 0; t < seq.size(); ++t) seq[t].col(static_cast<Eigen::Index>(b)) = win.row(static_cast<Eigen::Index>(t)).transpose();
  }
  return seq;
}

inline Sequence batch_targets(const ts::WindowedDataset& ds, std::span<const std::size_t> idx) {
  Sequence seq(ds.output_len(), Eigen::MatrixXd(static_cast<Eigen::Index>(kChannels), static_cast<Eigen::Index>(idx.size())));
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto win = ds.target(idx[b]);
    for (std::size_t t = 0; t < seq.size(); ++t) seq[t].col(static_cast<Eigen::Index>(b)) = win.row(static_cast<Eigen::Index>(t)).transpose();
  }
  return seq;
}

inline void check_compatible(const AutoencoderModel& m, const ts::WindowedDataset& ds) {
  if (ds.input_len() != m.spec.input_len || ds.output_len() != m.spec.output_len) {
    throw UsageError("dataset windows (" + std::to_string(ds.input_len()) + "->" + std::to_string(ds.output_len()) +
                     ") do not match model spec (" + std::to_string(m.spec.input_len) + "->" +
                     std::to_string(m.spec.output_len) + ")");
  }
}

// ---------------------------------------------------------------------------
// Inference

/// Forecasts L_out x 6 from an L_in x 6 window (both in normalized units).
/// Dropout is always off, so the result is deterministic.
template <typename Derived>
ts::SeriesMatrix forecast(const AutoencoderModel& m, const Eigen::MatrixBase<Derived>& input) {
  if (static_cast<std::size_t>(input.rows()) != m.spec.input_len) {
    throw UsageError("forecast: input has " + std::to_string(input.rows()) + " steps, model expects " +
                     std::to_string(m.spec.input_len));
  }
  if (static_cast<std::size_t>(input.cols()) != m.spec.channels) throw UsageError("forecast: wrong channel count");
  Sequence seq(m.spec.input_len);
  for (std::size_t t = 0; t < seq.size(); ++t) seq[t] = input.row(static_cast<Eigen::Index>(t)).transpose();
  const auto tr = forward(m.params, m.spec, seq);
  ts::SeriesMatrix out(static_cast<Eigen::Index>(m.spec.output_len), static_cast<Eigen::Index>(m.spec.channels));
  for (std::size_t t = 0; t < m.spec.output_len; ++t) out.row(static_cast<Eigen::Index>(t)) = tr.output[t].col(0).transpose();
  if (!out.allFinite()) throw NumericError("forecast produced non-finite values");
  return out;
}

/// Forecasts for every window of a dataset, in dataset order.
inline std::vector<ts::SeriesMatrix> predict(const AutoencoderModel& m, const ts::WindowedDataset& ds,
                                             std::size_t batch_size = 256) {
  check_compatible(m, ds);
  std::vector<ts::SeriesMatrix> out(ds.size());
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
    const std::size_t end = std::min(ds.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto tr = forward(m.params, m.spec, batch_inputs(ds, idx));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto& pred = out[begin + b];
      pred.resize(static_cast<Eigen::Index>(m.spec.output_len), static_cast<Eigen::Index>(kChannels));
      for (std::size_t t = 0; t < m.spec.output_len; ++t) {
        pred.row(static_cast<Eigen::Index>(t)) = tr.output[t].col(static_cast<Eigen::Index>(b)).transpose();
      }
    }
  }
  return out;
}

/// Mean squared error over the selected windows, dropout off.
inline double evaluate_mse(const AutoencoderModel& m, const ts::WindowedDataset& ds, std::span<const std::size_t> idx,
                           std::size_t batch_size = 256) {
  if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t begin = 0; begin < idx.size(); begin += batch_size) {
    const auto chunk = idx.subspan(begin, std::min(batch_size, idx.size() - begin));
    const auto tr = forward(m.params, m.spec, batch_inputs(ds, chunk));
    const auto target = batch_targets(ds, chunk);
    for (std::size_t t = 0; t < target.size(); ++t) sum += (tr.output[t] - target[t]).squaredNorm();
  }
  return sum / static_cast<double>(idx.size() * m.spec.output_len * kChannels);
}

/// Coefficient of determination pooled over every window, step and channel.
inline double r2_score(std::span<const ts::SeriesMatrix> predictions, std::span<const ts::SeriesMatrix> targets) {
  if (predictions.size() != targets.size()) throw UsageError("r2_score: prediction/target count mismatch");
  if (targets.size() < 2) throw UsageError("r2_score needs at least two windows");
  double n = 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (predictions[k].rows() != targets[k].rows() || predictions[k].cols() != targets[k].cols()) {
      throw UsageError("r2_score: shape mismatch");
    }
    sum += targets[k].sum();
    n += static_cast<double>(targets[k].size());
  }
  const double mean = sum / n;
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    ss_res += (targets[k] - predictions[k]).squaredNorm();
    ss_tot += (targets[k].array() - mean).square().sum();
  }
  if (!(ss_tot > 0.0)) throw NumericError("r2_score: targets have zero variance");
  return 1.0 - ss_res / ss_tot;
}

inline std::vector<ts::SeriesMatrix> collect_targets(const ts::WindowedDataset& ds) {
  std::vector<ts::SeriesMatrix> out(ds.size());
  for (std::size_t k = 0; k < ds.size(); ++k) out[k] = ds.target(k);
  return out;
}

inline double evaluate_r2(const AutoencoderModel& m, const ts::WindowedDataset& ds) {
  const auto preds = predict(m, ds);
  const auto targets = collect_targets(ds);
  return r2_score(preds, targets);
}

// ---------------------------------------------------------------------------
// Training

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double validation_frac = 0.1;
  nn::AdamConfig adam{};
  double clip_norm = 5.0;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainReport {
  std::size_t epochs_run = 0;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  double final_validation_loss = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  std::size_t skipped_steps = 0;
  std::size_t train_windows = 0;
  std::size_t validation_windows = 0;
  std::vector<double> train_curve;
  std::vector<double> validation_curve;
};

/// Holds out every k-th window (k = round(1 / frac)) for validation.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(std::size_t n, double frac) {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  if (frac <= 0.0) {
    train.resize(n);
    std::iota(train.begin(), train.end(), 0);
    return {train, val};
  }
  if (frac >= 1.0) throw UsageError("validation_frac must be < 1");
  const auto stride = static_cast<std::size_t>(std::max<long long>(2, std::llround(1.0 / frac)));
  for (std::size_t k = 0; k < n; ++k) (k % stride == stride - 1 ? val : train).push_back(k);
  return {train, val};
}

/// Mini-batch Adam on MSE. Shuffling and dropout draw from a stream derived
/// from the model seed, so identical inputs give bit-identical parameters.
inline TrainReport train(AutoencoderModel& model, const ts::WindowedDataset& data, const TrainOptions& opt) {
  if (opt.epochs < 1) throw UsageError("training budget must be at least one epoch");
  if (opt.batch_size < 1) throw UsageError("batch size must be positive");
  if (data.empty()) throw DataError("training dataset is empty");
  check_compatible(model, data);

  const auto t0 = std::chrono::steady_clock::now();
  auto [train_idx, val_idx] = validation_split(data.size(), opt.validation_frac);
  if (train_idx.empty()) throw DataError("no training windows left after the validation split");

  TrainReport report;
  report.train_windows = train_idx.size();
  report.validation_windows = val_idx.size();
  report.initial_train_loss = evaluate_mse(model, data, train_idx);

  std::mt19937_64 rng(mix_seed(model.seed, 1));
  std::mt19937_64* dropout_rng = model.spec.dropout_rate > 0.0 ? &rng : nullptr;
  nn::AdamState adam;
  adam.config = opt.adam;
  auto param_spans = model.params.spans();

  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size) {
      const std::span<const std::size_t> idx(order.data() + begin, std::min(opt.batch_size, order.size() - begin));
      const auto input = batch_inputs(data, idx);
      const auto target = batch_targets(data, idx);
      const auto trace = forward(model.params, model.spec, input, dropout_rng);
      const auto loss = nn::mse_loss(trace.output, target);
      if (!std::isfinite(loss.loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches + 1));
      }
      auto grads = backward(model.params, trace, loss.grad);
      auto grad_spans = grads.spans();
      nn::clip_global_norm(grad_spans, opt.clip_norm);
      std::vector<nn::ParamSlot> slots(param_spans.size());
      for (std::size_t k = 0; k < slots.size(); ++k) slots[k] = {param_spans[k], grad_spans[k]};
      if (!nn::adam_step(slots, adam)) ++report.skipped_steps;
      loss_sum += loss.loss;
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    if (!val_idx.empty()) stats.validation_loss = evaluate_mse(model, data, val_idx);
    report.train_curve.push_back(stats.train_loss);
    report.validation_curve.push_back(stats.validation_loss);
    report.epochs_run = epoch;
    if (opt.on_epoch) opt.on_epoch(stats);
  }
  report.final_train_loss = report.train_curve.back();
  report.final_validation_loss = report.validation_curve.back();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline void to_json(nlohmann::json& j, const TrainReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json val = nlohmann::json::array();
  for (double v : r.validation_curve) val.push_back(num(v));
  j = {{"epochs_run", r.epochs_run},
       {"initial_train_loss", num(r.initial_train_loss)},
       {"final_train_loss", num(r.final_train_loss)},
       {"final_validation_loss", num(r.final_validation_loss)},
       {"wall_seconds", r.wall_seconds},
       {"skipped_steps", r.skipped_steps},
       {"train_windows", r.train_windows},
       {"validation_windows", r.validation_windows},
       {"train_curve", r.train_curve},
       {"validation_curve", val}};
}

}  // namespace tipguard::ae
