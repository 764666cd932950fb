#pragma once

// JSON model checkpoints. Tensors are stored row-major with declared shapes;
// doubles are written in shortest round-trip form, so save/load is lossless.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "tipguard/autoencoder.hpp"

namespace tipguard::ckpt {

inline constexpr std::string_view kFormat = "tipguard-checkpoint/1";

namespace detail {

inline nlohmann::json tensor(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

inline nlohmann::json tensor(const Eigen::VectorXd& v) {
  return {{"shape", {v.size()}}, {"data", std::vector<double>(v.data(), v.data() + v.size())}};
}

inline Eigen::MatrixXd read_matrix(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto& data = j.at("data");
  if (shape.size() != 2 || shape[0] != rows || shape[1] != cols || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw DataError("checkpoint tensor shape does not match the declared spec");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

inline Eigen::VectorXd read_vector(const nlohmann::json& j, Eigen::Index n) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto& data = j.at("data");
  if (shape.size() != 1 || shape[0] != n || static_cast<Eigen::Index>(data.size()) != n) {
    throw DataError("checkpoint tensor shape does not match the declared spec");
  }
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = data[static_cast<std::size_t>(i)].get<double>();
  return v;
}

inline nlohmann::json lstm(const nn::LstmParams& p) {
  return {{"W", tensor(p.W)}, {"U", tensor(p.U)}, {"b", tensor(p.b)}};
}

inline nn::LstmParams read_lstm(const nlohmann::json& j, Eigen::Index in, Eigen::Index hidden) {
  return {read_matrix(j.at("W"), 4 * hidden, in), read_matrix(j.at("U"), 4 * hidden, hidden),
          read_vector(j.at("b"), 4 * hidden)};
}

}  // namespace detail

/// `metadata` is carried verbatim (window spec, training trials, run config).
inline nlohmann::json to_json(const ae::AutoencoderModel& m, const nlohmann::json& metadata = nlohmann::json::object()) {
  nlohmann::json enc = nlohmann::json::array();
  nlohmann::json dec = nlohmann::json::array();
  for (const auto& l : m.params.encoder) enc.push_back(detail::lstm(l));
  for (const auto& l : m.params.decoder) dec.push_back(detail::lstm(l));
  nlohmann::json j = {{"format", kFormat},
                      {"spec", m.spec},
                      {"seed", m.seed},
                      {"encoder", std::move(enc)},
                      {"decoder", std::move(dec)},
                      {"head", {{"W", detail::tensor(m.params.head.W)}, {"b", detail::tensor(m.params.head.b)}}},
                      {"normalizer", m.normalizer ? nlohmann::json(*m.normalizer) : nlohmann::json(nullptr)},
                      {"metadata", metadata}};
  return j;
}

inline ae::AutoencoderModel from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kFormat) {
      throw DataError("unsupported checkpoint format '" + j.at("format").get<std::string>() + "'");
    }
    ae::AutoencoderModel m;
    m.spec = j.at("spec").get<ae::AutoencoderSpec>();
    m.spec.validate_structure();
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& enc = j.at("encoder");
    const auto& dec = j.at("decoder");
    if (enc.size() != m.spec.encoder_layer_sizes.size() || dec.size() != enc.size()) {
      throw DataError("checkpoint layer count does not match spec");
    }
    auto d = static_cast<Eigen::Index>(m.spec.channels);
    for (std::size_t l = 0; l < enc.size(); ++l) {
      const auto h = static_cast<Eigen::Index>(m.spec.encoder_layer_sizes[l]);
      m.params.encoder.push_back(detail::read_lstm(enc[l], d, h));
      d = h;
    }
    const auto dec_sizes = m.spec.decoder_layer_sizes();
    for (std::size_t l = 0; l < dec.size(); ++l) {
      const auto h = static_cast<Eigen::Index>(dec_sizes[l]);
      m.params.decoder.push_back(detail::read_lstm(dec[l], d, h));
      d = h;
    }
    const auto out = static_cast<Eigen::Index>(m.spec.channels);
    m.params.head.W = detail::read_matrix(j.at("head").at("W"), out, d);
    m.params.head.b = detail::read_vector(j.at("head").at("b"), out);
    if (!j.at("normalizer").is_null()) m.normalizer = j.at("normalizer").get<ts::Normalizer>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save(const std::filesystem::path& path, const ae::AutoencoderModel& m,
                 const nlohmann::json& metadata = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << to_json(m, metadata).dump() << '\n';
}

inline nlohmann::json read_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline ae::AutoencoderModel load(const std::filesystem::path& path) { return from_json(read_document(path)); }

}  // namespace tipguard::ckpt
