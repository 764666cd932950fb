#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tipguard {

inline constexpr std::string_view kVersion = "0.1.0";

inline constexpr std::size_t kChannels = 6;

using ChannelArray = std::array<double, kChannels>;

inline constexpr std::array<std::string_view, kChannels> kChannelNames = {
    "accel_x", "accel_y", "accel_z", "gyro_x", "gyro_y", "gyro_z"};

// Error taxonomy. The CLI maps these onto exit codes 2 / 3 / 4.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline bool all_finite(const ChannelArray& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace tipguard
