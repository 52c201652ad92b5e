// Shared primitive types and error categories.
#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedais {

using NodeId = std::uint32_t;
using ClientId = std::uint32_t;

// Ledger byte accounting assumes 8-byte scalars unless a caller overrides it.
inline constexpr std::size_t kScalarBytes = 8;

// Invalid argument to an operation (bad probability, bad size, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller broke an API contract (stale stamp, node owned by the wrong
// client, table not warm-started).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// NaN/Inf surfaced in a numeric pipeline.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file or config.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Logical write time of an embedding entry. Ordered lexicographically:
// round first, epoch within the round. Warm start writes (0, 0).
struct Stamp {
  std::int32_t round = 0;
  std::int32_t epoch = 0;

  auto operator<=>(const Stamp&) const = default;

  // Elapsed local epochs between two stamps, given the epochs-per-round
  // grid the run uses.
  std::int64_t epochs_since(const Stamp& earlier, std::int32_t epochs_per_round) const {
    return (static_cast<std::int64_t>(round) - earlier.round) * epochs_per_round +
           (static_cast<std::int64_t>(epoch) - earlier.epoch);
  }
};

inline std::string to_string(const Stamp& s) {
  return "(" + std::to_string(s.round) + "," + std::to_string(s.epoch) + ")";
}

}  // namespace fedais
