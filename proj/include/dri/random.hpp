#pragma once

#include <cstdint>
#include <random>

namespace dri {

// Independent, reproducible generator for (seed, stream).
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Stream ids used across the library.
namespace streams {
inline constexpr std::uint64_t kCoefficients = 1;
inline constexpr std::uint64_t kUnits = 2;
inline constexpr std::uint64_t kContrasts = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kInit = 5;
inline constexpr std::uint64_t kShuffle = 6;
inline constexpr std::uint64_t kImportance = 7;
}  // namespace streams

}  // namespace dri
