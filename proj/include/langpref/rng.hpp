#pragma once

#include <cstdint>
#include <random>

namespace langpref {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream). Streams never share state, so a
/// new consumer can be added without shifting the draws of existing ones.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

/// Derives a child seed; used when a sub-pipeline needs its own master seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  Rng rng = make_rng(seed, stream);
  return rng();
}

/// Generator for run `index` of a pipeline stream under a master seed.
inline Rng run_rng(std::uint64_t master, std::uint64_t stream_id, std::uint64_t index) {
  return make_rng(derive_seed(master, stream_id), index);
}

// Stream ids. Append only.
namespace stream {
inline constexpr std::uint64_t kPool = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kTriplets = 3;
inline constexpr std::uint64_t kLatentInit = 4;
inline constexpr std::uint64_t kLatentShuffle = 5;
inline constexpr std::uint64_t kImprove = 6;
inline constexpr std::uint64_t kReward = 7;
inline constexpr std::uint64_t kRewardInit = 8;
inline constexpr std::uint64_t kEvalPairs = 9;
inline constexpr std::uint64_t kHumans = 10;
inline constexpr std::uint64_t kGateway = 11;
inline constexpr std::uint64_t kFeedback = 12;
inline constexpr std::uint64_t kSessions = 13;
}  // namespace stream

}  // namespace langpref
