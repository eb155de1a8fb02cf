// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace fisher_moe {

/// What a random stream is used for. Each (seed, purpose, index) triple names
/// an independent, reproducible stream.
enum class StreamPurpose : std::uint64_t {
  kData = 1,
  kInit = 2,
  kIntervention = 3,
  kProbe = 4,
  kEval = 5,
  kBayes = 6,
  kLottery = 7,
  kTask = 8,
  kFisher = 9,
};

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

Rng make_stream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index = 0);

}  // namespace fisher_moe
