// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded random streams. Every stream in a run is derived from the single
// global seed by a counter-based split, so reordering work never changes
// which numbers a given consumer sees.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string_view>

namespace sd {

std::uint64_t splitmix64(std::uint64_t x);

// Stable 64-bit id for a textual stream tag (FNV-1a).
std::uint64_t stream_id(std::string_view tag);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    return derive_seed(seed, stream_id(tag), index);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double normal() { return normal_(engine_); }
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }
    std::uint64_t bits() { return engine_(); }

    Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace sd
