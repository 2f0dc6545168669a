// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic conditional sequence data. A sample pairs an F x D frame
// sequence with a nonnegative L x C conditioning envelope sampled at 4x the
// frame rate. Feature 0 ("mouth") follows the frame-aligned envelope; features
// 1-2 ("head") trace a random circle independent of the condition; feature 3
// is small white noise.

#pragma once

#include "stepdistill/rng.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace sd {

struct DataSpec {
    int frames = 16;
    int feature_dim = 4;
    int cond_len = 64;
    int cond_channels = 1;
    std::uint64_t count = 1;
    std::uint64_t seed = 0;
    double noise_sigma = 0.05;
    // Multiplies the envelope sine amplitudes; 1 for ordinary data.
    double cond_amplitude = 1.0;

    // Throws ConfigError when any invariant fails.
    void validate() const;
    friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

void to_json(nlohmann::json& j, const DataSpec& s);
void from_json(const nlohmann::json& j, DataSpec& s);

struct Sample {
    Eigen::MatrixXd frames; // F x D
    Eigen::MatrixXd cond;   // L x C
    std::uint64_t seed = 0;
};

struct Dataset {
    DataSpec spec;
    std::vector<Sample> samples;
};

// Channel-averaged mean of `cond` over each block of L/F rows.
Eigen::VectorXd frame_align(const Eigen::MatrixXd& cond, int frames);

Sample synthesize_sample(Rng& rng, const DataSpec& spec);

// Seed of sample `index`; samples are a pure function of (spec.seed, index).
std::uint64_t sample_seed(const DataSpec& spec, std::uint64_t index);
Sample synthesize_indexed(const DataSpec& spec, std::uint64_t index);
Dataset synthesize_dataset(const DataSpec& spec);

// Binary layout, all little-endian:
//   "STPD" | u8 version | u32 F | u32 D | u32 L | u32 C | u64 count | u64 seed
//   | f64 noise_sigma | f64 cond_amplitude | count x u64 sample seed
//   | per sample: F*D f32 frames then L*C f32 cond, both row-major.
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

} // namespace sd
