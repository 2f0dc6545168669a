// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Sample-quality metrics on flattened frame features: Frechet distance
// between Gaussian fits, energy distance, a condition/mouth sync proxy, and
// function-evaluation and wall-clock accounting.

#pragma once

#include "stepdistill/batch.hpp"

#include <optional>

namespace sd {

struct GaussianFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    std::size_t n = 0;
};

// Rows are observations. Covariance uses the unbiased (n - 1) normalizer.
GaussianFit fit_gaussian(const Eigen::MatrixXd& features);

// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)), trace clamped at 0.
double frechet_distance(const GaussianFit& a, const GaussianFit& b);
// Fits both sets with a 1e-6 I ridge on each covariance.
double frechet_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct EnergyOptions {
    // All pairs are used when every pair count fits this budget; otherwise
    // this many pairs are drawn uniformly per term.
    std::size_t max_pairs = 4'000'000;
};

// 2 E|x - y| - E|x - x'| - E|y - y'| over pairs including self pairs.
double energy_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Rng& rng, const EnergyOptions& opts = {});

// Mean over samples of Pearson(frame_align(cond), generated feature 0).
// A sample with a constant series contributes 0 and is counted in
// `degenerate`.
struct SyncResult {
    double value = 0.0;
    std::size_t degenerate = 0;
};
SyncResult sync_correlation(const std::vector<Eigen::MatrixXd>& frames, const std::vector<Eigen::MatrixXd>& conds);

// Flattens each F x D sample (batch * F rows) into one row of F * D.
Eigen::MatrixXd flatten_samples(const ad::Mat& stacked, int frames);

struct MetricsReport {
    double fd = 0.0;
    double energy = 0.0;
    double sync = 0.0;
    // Model evaluations summed over all generated samples.
    long nfe = 0;
    double wall_ms = 0.0;
    long nfe_per_sample = 0;
};

struct MeasureOptions {
    std::size_t n_eval = 256;
    std::optional<double> guidance;
    std::size_t batch = 64;
};

// Generates one sample per held-out condition and compares with the held-out
// frames. wall_ms is the median per-sample time over generation batches.
MetricsReport measure(const VelocityField& model, const Schedule& schedule, const PreparedData& heldout,
                      const MeasureOptions& opts, std::uint64_t seed);

} // namespace sd
