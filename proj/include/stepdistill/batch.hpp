// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "stepdistill/condnet.hpp"
#include "stepdistill/error.hpp"
#include "stepdistill/toydata.hpp"

#include <span>

namespace sd {

// Dataset with per-sample context windows precomputed.
struct PreparedData {
    DataSpec spec;
    std::vector<const Sample*> samples;
    std::vector<ad::Mat> contexts;

    std::size_t size() const { return samples.size(); }
};

// `data` must outlive the result.
PreparedData prepare(const Dataset& data, const ContextConfig& ctx);

struct Batch {
    ad::Mat frames; // (batch * F) x D
    CondBatch cond;
    std::vector<std::size_t> indices;
    ad::Index size() const { return cond.batch; }
};

Batch make_batch(const PreparedData& data, std::span<const std::size_t> indices);
// Uniform draw with replacement.
Batch draw_batch(const PreparedData& data, std::size_t size, Rng& rng);

// Raised when a training loop meets a non-finite loss. Carries the last
// parameters that were finite so the caller can still persist them.
class TrainingDiverged : public DivergenceError {
public:
    TrainingDiverged(const std::string& what, ParamSet last_finite, long step)
        : DivergenceError(what), last_finite_(std::move(last_finite)), step_(step) {}
    const ParamSet& last_finite() const { return last_finite_; }
    long step() const { return step_; }

private:
    ParamSet last_finite_;
    long step_;
};

// Marks parameters as constants for the lifetime of the guard.
class FreezeGuard {
public:
    explicit FreezeGuard(ParamSet& params) : params_(params) { params_.set_requires_grad(false); }
    ~FreezeGuard() { params_.set_requires_grad(true); }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    ParamSet& params_;
};

} // namespace sd
