// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Rectified-flow machinery: z_t = (1 - t) x + t eps with velocity target
// eps - x, Euler sampling from t = 1 down to an implicit terminal t = 0, and
// the sampler variant whose gradient flows only through the final update.

#pragma once

#include "stepdistill/autodiff.hpp"
#include "stepdistill/rng.hpp"

#include <optional>
#include <span>
#include <vector>

namespace sd {

// Strictly decreasing timesteps in (0, 1]; the terminal 0 is implicit.
class Schedule {
public:
    Schedule() = default;
    explicit Schedule(std::vector<double> steps);

    const std::vector<double>& steps() const { return steps_; }
    std::size_t size() const { return steps_.size(); }
    double last() const { return steps_.back(); }
    double operator[](std::size_t i) const { return steps_[i]; }
    // Timestep after entry i; 0 after the last entry.
    double next(std::size_t i) const { return i + 1 < steps_.size() ? steps_[i + 1] : 0.0; }

    friend bool operator==(const Schedule&, const Schedule&) = default;

private:
    std::vector<double> steps_;
};

// {1 - j/n : j = 0..n-1}.
Schedule uniform_schedule(int n);

struct NfeCounter {
    long evals = 0;
};

// Conditioning for a batch: per-sample temporal context windows stacked
// row-wise, (batch * L) x (k * C). A zero context is the unconditional input.
struct CondBatch {
    ad::Mat context;
    ad::Index batch = 0;

    ad::Index cond_len() const { return batch == 0 ? 0 : context.rows() / batch; }
    CondBatch null() const { return {ad::Mat::Zero(context.rows(), context.cols()), batch}; }
};

// A model of the velocity field. z holds batch * F rows; t has one entry per
// sample. Each call is one function evaluation.
class VelocityField {
public:
    virtual ~VelocityField() = default;
    virtual ad::Var velocity(const ad::Var& z, std::span<const double> t, const CondBatch& cond) const = 0;
};

ad::Mat forward_diffuse(const ad::Mat& x, double t, const ad::Mat& eps);
// Per-sample timesteps; rows are grouped into t.size() equal blocks.
ad::Mat forward_diffuse(const ad::Mat& x, std::span<const double> t, const ad::Mat& eps);

// Velocity with optional classifier-free guidance v_u + w (v_c - v_u).
ad::Mat guided_velocity(const VelocityField& model, const ad::Mat& z, std::span<const double> t,
                        const CondBatch& cond, std::optional<double> guidance, NfeCounter& counter);

struct FmLossOptions {
    double t_min = 0.001;
    // Probability of replacing a sample's condition with the null condition.
    double cond_dropout = 0.0;
};

// Flow-matching regression loss, mean over samples of |v - (eps - x)|^2 / (F D).
ad::Var fm_loss(const VelocityField& model, const ad::Mat& x, const CondBatch& cond, Rng& rng,
                const FmLossOptions& opts = {});

ad::Mat sample(const VelocityField& model, const Schedule& schedule, const ad::Mat& z0, const CondBatch& cond,
               std::optional<double> guidance, NfeCounter& counter);

// Same forward values as the unguided sample(); every evaluation before the
// last runs without gradient recording.
ad::Var sample_with_final_step_grad(const VelocityField& model, const Schedule& schedule, const ad::Mat& z0,
                                    const CondBatch& cond, NfeCounter* counter = nullptr);

// Throws DivergenceError if any entry is non-finite.
void require_finite(const ad::Mat& m, const char* what);

} // namespace sd
