// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Distribution matching distillation of a many-step teacher into a 4-step
// student. A critic trained by flow matching on student samples tracks the
// student distribution; the generator is pulled along the difference between
// critic and teacher clean-sample predictions at a random re-noising level.

#pragma once

#include "stepdistill/batch.hpp"

#include <functional>
#include <optional>

namespace sd {

struct DmdConfig {
    Schedule student_schedule{{1.0, 0.75, 0.5, 0.25}};
    double renoise_lo = 0.02;
    double renoise_hi = 0.98;
    // Guidance applied to the teacher target; nullopt uses the plain
    // conditional teacher.
    std::optional<double> guidance_w = 2.0;
    int critic_per_gen = 5;
    long steps = 1000;
    double lr_gen = 1e-4;
    double lr_critic = 2e-4;
    int batch = 32;

    void validate() const;
};

// Clean-sample prediction z - t v.
ad::Mat x0_from_v(const ad::Mat& z, double t, const ad::Mat& v);
ad::Mat x0_from_v(const ad::Mat& z, std::span<const double> t, const ad::Mat& v);

// Normalized DMD direction (x_fake - x_real) / eta per sample, with eta the
// sample's mean absolute difference plus 1e-8.
ad::Mat dmd_direction(const ad::Mat& x_fake, const ad::Mat& x_real, ad::Index batch);

// Surrogate 0.5 |x - detach(x - g)|^2 averaged over samples; its gradient with
// respect to x is g / batch.
ad::Var dmd_surrogate(const ad::Var& x, const ad::Mat& g, ad::Index batch);

// Generator-side DMD loss for one batch starting from noise z0; the graph
// reaches only the generator's final sampling step.
ad::Var dmd_generator_loss(const VelocityField& gen, const VelocityField& teacher, const VelocityField& critic,
                           const CondBatch& cond, const ad::Mat& z0, const DmdConfig& cfg, Rng& rng);

// Flow-matching loss of the critic on fully detached student samples.
ad::Var critic_loss(const VelocityField& critic, const VelocityField& gen, const CondBatch& cond, const ad::Mat& z0,
                    const DmdConfig& cfg, Rng& rng);

struct DmdProgress {
    long step = 0;
    double gen_loss = 0.0;
    double critic_loss = 0.0;
};

struct DmdResult {
    VelocityNet generator;
    VelocityNet critic;
};

// Generator and critic start as copies of the teacher. Throws
// TrainingDiverged carrying the last finite generator.
DmdResult run_dmd(const VelocityNet& teacher, const PreparedData& data, const DmdConfig& cfg, std::uint64_t seed,
                  const std::function<void(const DmdProgress&)>& on_step = {});

} // namespace sd
