// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Progressive adversarial distillation: the 4-step student is cut to 3, 2
// and finally 1 step, one stage per step removed. Each stage trains against
// a conditional discriminator with a relativistic loss and finite-difference
// smoothness penalties, perturbs the final timestep during a warm-up window,
// and mixes in a self-compare term against frozen 4-step reference samples.

#pragma once

#include "stepdistill/batch.hpp"

#include <functional>
#include <string>
#include <utility>

namespace sd {

enum class LossKind { r3gan, nonsaturating, hinge };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

// T(0) = {1, .75, .5, .25}, T(1) = {1, .75, .5}, T(2) = {1, .75}, T(3) = {1}.
Schedule stage_schedule(int k);

struct StageConfig {
    int k = 1;
    Schedule target_schedule = stage_schedule(1);
    double prev_final_t = 0.25;
    long warmup = 500;
    long steps = 500;
    double lambda = 0.5;
    double gamma = 100.0;
    double sigma_r = 0.1;
    LossKind loss_kind = LossKind::r3gan;
    double lr_gen = 2e-5;
    double lr_disc = 1e-4;
    int batch = 32;

    void validate() const;
};

// Stage k with its fixed target and the previous stage's final timestep.
StageConfig standard_stage(int k, const StageConfig& base = {});

// Configs for the stage indices `ks` (increasing), taken from `available` by
// k or else derived from its first entry, with prev_final_t chained from the
// 4-step schedule through each selected stage.
std::vector<StageConfig> select_stages(const std::vector<StageConfig>& available, const std::vector<int>& ks);

// The target schedule with its last entry replaced by a draw from
// U(prev_final_t, last) while s < warmup; the target itself afterwards.
Schedule dynamic_sample(const Schedule& target, double prev_final_t, long s, long warmup, Rng& rng);

class Discriminator {
public:
    // Backbone copied from `backbone_init`; head final layer zero.
    Discriminator(const VelocityNet& backbone_init, Rng& rng);
    Discriminator(VelocityNet backbone, ParamSet head);

    // One logit per sample, from the backbone's features at t = 0, mean-pooled
    // over frames.
    ad::Var logit(const ad::Var& x, const CondBatch& cond) const;

    VelocityNet& backbone() { return backbone_; }
    const VelocityNet& backbone() const { return backbone_; }
    ParamSet& head() { return head_; }
    const ParamSet& head() const { return head_; }
    void zero_grad();
    std::uint64_t fingerprint() const;

private:
    VelocityNet backbone_;
    ParamSet head_;
};

struct AdvLosses {
    ad::Var d;
    ad::Var g;
};

// Batch losses from per-sample logits.
AdvLosses adv_losses(LossKind kind, const ad::Var& d_real, const ad::Var& d_fake);
std::pair<double, double> adv_losses(LossKind kind, double d_real, double d_fake);

// Mean over samples of (D(x + sigma_r eps) - D(x))^2.
ad::Var reg_penalty(const Discriminator& disc, const ad::Mat& x, const CondBatch& cond, double sigma_r, Rng& rng);
// Same for any logit function returning one row per sample.
ad::Var reg_penalty(const std::function<ad::Var(const ad::Var&)>& logit, const ad::Mat& x, double sigma_r, Rng& rng);

struct DLoss {
    ad::Var total;
    double core = 0.0;
    double r1 = 0.0;
    double r2 = 0.0;
    double r3 = 0.0;
};

// Core + gamma / 3 (R1 + R2 + R3) on real, student and reference samples.
DLoss d_loss_total(const Discriminator& disc, const ad::Mat& x_real, const ad::Mat& x_fake, const ad::Mat& x_ref,
                   const CondBatch& cond, const StageConfig& cfg, Rng& rng);

struct GLoss {
    ad::Var total;
    double real = 0.0;
    double self = 0.0;
};

// (1 - lambda) L_G(fake vs real) + lambda L_G(fake vs reference).
GLoss g_loss_total(const Discriminator& disc, const ad::Var& x_fake, const ad::Mat& x_real, const ad::Mat& x_ref,
                   const CondBatch& cond, double lambda, LossKind kind);

// Frozen copy of the 4-step model.
struct RefGenerator {
    VelocityNet net;
    Schedule schedule = stage_schedule(0);

    explicit RefGenerator(const VelocityNet& stage0);
};

ad::Mat gen_reference(const RefGenerator& ref, const ad::Mat& z0, const CondBatch& cond);

struct StageStepLog {
    int k = 0;
    long step = 0;
    double t_last = 0.0;
    double loss_d = 0.0;
    double loss_g = 0.0;
    double self_share = 0.0;
    double r1 = 0.0;
    double r2 = 0.0;
    double r3 = 0.0;
};

using StageStepFn = std::function<void(const StageStepLog&)>;

// One phase: per step, a discriminator update then a generator update.
// Throws TrainingDiverged carrying the last finite generator.
void run_stage(VelocityNet& gen, Discriminator& disc, const RefGenerator& ref, const PreparedData& data,
               const StageConfig& cfg, std::uint64_t seed, const StageStepFn& on_step = {});

using StageDoneFn = std::function<void(const StageConfig&, const VelocityNet&)>;

// Chains the stages starting from the 4-step model; each stage's
// prev_final_t must be the final timestep of the stage before it.
VelocityNet run_progressive(const VelocityNet& stage0, const PreparedData& data, const std::vector<StageConfig>& cfgs,
                            std::uint64_t seed, const StageDoneFn& on_stage_done = {},
                            const StageStepFn& on_step = {});

} // namespace sd
