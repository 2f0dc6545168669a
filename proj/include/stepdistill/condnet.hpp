// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Conditioning pipeline and the velocity network shared by teacher, students,
// critic and discriminator backbone.
//
//   context   a (L x C) -> L x (k C), each row a replicate-padded window
//   adapter   first row and 4x-pooled remainder encoded separately, joined
//             per token, mapped to F tokens of width H
//   network   frame tokens + time embedding through blocks of
//             self-attention, cross-attention to the tokens, feed-forward

#pragma once

#include "stepdistill/flowcore.hpp"
#include "stepdistill/params.hpp"

#include <nlohmann/json.hpp>

namespace sd {

struct ContextConfig {
    int k = 5;
    void validate() const;
};

ad::Mat build_context(const ad::Mat& a, const ContextConfig& cfg);

// Stacks per-sample context arrays into a batch.
CondBatch stack_contexts(const std::vector<const ad::Mat*>& contexts);

struct NetConfig {
    int frames = 16;
    int feature_dim = 4;
    int cond_len = 64;
    int cond_channels = 1;
    int context = 5;
    int hidden = 64;
    int blocks = 2;
    int heads = 2;
    int time_embed_dim = 32;
    int ffn_mult = 2;

    void validate() const;
    int context_width() const { return context * cond_channels; }
    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

// Fresh parameters: scaled-normal weights, zero biases, zero output head.
ParamSet init_velocity_params(const NetConfig& cfg, Rng& rng);

// Conditioning tokens, (batch * F) x H.
ad::Var adapt(const ParamSet& params, const NetConfig& cfg, const CondBatch& cond);

class VelocityNet : public VelocityField {
public:
    VelocityNet(NetConfig cfg, ParamSet params);
    VelocityNet(const NetConfig& cfg, Rng& rng) : VelocityNet(cfg, init_velocity_params(cfg, rng)) {}

    // Final normalized hidden states, (batch * F) x H.
    ad::Var features(const ad::Var& z, std::span<const double> t, const CondBatch& cond) const;
    ad::Var velocity(const ad::Var& z, std::span<const double> t, const CondBatch& cond) const override;

    // Deep copy with independent parameters.
    VelocityNet clone() const { return VelocityNet(cfg_, params_.clone()); }

    const NetConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    NetConfig cfg_;
    ParamSet params_;
};

} // namespace sd
