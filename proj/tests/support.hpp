// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit tests: a miniature network, finite-difference
// gradient checks, and a few hand-written velocity fields.

#pragma once

#include "stepdistill/batch.hpp"
#include "stepdistill/condnet.hpp"
#include "stepdistill/flowcore.hpp"
#include "stepdistill/params.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace sd::test {

// F=2, D=2, L=8, H=8: small enough to finite-difference every parameter.
inline NetConfig mini_net() {
    NetConfig c;
    c.frames = 2;
    c.feature_dim = 2;
    c.cond_len = 8;
    c.cond_channels = 1;
    c.context = 3;
    c.hidden = 8;
    c.blocks = 1;
    c.heads = 2;
    c.time_embed_dim = 4;
    c.ffn_mult = 2;
    return c;
}

inline DataSpec mini_spec(std::size_t count = 8, std::uint64_t seed = 5) {
    DataSpec s;
    s.frames = 2;
    s.feature_dim = 2;
    s.cond_len = 8;
    s.count = count;
    s.seed = seed;
    return s;
}

// Miniature network with a random (nonzero) output head so every parameter
// reaches the output.
inline VelocityNet mini_model(std::uint64_t seed) {
    Rng rng(seed);
    VelocityNet net(mini_net(), rng);
    net.params().at("head.w").mutable_value() = rng.normal_matrix(8, 2) * 0.5;
    net.params().at("head.b").mutable_value() = rng.normal_matrix(1, 2) * 0.1;
    return net;
}

inline CondBatch random_cond(const NetConfig& net, ad::Index batch, Rng& rng) {
    std::vector<ad::Mat> ctx;
    std::vector<const ad::Mat*> ptrs;
    for (ad::Index b = 0; b < batch; ++b) {
        ad::Mat a = rng.normal_matrix(net.cond_len, net.cond_channels).cwiseAbs();
        ctx.push_back(build_context(a, ContextConfig{net.context}));
    }
    for (const auto& c : ctx) ptrs.push_back(&c);
    return stack_contexts(ptrs);
}

struct GradCheck {
    double rel_error = 0.0;
    double analytic_norm = 0.0;
    std::size_t checked = 0;
};

// Compares the analytic gradient of `loss` with central differences of
// `oracle` (default: `loss` itself) over every scalar in `params`. Both must
// be deterministic functions of the parameter values.
inline GradCheck check_gradients(ParamSet& params, const std::function<ad::Var()>& loss,
                                 std::function<ad::Var()> oracle = {}, double h = 1e-6) {
    if (!oracle) oracle = loss;
    params.zero_grad();
    ad::backward(loss());
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    GradCheck out;
    for (const auto& [name, v] : params) {
        ad::Var p = v;
        const ad::Mat analytic = p.grad().size() ? p.grad() : ad::Mat::Zero(p.rows(), p.cols());
        for (ad::Index r = 0; r < p.rows(); ++r)
            for (ad::Index c = 0; c < p.cols(); ++c) {
                const double orig = p.value()(r, c);
                double plus = 0.0, minus = 0.0;
                {
                    ad::NoGradGuard ng;
                    p.mutable_value()(r, c) = orig + h;
                    plus = oracle().scalar();
                    p.mutable_value()(r, c) = orig - h;
                    minus = oracle().scalar();
                    p.mutable_value()(r, c) = orig;
                }
                const double numeric = (plus - minus) / (2.0 * h);
                const double a = analytic(r, c);
                diff2 += (a - numeric) * (a - numeric);
                a2 += a * a;
                n2 += numeric * numeric;
                ++out.checked;
            }
    }
    out.analytic_norm = std::sqrt(a2);
    out.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
    params.zero_grad();
    return out;
}

// The last Euler update of `schedule` taken from a fixed state: the only part
// of the sampler that carries gradient. Earlier steps are integrated once,
// here, by a separate loop.
struct FinalStep {
    ad::Mat z_prev;
    double t_last = 0.0;
    std::vector<double> t;
};

inline FinalStep prefix_state(const VelocityField& model, const Schedule& schedule, const ad::Mat& z0,
                              const CondBatch& cond) {
    ad::NoGradGuard ng;
    ad::Mat z = z0;
    for (std::size_t i = 0; i + 1 < schedule.size(); ++i) {
        const std::vector<double> t(static_cast<std::size_t>(cond.batch), schedule[i]);
        const ad::Mat v = model.velocity(ad::constant(z), t, cond).value();
        z = z - v * (schedule[i] - schedule[i + 1]);
    }
    return {z, schedule.last(), std::vector<double>(static_cast<std::size_t>(cond.batch), schedule.last())};
}

inline ad::Var final_step(const VelocityField& model, const FinalStep& s, const CondBatch& cond) {
    return ad::sub(ad::constant(s.z_prev), ad::scale(model.velocity(ad::constant(s.z_prev), s.t, cond), s.t_last));
}

// v(z, t) = theta broadcast to every entry; theta is a 1x1 parameter.
class ConstantField : public VelocityField {
public:
    explicit ConstantField(double theta) { params_.add("theta", ad::Mat::Constant(1, 1, theta)); }
    ad::Var velocity(const ad::Var& z, std::span<const double>, const CondBatch&) const override {
        return ad::matmul(ad::constant(ad::Mat::Ones(z.rows(), 1)),
                          ad::matmul(params_.at("theta"), ad::constant(ad::Mat::Ones(1, z.cols()))));
    }
    ParamSet& params() { return params_; }

private:
    ParamSet params_;
};

// Returns a fixed matrix regardless of input: lets tests inject eps - x.
class FixedField : public VelocityField {
public:
    explicit FixedField(ad::Mat v) : v_(std::move(v)) {}
    ad::Var velocity(const ad::Var&, std::span<const double>, const CondBatch&) const override {
        return ad::constant(v_);
    }

private:
    ad::Mat v_;
};

class ZeroField : public VelocityField {
public:
    ad::Var velocity(const ad::Var& z, std::span<const double>, const CondBatch&) const override {
        return ad::constant(ad::Mat::Zero(z.rows(), z.cols()));
    }
};

} // namespace sd::test
