// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/flowcore.hpp"

#include "stepdistill/error.hpp"

#include <cmath>
#include <string>

namespace sd {

namespace {

// Shared by both samplers so their forward values agree bit for bit.
ad::Mat euler_update(const ad::Mat& z, const ad::Mat& v, double dt) { return z - v * dt; }

std::vector<double> filled(ad::Index batch, double t) { return std::vector<double>(static_cast<std::size_t>(batch), t); }

void check_inputs(const ad::Mat& z0, const CondBatch& cond) {
    if (cond.batch < 1 || z0.rows() % cond.batch != 0) throw ShapeError("sampler: latent rows must be a multiple of the batch");
    if (!z0.allFinite()) throw DivergenceError("sampler: initial noise is not finite");
}

} // namespace

Schedule::Schedule(std::vector<double> steps) : steps_(std::move(steps)) {
    if (steps_.empty()) throw ConfigError("schedule must be nonempty");
    for (std::size_t i = 0; i < steps_.size(); ++i) {
        const double t = steps_[i];
        if (!(t > 0.0 && t <= 1.0)) throw ConfigError("schedule entries must lie in (0, 1]");
        if (i > 0 && !(t < steps_[i - 1])) throw ConfigError("schedule must be strictly decreasing");
    }
}

Schedule uniform_schedule(int n) {
    if (n < 1) throw ConfigError("uniform_schedule: n must be >= 1");
    std::vector<double> steps(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) steps[static_cast<std::size_t>(j)] = 1.0 - static_cast<double>(j) / n;
    return Schedule(std::move(steps));
}

void require_finite(const ad::Mat& m, const char* what) {
    if (!m.allFinite()) throw DivergenceError(std::string(what) + ": non-finite value");
}

ad::Mat forward_diffuse(const ad::Mat& x, double t, const ad::Mat& eps) {
    if (x.rows() != eps.rows() || x.cols() != eps.cols()) throw ShapeError("forward_diffuse: shape mismatch");
    return (1.0 - t) * x + t * eps;
}

ad::Mat forward_diffuse(const ad::Mat& x, std::span<const double> t, const ad::Mat& eps) {
    if (x.rows() != eps.rows() || x.cols() != eps.cols()) throw ShapeError("forward_diffuse: shape mismatch");
    if (t.empty() || x.rows() % static_cast<ad::Index>(t.size()) != 0)
        throw ShapeError("forward_diffuse: rows must split evenly over timesteps");
    const ad::Index group = x.rows() / static_cast<ad::Index>(t.size());
    ad::Mat out(x.rows(), x.cols());
    for (std::size_t b = 0; b < t.size(); ++b) {
        const ad::Index r = static_cast<ad::Index>(b) * group;
        out.middleRows(r, group) = (1.0 - t[b]) * x.middleRows(r, group) + t[b] * eps.middleRows(r, group);
    }
    return out;
}

ad::Mat guided_velocity(const VelocityField& model, const ad::Mat& z, std::span<const double> t,
                        const CondBatch& cond, std::optional<double> guidance, NfeCounter& counter) {
    ad::NoGradGuard no_grad;
    const ad::Var zv = ad::constant(z);
    ad::Mat v_cond = model.velocity(zv, t, cond).value();
    ++counter.evals;
    if (!guidance) return v_cond;
    const ad::Mat v_uncond = model.velocity(zv, t, cond.null()).value();
    ++counter.evals;
    return v_uncond + *guidance * (v_cond - v_uncond);
}

ad::Var fm_loss(const VelocityField& model, const ad::Mat& x, const CondBatch& cond, Rng& rng,
                const FmLossOptions& opts) {
    if (cond.batch < 1 || x.rows() % cond.batch != 0) throw ShapeError("fm_loss: rows must split evenly over the batch");
    std::vector<double> t(static_cast<std::size_t>(cond.batch));
    for (auto& ti : t) ti = rng.uniform(opts.t_min, 1.0);
    const ad::Mat eps = rng.normal_matrix(x.rows(), x.cols());

    CondBatch used = cond;
    if (opts.cond_dropout > 0.0) {
        const ad::Index len = cond.cond_len();
        for (ad::Index b = 0; b < cond.batch; ++b)
            if (rng.uniform() < opts.cond_dropout) used.context.middleRows(b * len, len).setZero();
    }

    const ad::Mat z = forward_diffuse(x, t, eps);
    const ad::Var v = model.velocity(ad::constant(z), t, used);
    require_finite(v.value(), "fm_loss");
    const ad::Var target = ad::constant(eps - x);
    // Equal-size samples: the per-sample mean of |.|^2 / (F D) is the mean over all entries.
    return ad::mean(ad::square(ad::sub(v, target)));
}

ad::Mat sample(const VelocityField& model, const Schedule& schedule, const ad::Mat& z0, const CondBatch& cond,
               std::optional<double> guidance, NfeCounter& counter) {
    check_inputs(z0, cond);
    ad::Mat z = z0;
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        const auto t = filled(cond.batch, schedule[i]);
        const ad::Mat v = guided_velocity(model, z, t, cond, guidance, counter);
        z = euler_update(z, v, schedule[i] - schedule.next(i));
        require_finite(z, "sample");
    }
    return z;
}

ad::Var sample_with_final_step_grad(const VelocityField& model, const Schedule& schedule, const ad::Mat& z0,
                                    const CondBatch& cond, NfeCounter* counter) {
    check_inputs(z0, cond);
    NfeCounter local;
    NfeCounter& c = counter ? *counter : local;
    ad::Mat z = z0;
    const std::size_t last = schedule.size() - 1;
    for (std::size_t i = 0; i < last; ++i) {
        const auto t = filled(cond.batch, schedule[i]);
        const ad::Mat v = guided_velocity(model, z, t, cond, std::nullopt, c);
        z = euler_update(z, v, schedule[i] - schedule.next(i));
        require_finite(z, "sample_with_final_step_grad");
    }
    const auto t = filled(cond.batch, schedule[last]);
    const ad::Var v = model.velocity(ad::constant(z), t, cond);
    ++c.evals;
    require_finite(v.value(), "sample_with_final_step_grad");
    return ad::sub(ad::constant(z), ad::scale(v, schedule[last] - schedule.next(last)));
}

} // namespace sd
