// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/dmd.hpp"

#include <cmath>

namespace sd {

void DmdConfig::validate() const {
    if (!(renoise_lo > 0.0 && renoise_lo < renoise_hi && renoise_hi < 1.0))
        throw ConfigError("dmd: renoise range must satisfy 0 < lo < hi < 1");
    if (critic_per_gen < 1) throw ConfigError("dmd: critic_per_gen must be >= 1");
    if (steps < 0) throw ConfigError("dmd: steps must be >= 0");
    if (!(lr_gen > 0.0) || !(lr_critic > 0.0)) throw ConfigError("dmd: learning rates must be positive");
    if (batch < 1) throw ConfigError("dmd: batch must be >= 1");
}

ad::Mat x0_from_v(const ad::Mat& z, double t, const ad::Mat& v) {
    if (z.rows() != v.rows() || z.cols() != v.cols()) throw ShapeError("x0_from_v: shape mismatch");
    return z - t * v;
}

ad::Mat x0_from_v(const ad::Mat& z, std::span<const double> t, const ad::Mat& v) {
    if (z.rows() != v.rows() || z.cols() != v.cols()) throw ShapeError("x0_from_v: shape mismatch");
    const ad::Index group = z.rows() / static_cast<ad::Index>(t.size());
    ad::Mat out(z.rows(), z.cols());
    for (std::size_t b = 0; b < t.size(); ++b) {
        const ad::Index r = static_cast<ad::Index>(b) * group;
        out.middleRows(r, group) = z.middleRows(r, group) - t[b] * v.middleRows(r, group);
    }
    return out;
}

ad::Mat dmd_direction(const ad::Mat& x_fake, const ad::Mat& x_real, ad::Index batch) {
    const ad::Index group = x_fake.rows() / batch;
    ad::Mat g = x_fake - x_real;
    for (ad::Index b = 0; b < batch; ++b) {
        auto block = g.middleRows(b * group, group);
        const double eta = block.cwiseAbs().mean() + 1e-8;
        block /= eta;
    }
    return g;
}

ad::Var dmd_surrogate(const ad::Var& x, const ad::Mat& g, ad::Index batch) {
    const ad::Var target = ad::constant(x.value() - g);
    return ad::scale(ad::sum(ad::square(ad::sub(x, target))), 0.5 / static_cast<double>(batch));
}

ad::Var dmd_generator_loss(const VelocityField& gen, const VelocityField& teacher, const VelocityField& critic,
                           const CondBatch& cond, const ad::Mat& z0, const DmdConfig& cfg, Rng& rng) {
    const ad::Var x_hat = sample_with_final_step_grad(gen, cfg.student_schedule, z0, cond);

    std::vector<double> t(static_cast<std::size_t>(cond.batch));
    for (auto& ti : t) ti = rng.uniform(cfg.renoise_lo, cfg.renoise_hi);
    const ad::Mat eps = rng.normal_matrix(z0.rows(), z0.cols());
    const ad::Mat z = forward_diffuse(x_hat.value(), t, eps);

    NfeCounter counter;
    const ad::Mat v_real = guided_velocity(teacher, z, t, cond, cfg.guidance_w, counter);
    const ad::Mat v_fake = guided_velocity(critic, z, t, cond, std::nullopt, counter);
    const ad::Mat x_real = x0_from_v(z, t, v_real);
    const ad::Mat x_fake = x0_from_v(z, t, v_fake);
    require_finite(x_real, "dmd teacher prediction");
    require_finite(x_fake, "dmd critic prediction");

    return dmd_surrogate(x_hat, dmd_direction(x_fake, x_real, cond.batch), cond.batch);
}

ad::Var critic_loss(const VelocityField& critic, const VelocityField& gen, const CondBatch& cond, const ad::Mat& z0,
                    const DmdConfig& cfg, Rng& rng) {
    NfeCounter counter;
    const ad::Mat x_hat = sample(gen, cfg.student_schedule, z0, cond, std::nullopt, counter);
    return fm_loss(critic, x_hat, cond, rng);
}

DmdResult run_dmd(const VelocityNet& teacher, const PreparedData& data, const DmdConfig& cfg, std::uint64_t seed,
                  const std::function<void(const DmdProgress&)>& on_step) {
    cfg.validate();
    DmdResult out{teacher.clone(), teacher.clone()};
    VelocityNet& gen = out.generator;
    VelocityNet& critic = out.critic;
    Adam gen_opt({.lr = cfg.lr_gen, .beta1 = 0.0, .beta2 = 0.99, .max_grad_norm = 1.0});
    Adam critic_opt({.lr = cfg.lr_critic, .beta1 = 0.0, .beta2 = 0.99, .max_grad_norm = 1.0});
    Rng rng(derive_seed(seed, "dmd"));
    const ad::Index F = data.spec.frames, D = data.spec.feature_dim;

    for (long step = 0; step < cfg.steps; ++step) {
        DmdProgress progress{step, 0.0, 0.0};
        for (int c = 0; c < cfg.critic_per_gen; ++c) {
            const Batch batch = draw_batch(data, static_cast<std::size_t>(cfg.batch), rng);
            const ad::Mat z0 = rng.normal_matrix(batch.size() * F, D);
            critic.params().zero_grad();
            const ad::Var loss = critic_loss(critic, gen, batch.cond, z0, cfg, rng);
            if (!std::isfinite(loss.scalar()))
                throw TrainingDiverged("dmd: critic loss diverged", gen.params().clone(), step);
            ad::backward(loss);
            critic_opt.step(critic.params());
            progress.critic_loss += loss.scalar() / cfg.critic_per_gen;
        }

        const Batch batch = draw_batch(data, static_cast<std::size_t>(cfg.batch), rng);
        const ad::Mat z0 = rng.normal_matrix(batch.size() * F, D);
        ParamSet last_finite = gen.params().clone();
        gen.params().zero_grad();
        ad::Var loss;
        try {
            loss = dmd_generator_loss(gen, teacher, critic, batch.cond, z0, cfg, rng);
        } catch (const DivergenceError& e) {
            throw TrainingDiverged(e.what(), std::move(last_finite), step);
        }
        ad::backward(loss);
        gen_opt.step(gen.params());
        if (!gen.params().all_finite() || !std::isfinite(loss.scalar()))
            throw TrainingDiverged("dmd: generator update diverged", std::move(last_finite), step);
        progress.gen_loss = loss.scalar();
        if (on_step) on_step(progress);
    }
    gen.params().zero_grad();
    critic.params().zero_grad();
    return out;
}

} // namespace sd
