// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/pad.hpp"

#include <cmath>

namespace sd {

namespace {

CondBatch repeat_cond(const CondBatch& cond, int times) {
    CondBatch out{ad::Mat(cond.context.rows() * times, cond.context.cols()), cond.batch * times};
    for (int i = 0; i < times; ++i) out.context.middleRows(i * cond.context.rows(), cond.context.rows()) = cond.context;
    return out;
}

ad::Var mean_sq_diff(const ad::Var& a, const ad::Var& b) { return ad::mean(ad::square(ad::sub(a, b))); }

ad::Var generator_loss(LossKind kind, const ad::Var& d_real, const ad::Var& d_fake) {
    switch (kind) {
    case LossKind::r3gan:
        return ad::scale(ad::mean(ad::log_sigmoid(ad::sub(d_fake, d_real))), -1.0);
    case LossKind::nonsaturating:
        return ad::scale(ad::mean(ad::log_sigmoid(d_fake)), -1.0);
    case LossKind::hinge:
        return ad::scale(ad::mean(d_fake), -1.0);
    }
    throw ConfigError("unknown loss kind");
}

ad::Var discriminator_loss(LossKind kind, const ad::Var& d_real, const ad::Var& d_fake) {
    switch (kind) {
    case LossKind::r3gan:
        return ad::scale(ad::mean(ad::log_sigmoid(ad::sub(d_real, d_fake))), -1.0);
    case LossKind::nonsaturating:
        return ad::sub(ad::scale(ad::mean(ad::log_sigmoid(d_real)), -1.0),
                       ad::mean(ad::log_sigmoid(ad::scale(d_fake, -1.0))));
    case LossKind::hinge:
        return ad::add(ad::mean(ad::relu(ad::add_scalar(ad::scale(d_real, -1.0), 1.0))),
                       ad::mean(ad::relu(ad::add_scalar(d_fake, 1.0))));
    }
    throw ConfigError("unknown loss kind");
}

} // namespace

std::string to_string(LossKind kind) {
    switch (kind) {
    case LossKind::r3gan: return "r3gan";
    case LossKind::nonsaturating: return "nonsaturating";
    case LossKind::hinge: return "hinge";
    }
    throw ConfigError("unknown loss kind");
}

LossKind parse_loss_kind(const std::string& name) {
    if (name == "r3gan") return LossKind::r3gan;
    if (name == "nonsaturating") return LossKind::nonsaturating;
    if (name == "hinge") return LossKind::hinge;
    throw ConfigError("unknown loss kind: " + name);
}

Schedule stage_schedule(int k) {
    switch (k) {
    case 0: return Schedule({1.0, 0.75, 0.5, 0.25});
    case 1: return Schedule({1.0, 0.75, 0.5});
    case 2: return Schedule({1.0, 0.75});
    case 3: return Schedule({1.0});
    default: throw ConfigError("stage index must be in {0, 1, 2, 3}");
    }
}

void StageConfig::validate() const {
    if (k < 1 || k > 3) throw ConfigError("stage: k must be in {1, 2, 3}");
    if (!(target_schedule == stage_schedule(k))) throw ConfigError("stage: target schedule must be the fixed T(k)");
    if (!(prev_final_t >= 0.0 && prev_final_t < target_schedule.last()))
        throw ConfigError("stage: prev_final_t must precede the target's final timestep");
    if (warmup < 0 || steps < 0) throw ConfigError("stage: warmup and steps must be >= 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("stage: lambda must lie in [0, 1]");
    if (!(gamma >= 0.0) || !(sigma_r >= 0.0)) throw ConfigError("stage: gamma and sigma_r must be >= 0");
    if (!(lr_gen > 0.0) || !(lr_disc > 0.0)) throw ConfigError("stage: learning rates must be positive");
    if (batch < 1) throw ConfigError("stage: batch must be >= 1");
}

StageConfig standard_stage(int k, const StageConfig& base) {
    StageConfig cfg = base;
    cfg.k = k;
    cfg.target_schedule = stage_schedule(k);
    cfg.prev_final_t = stage_schedule(k - 1).last();
    return cfg;
}

std::vector<StageConfig> select_stages(const std::vector<StageConfig>& available, const std::vector<int>& ks) {
    if (ks.empty()) throw ConfigError("select_stages: no stages requested");
    const StageConfig base = available.empty() ? StageConfig{} : available.front();
    std::vector<StageConfig> out;
    double prev = stage_schedule(0).last();
    int prev_k = 0;
    for (int k : ks) {
        if (k <= prev_k || k > 3) throw ConfigError("select_stages: stages must be increasing values in {1, 2, 3}");
        StageConfig cfg = standard_stage(k, base);
        for (const auto& a : available)
            if (a.k == k) cfg = a;
        cfg.prev_final_t = prev;
        prev = cfg.target_schedule.last();
        prev_k = k;
        out.push_back(cfg);
    }
    return out;
}

Schedule dynamic_sample(const Schedule& target, double prev_final_t, long s, long warmup, Rng& rng) {
    if (s < 0) throw ConfigError("dynamic_sample: step must be >= 0");
    if (!(prev_final_t < target.last())) throw ConfigError("dynamic_sample: prev_final_t must be below the final timestep");
    if (s >= warmup) return target;
    std::vector<double> steps = target.steps();
    double t = rng.uniform(prev_final_t, target.last());
    // A draw at the lower end must not collide with the preceding entry.
    if (steps.size() > 1 && !(t < steps[steps.size() - 2])) t = target.last();
    if (!(t > 0.0)) t = target.last();
    steps.back() = t;
    return Schedule(std::move(steps));
}

Discriminator::Discriminator(const VelocityNet& backbone_init, Rng& rng) : backbone_(backbone_init.clone()) {
    const int H = backbone_.config().hidden;
    head_.add("fc1.w", rng.normal_matrix(H, H) / std::sqrt(static_cast<double>(H)));
    head_.add("fc1.b", ad::Mat::Zero(1, H));
    head_.add("fc2.w", ad::Mat::Zero(H, 1));
    head_.add("fc2.b", ad::Mat::Zero(1, 1));
}

Discriminator::Discriminator(VelocityNet backbone, ParamSet head) : backbone_(std::move(backbone)), head_(std::move(head)) {
    for (const char* name : {"fc1.w", "fc1.b", "fc2.w", "fc2.b"})
        if (!head_.contains(name)) throw DataError(std::string("discriminator head missing ") + name);
}

ad::Var Discriminator::logit(const ad::Var& x, const CondBatch& cond) const {
    const std::vector<double> t(static_cast<std::size_t>(cond.batch), 0.0);
    const ad::Var pooled = ad::mean_row_groups(backbone_.features(x, t, cond), backbone_.config().frames);
    const ad::Var h = ad::silu(ad::linear(pooled, head_.at("fc1.w"), head_.at("fc1.b")));
    return ad::linear(h, head_.at("fc2.w"), head_.at("fc2.b"));
}

void Discriminator::zero_grad() {
    backbone_.params().zero_grad();
    head_.zero_grad();
}

std::uint64_t Discriminator::fingerprint() const {
    return backbone_.params().fingerprint() ^ splitmix64(head_.fingerprint());
}

AdvLosses adv_losses(LossKind kind, const ad::Var& d_real, const ad::Var& d_fake) {
    return {discriminator_loss(kind, d_real, d_fake), generator_loss(kind, d_real, d_fake)};
}

std::pair<double, double> adv_losses(LossKind kind, double d_real, double d_fake) {
    const ad::Var r(ad::Mat::Constant(1, 1, d_real)), f(ad::Mat::Constant(1, 1, d_fake));
    const AdvLosses l = adv_losses(kind, r, f);
    return {l.d.scalar(), l.g.scalar()};
}

ad::Var reg_penalty(const Discriminator& disc, const ad::Mat& x, const CondBatch& cond, double sigma_r, Rng& rng) {
    return reg_penalty([&](const ad::Var& in) { return disc.logit(in, cond); }, x, sigma_r, rng);
}

ad::Var reg_penalty(const std::function<ad::Var(const ad::Var&)>& logit, const ad::Mat& x, double sigma_r, Rng& rng) {
    if (!(sigma_r >= 0.0)) throw ConfigError("reg_penalty: sigma_r must be >= 0");
    const ad::Mat eps = rng.normal_matrix(x.rows(), x.cols());
    const ad::Var base = logit(ad::constant(x));
    const ad::Var shifted = logit(ad::constant(x + sigma_r * eps));
    return mean_sq_diff(shifted, base);
}

DLoss d_loss_total(const Discriminator& disc, const ad::Mat& x_real, const ad::Mat& x_fake, const ad::Mat& x_ref,
                   const CondBatch& cond, const StageConfig& cfg, Rng& rng) {
    const ad::Index B = cond.batch;
    const bool regularize = cfg.gamma > 0.0;
    std::vector<ad::Var> inputs{ad::constant(x_real), ad::constant(x_fake)};
    if (regularize) {
        const ad::Mat e1 = rng.normal_matrix(x_real.rows(), x_real.cols());
        const ad::Mat e2 = rng.normal_matrix(x_fake.rows(), x_fake.cols());
        const ad::Mat e3 = rng.normal_matrix(x_ref.rows(), x_ref.cols());
        inputs.push_back(ad::constant(x_ref));
        inputs.push_back(ad::constant(x_real + cfg.sigma_r * e1));
        inputs.push_back(ad::constant(x_fake + cfg.sigma_r * e2));
        inputs.push_back(ad::constant(x_ref + cfg.sigma_r * e3));
    }
    const int copies = static_cast<int>(inputs.size());
    const ad::Var logits = disc.logit(ad::concat_rows(inputs), repeat_cond(cond, copies));
    auto part = [&](int i) { return ad::slice_rows(logits, i * B, B); };

    DLoss out;
    const ad::Var core = adv_losses(cfg.loss_kind, part(0), part(1)).d;
    out.core = core.scalar();
    if (!regularize) {
        out.total = core;
        return out;
    }
    const ad::Var r1 = mean_sq_diff(part(3), part(0));
    const ad::Var r2 = mean_sq_diff(part(4), part(1));
    const ad::Var r3 = mean_sq_diff(part(5), part(2));
    out.r1 = r1.scalar();
    out.r2 = r2.scalar();
    out.r3 = r3.scalar();
    out.total = ad::add(core, ad::scale(ad::add(ad::add(r1, r2), r3), cfg.gamma / 3.0));
    return out;
}

GLoss g_loss_total(const Discriminator& disc, const ad::Var& x_fake, const ad::Mat& x_real, const ad::Mat& x_ref,
                   const CondBatch& cond, double lambda, LossKind kind) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("g_loss_total: lambda must lie in [0, 1]");
    const ad::Index B = cond.batch;
    const bool self_term = lambda > 0.0;
    std::vector<ad::Var> inputs{x_fake, ad::constant(x_real)};
    if (self_term) inputs.push_back(ad::constant(x_ref));
    const int copies = static_cast<int>(inputs.size());
    const ad::Var logits = disc.logit(ad::concat_rows(inputs), repeat_cond(cond, copies));
    const ad::Var d_fake = ad::slice_rows(logits, 0, B);

    GLoss out;
    const ad::Var real = generator_loss(kind, ad::slice_rows(logits, B, B), d_fake);
    out.real = real.scalar();
    if (!self_term) {
        out.total = real;
        return out;
    }
    const ad::Var self = generator_loss(kind, ad::slice_rows(logits, 2 * B, B), d_fake);
    out.self = self.scalar();
    out.total = ad::add(ad::scale(real, 1.0 - lambda), ad::scale(self, lambda));
    return out;
}

RefGenerator::RefGenerator(const VelocityNet& stage0) : net(stage0.clone()) { net.params().set_requires_grad(false); }

ad::Mat gen_reference(const RefGenerator& ref, const ad::Mat& z0, const CondBatch& cond) {
    NfeCounter counter;
    return sample(ref.net, ref.schedule, z0, cond, std::nullopt, counter);
}

void run_stage(VelocityNet& gen, Discriminator& disc, const RefGenerator& ref, const PreparedData& data,
               const StageConfig& cfg, std::uint64_t seed, const StageStepFn& on_step) {
    cfg.validate();
    Rng rng(derive_seed(seed, "pad.stage", static_cast<std::uint64_t>(cfg.k)));
    const AdamOptions gan{.lr = cfg.lr_gen, .beta1 = 0.0, .beta2 = 0.99, .max_grad_norm = 1.0};
    Adam gen_opt(gan);
    Adam backbone_opt({.lr = cfg.lr_disc, .beta1 = 0.0, .beta2 = 0.99, .max_grad_norm = 1.0});
    Adam head_opt({.lr = cfg.lr_disc, .beta1 = 0.0, .beta2 = 0.99, .max_grad_norm = 1.0});
    const ad::Index F = data.spec.frames, D = data.spec.feature_dim;

    for (long s = 0; s < cfg.steps; ++s) {
        const Schedule schedule = dynamic_sample(cfg.target_schedule, cfg.prev_final_t, s, cfg.warmup, rng);
        const Batch batch = draw_batch(data, static_cast<std::size_t>(cfg.batch), rng);
        const ad::Mat z0 = rng.normal_matrix(batch.size() * F, D);
        ParamSet last_finite = gen.params().clone();

        StageStepLog log{cfg.k, s, schedule.last()};
        try {
            const ad::Var x_hat = sample_with_final_step_grad(gen, schedule, z0, batch.cond);
            const ad::Mat x_ref = gen_reference(ref, z0, batch.cond);

            disc.zero_grad();
            const DLoss dl = d_loss_total(disc, batch.frames, x_hat.value(), x_ref, batch.cond, cfg, rng);
            if (!std::isfinite(dl.total.scalar())) throw DivergenceError("pad: discriminator loss diverged");
            ad::backward(dl.total);
            backbone_opt.step(disc.backbone().params());
            head_opt.step(disc.head());

            gen.params().zero_grad();
            GLoss gl;
            {
                FreezeGuard freeze_backbone(disc.backbone().params());
                FreezeGuard freeze_head(disc.head());
                gl = g_loss_total(disc, x_hat, batch.frames, x_ref, batch.cond, cfg.lambda, cfg.loss_kind);
                if (!std::isfinite(gl.total.scalar())) throw DivergenceError("pad: generator loss diverged");
                ad::backward(gl.total);
            }
            gen_opt.step(gen.params());
            if (!gen.params().all_finite() || !disc.backbone().params().all_finite() || !disc.head().all_finite())
                throw DivergenceError("pad: parameters diverged");

            log.loss_d = dl.total.scalar();
            log.loss_g = gl.total.scalar();
            log.self_share = log.loss_g != 0.0 ? cfg.lambda * gl.self / log.loss_g : 0.0;
            log.r1 = dl.r1;
            log.r2 = dl.r2;
            log.r3 = dl.r3;
        } catch (const TrainingDiverged&) {
            throw;
        } catch (const DivergenceError& e) {
            gen.params().assign(last_finite);
            throw TrainingDiverged(e.what(), std::move(last_finite), s);
        }
        if (on_step) on_step(log);
    }
    gen.params().zero_grad();
    disc.zero_grad();
}

VelocityNet run_progressive(const VelocityNet& stage0, const PreparedData& data, const std::vector<StageConfig>& cfgs,
                            std::uint64_t seed, const StageDoneFn& on_stage_done, const StageStepFn& on_step) {
    if (cfgs.empty()) throw ConfigError("progressive: no stages given");
    double prev = stage_schedule(0).last();
    int prev_k = 0;
    for (const auto& cfg : cfgs) {
        cfg.validate();
        if (cfg.k <= prev_k) throw ConfigError("progressive: stages must be in increasing order");
        if (cfg.prev_final_t != prev) throw ConfigError("progressive: prev_final_t must match the previous stage");
        prev = cfg.target_schedule.last();
        prev_k = cfg.k;
    }

    VelocityNet gen = stage0.clone();
    Rng head_rng(derive_seed(seed, "pad.disc_head"));
    Discriminator disc(stage0, head_rng);
    const RefGenerator ref(stage0);
    for (const auto& cfg : cfgs) {
        run_stage(gen, disc, ref, data, cfg, seed, on_step);
        if (on_stage_done) on_stage_done(cfg, gen);
    }
    return gen;
}

} // namespace sd
