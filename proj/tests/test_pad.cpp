// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/pad.hpp"
#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numbers>

using namespace sd;
using namespace sd::test;

namespace {

ad::Mat vstack(const ad::Mat& a, const ad::Mat& b) {
    ad::Mat out(a.rows() + b.rows(), a.cols());
    out << a, b;
    return out;
}

const double kLn2 = std::numbers::ln2;

// Discriminator on the miniature backbone with a random nonzero head.
Discriminator live_disc(std::uint64_t seed) {
    Rng rng(seed);
    Discriminator d(mini_model(seed), rng);
    d.head().at("fc2.w").mutable_value() = rng.normal_matrix(8, 1);
    d.head().at("fc2.b").mutable_value() = rng.normal_matrix(1, 1) * 0.1;
    return d;
}

double max_ks_deviation(std::vector<double> draws, double lo, double hi) {
    std::sort(draws.begin(), draws.end());
    const double n = static_cast<double>(draws.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < draws.size(); ++i) {
        const double cdf = (draws[i] - lo) / (hi - lo);
        worst = std::max({worst, std::abs(cdf - static_cast<double>(i) / n), std::abs(cdf - (i + 1.0) / n)});
    }
    return worst;
}

} // namespace

TEST_CASE("adversarial loss unit values") {
    const auto [d, g] = adv_losses(LossKind::r3gan, 0.4, 0.4);
    CHECK(std::abs(d - kLn2) < 1e-9);
    CHECK(std::abs(g - kLn2) < 1e-9);
    CHECK(adv_losses(LossKind::hinge, 2.0, -2.0).first == 0.0);
    CHECK(std::abs(adv_losses(LossKind::nonsaturating, 0.0, 0.0).first - 2 * kLn2) < 1e-12);
    CHECK(to_string(parse_loss_kind("hinge")) == "hinge");
    CHECK_THROWS_AS(parse_loss_kind("wgan"), ConfigError);
}

TEST_CASE("relativistic loss symmetry and lower bound") {
    for (double r = -3.0; r <= 3.0; r += 0.25)
        for (double f = -3.0; f <= 3.0; f += 0.25) {
            const auto [d, g] = adv_losses(LossKind::r3gan, r, f);
            CHECK(std::abs(d - adv_losses(LossKind::r3gan, f, r).second) < 1e-15);
            CHECK(d + g >= 2 * kLn2 - 1e-15);
            if (r == f) CHECK(std::abs(d + g - 2 * kLn2) < 1e-15);
            else CHECK(d + g > 2 * kLn2);
        }
}

TEST_CASE("generator losses decrease in the fake logit") {
    for (LossKind kind : {LossKind::r3gan, LossKind::nonsaturating, LossKind::hinge})
        for (double r : {-1.0, 0.0, 2.0})
            for (double f = -4.0; f < 4.0; f += 0.1) {
                const double h = 1e-4;
                const double slope =
                    (adv_losses(kind, r, f + h).second - adv_losses(kind, r, f - h).second) / (2 * h);
                CHECK(slope < 0.0);
            }
}

TEST_CASE("dynamic timestep sampling") {
    Rng rng(1);
    SECTION("warm-up perturbs only the final entry") {
        for (long s : {0L, 10L, 499L}) {
            const Schedule out = dynamic_sample(stage_schedule(1), 0.25, s, 500, rng);
            REQUIRE(out.size() == 3);
            CHECK(out[0] == 1.0);
            CHECK(out[1] == 0.75);
            CHECK(out.last() >= 0.25);
            CHECK(out.last() <= 0.5);
        }
    }
    SECTION("after warm-up the target is returned exactly") {
        CHECK(dynamic_sample(stage_schedule(1), 0.25, 500, 500, rng).steps() == std::vector<double>{1.0, 0.75, 0.5});
        CHECK(dynamic_sample(stage_schedule(3), 0.75, 0, 0, rng).steps() == std::vector<double>{1.0});
    }
    SECTION("warm-up draws are uniform over the gap") {
        const std::vector<std::pair<int, double>> stages{{1, 0.25}, {2, 0.5}, {3, 0.75}};
        for (const auto& [k, prev] : stages) {
            std::vector<double> draws;
            for (int i = 0; i < 10000; ++i) {
                const Schedule out = dynamic_sample(stage_schedule(k), prev, i % 500, 500, rng);
                for (std::size_t j = 1; j < out.size(); ++j) CHECK(out[j] < out[j - 1]);
                draws.push_back(out.last());
            }
            const double hi = stage_schedule(k).last();
            CHECK(*std::min_element(draws.begin(), draws.end()) >= prev);
            CHECK(*std::max_element(draws.begin(), draws.end()) <= hi);
            CHECK(max_ks_deviation(draws, prev, hi) < 0.02);
        }
    }
    SECTION("invalid lower bound") {
        CHECK_THROWS_AS(dynamic_sample(stage_schedule(2), 0.75, 0, 500, rng), ConfigError);
        CHECK_THROWS_AS(dynamic_sample(stage_schedule(2), 0.9, 0, 500, rng), ConfigError);
    }
}

TEST_CASE("stage schedules and defaults") {
    CHECK(stage_schedule(0).steps() == std::vector<double>{1.0, 0.75, 0.5, 0.25});
    CHECK(stage_schedule(1).steps() == std::vector<double>{1.0, 0.75, 0.5});
    CHECK(stage_schedule(2).steps() == std::vector<double>{1.0, 0.75});
    CHECK(stage_schedule(3).steps() == std::vector<double>{1.0});
    for (int k : {1, 2, 3}) {
        const StageConfig s = standard_stage(k);
        CHECK(s.warmup == 500);
        CHECK(s.gamma == 100.0);
        CHECK(s.sigma_r == 0.1);
        CHECK(s.lambda == 0.5);
        CHECK(s.loss_kind == LossKind::r3gan);
    }
    const auto chained = select_stages({}, {1, 2, 3});
    CHECK(chained[0].prev_final_t == 0.25);
    CHECK(chained[1].prev_final_t == 0.5);
    CHECK(chained[2].prev_final_t == 0.75);
    CHECK(select_stages({}, {3}).front().prev_final_t == 0.25);
    CHECK_THROWS_AS(select_stages({}, {2, 1}), ConfigError);
}

TEST_CASE("discriminator logits") {
    Rng rng(2);
    const VelocityNet backbone = mini_model(3);
    Discriminator fresh(backbone, rng);
    const CondBatch cond = random_cond(backbone.config(), 3, rng);
    const ad::Mat x = rng.normal_matrix(6, 2);
    CHECK(fresh.logit(ad::constant(x), cond).value().isZero(0.0));
    CHECK(fresh.logit(ad::constant(rng.normal_matrix(6, 2) * 10), cond).value().isZero(0.0));

    // One head update makes the logit input-sensitive.
    fresh.zero_grad();
    ad::backward(ad::mean(fresh.logit(ad::constant(x), cond)));
    Adam opt({.lr = 1e-2});
    opt.step(fresh.head());
    const ad::Mat a = fresh.logit(ad::constant(x), cond).value();
    const ad::Mat b = fresh.logit(ad::constant(x + 0.1 * rng.normal_matrix(6, 2)), cond).value();
    CHECK((a - b).cwiseAbs().maxCoeff() > 0.0);
    CHECK(a.rows() == 3);
    CHECK(a.allFinite());
}

TEST_CASE("discriminator input gradient matches finite differences") {
    const Discriminator d = live_disc(4);
    Rng rng(5);
    const CondBatch cond = random_cond(d.backbone().config(), 2, rng);
    ParamSet input;
    const ad::Var x = input.add("x", rng.normal_matrix(4, 2));
    const ad::Mat w = rng.normal_matrix(2, 1);
    const GradCheck g =
        check_gradients(input, [&] { return ad::sum(ad::mul(d.logit(x, cond), ad::constant(w))); });
    CHECK(g.analytic_norm > 0.0);
    CHECK(g.rel_error < 1e-4);
}

TEST_CASE("regularization penalties") {
    Rng rng(6);
    const Discriminator d = live_disc(7);
    const CondBatch cond = random_cond(d.backbone().config(), 3, rng);
    const ad::Mat x = rng.normal_matrix(6, 2);
    CHECK(reg_penalty(d, x, cond, 0.0, rng).scalar() == 0.0);
    CHECK(reg_penalty(d, x, cond, 0.1, rng).scalar() > 0.0);

    Discriminator zero(mini_model(8), rng);
    CHECK(reg_penalty(zero, x, cond, 0.1, rng).scalar() == 0.0);
    CHECK(reg_penalty(zero, x, cond, 5.0, rng).scalar() == 0.0);

    SECTION("linear discriminator matches the closed-form expectation") {
        // D(x) = w . x per sample, 2 samples of 4 entries; E = sigma^2 |w|^2.
        const ad::Mat w = rng.normal_matrix(1, 4);
        const auto linear = [&](const ad::Var& in) {
            ad::Mat out(in.rows() / 2, 1);
            for (ad::Index s = 0; s < out.rows(); ++s)
                out(s, 0) = in.value().middleRows(2 * s, 2).reshaped<Eigen::RowMajor>().transpose().dot(w.row(0));
            return ad::constant(out);
        };
        const double sigma = 0.1;
        const int n = 20000;
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double p = reg_penalty(linear, rng.normal_matrix(4, 2), sigma, rng).scalar();
            sum += p;
            sum2 += p * p;
        }
        const double mean = sum / n, se = std::sqrt((sum2 / n - mean * mean) / n);
        CHECK(std::abs(mean - sigma * sigma * w.squaredNorm()) < 3 * se);
    }
}

TEST_CASE("discriminator total loss") {
    Rng rng(9);
    Discriminator zero(mini_model(10), rng);
    const CondBatch cond = random_cond(zero.backbone().config(), 3, rng);
    const ad::Mat real = rng.normal_matrix(6, 2), fake = rng.normal_matrix(6, 2), ref = rng.normal_matrix(6, 2);
    StageConfig cfg = standard_stage(1);

    const DLoss z = d_loss_total(zero, real, fake, ref, cond, cfg, rng);
    CHECK(std::abs(z.total.scalar() - kLn2) < 1e-15);
    CHECK(z.r1 == 0.0);
    CHECK(z.r2 == 0.0);
    CHECK(z.r3 == 0.0);

    const Discriminator d = live_disc(11);
    cfg.gamma = 0.0;
    const DLoss core_only = d_loss_total(d, real, fake, ref, cond, cfg, rng);
    const ad::Var logits = d.logit(ad::constant(vstack(real, fake)),
                                   CondBatch{vstack(cond.context, cond.context), 6});
    const AdvLosses direct = adv_losses(LossKind::r3gan, ad::slice_rows(logits, 0, 3), ad::slice_rows(logits, 3, 3));
    CHECK(core_only.total.scalar() == direct.d.scalar());

    cfg.gamma = 100.0;
    const DLoss full = d_loss_total(d, real, fake, ref, cond, cfg, rng);
    CHECK(full.total.scalar() ==
          Catch::Approx(full.core + 100.0 / 3.0 * (full.r1 + full.r2 + full.r3)).epsilon(1e-12));
    CHECK(full.r1 > 0.0);
    CHECK(full.r3 > 0.0);
}

TEST_CASE("discriminator loss gradient matches finite differences") {
    Discriminator d = live_disc(12);
    Rng rng(13);
    const CondBatch cond = random_cond(d.backbone().config(), 2, rng);
    const ad::Mat real = rng.normal_matrix(4, 2), fake = rng.normal_matrix(4, 2), ref = rng.normal_matrix(4, 2);
    StageConfig cfg = standard_stage(2);
    cfg.gamma = 10.0;
    ParamSet all;
    for (const auto& [n, v] : d.backbone().params()) all.add("bb." + n, ad::Mat()) = v;
    for (const auto& [n, v] : d.head()) all.add("head." + n, ad::Mat()) = v;
    for (LossKind kind : {LossKind::r3gan, LossKind::nonsaturating}) {
        cfg.loss_kind = kind;
        const auto loss = [&] {
            Rng r(14);
            return d_loss_total(d, real, fake, ref, cond, cfg, r).total;
        };
        const GradCheck g = check_gradients(all, loss);
        CHECK(g.analytic_norm > 0.0);
        CHECK(g.rel_error < 1e-4);
    }
}

TEST_CASE("generator total loss") {
    Rng rng(15);
    Discriminator zero(mini_model(16), rng);
    const CondBatch cond = random_cond(zero.backbone().config(), 3, rng);
    const ad::Mat real = rng.normal_matrix(6, 2), ref = rng.normal_matrix(6, 2);
    const ad::Var fake = ad::constant(rng.normal_matrix(6, 2));
    CHECK(std::abs(g_loss_total(zero, fake, real, ref, cond, 1.0, LossKind::r3gan).total.scalar() - kLn2) < 1e-15);
    CHECK_THROWS_AS(g_loss_total(zero, fake, real, ref, cond, 1.5, LossKind::r3gan), ConfigError);
    CHECK_THROWS_AS(g_loss_total(zero, fake, real, ref, cond, -0.1, LossKind::r3gan), ConfigError);

    const Discriminator d = live_disc(17);
    for (LossKind kind : {LossKind::r3gan, LossKind::nonsaturating, LossKind::hinge}) {
        const GLoss zero_lambda = g_loss_total(d, fake, real, ref, cond, 0.0, kind);
        const CondBatch two{(ad::Mat(cond.context.rows() * 2, cond.context.cols()) << cond.context, cond.context)
                                .finished(),
                            6};
        const ad::Var logits = d.logit(ad::concat_rows({fake, ad::constant(real)}), two);
        const double real_term =
            adv_losses(kind, ad::slice_rows(logits, 3, 3), ad::slice_rows(logits, 0, 3)).g.scalar();
        CHECK(zero_lambda.total.scalar() == real_term);
        CHECK(zero_lambda.total.scalar() == zero_lambda.real);

        const GLoss mixed = g_loss_total(d, fake, real, ref, cond, 0.3, kind);
        CHECK(mixed.total.scalar() == Catch::Approx(0.7 * mixed.real + 0.3 * mixed.self).epsilon(1e-12));
    }
}

TEST_CASE("generator loss gradient through the final step matches finite differences") {
    const Discriminator d = live_disc(18);
    VelocityNet gen = mini_model(19);
    Rng rng(20);
    const CondBatch cond = random_cond(gen.config(), 2, rng);
    const ad::Mat z0 = rng.normal_matrix(4, 2), real = rng.normal_matrix(4, 2), ref = rng.normal_matrix(4, 2);
    const Schedule s = stage_schedule(1);
    const FinalStep prefix = prefix_state(gen, s, z0, cond);
    for (LossKind kind : {LossKind::r3gan, LossKind::nonsaturating}) {
        const auto loss = [&] {
            return g_loss_total(d, sample_with_final_step_grad(gen, s, z0, cond), real, ref, cond, 0.5, kind).total;
        };
        const auto oracle = [&] {
            return g_loss_total(d, final_step(gen, prefix, cond), real, ref, cond, 0.5, kind).total;
        };
        const GradCheck g = check_gradients(gen.params(), loss, oracle);
        CHECK(g.analytic_norm > 0.0);
        CHECK(g.rel_error < 1e-4);
    }
}

TEST_CASE("updates stay on their own side") {
    Discriminator d = live_disc(21);
    VelocityNet gen = mini_model(22);
    Rng rng(23);
    const CondBatch cond = random_cond(gen.config(), 2, rng);
    const ad::Mat z0 = rng.normal_matrix(4, 2), real = rng.normal_matrix(4, 2), ref = rng.normal_matrix(4, 2);
    const ad::Var x_hat = sample_with_final_step_grad(gen, stage_schedule(1), z0, cond);
    const auto untouched = [](const ParamSet& p) {
        for (const auto& [_, v] : p)
            if (v.grad().size() && !v.grad().isZero(0.0)) return false;
        return true;
    };

    ad::backward(d_loss_total(d, real, x_hat.value(), ref, cond, standard_stage(1), rng).total);
    CHECK(untouched(gen.params()));
    d.zero_grad();
    {
        FreezeGuard a(d.backbone().params()), b(d.head());
        ad::backward(g_loss_total(d, x_hat, real, ref, cond, 0.5, LossKind::r3gan).total);
    }
    CHECK(untouched(d.backbone().params()));
    CHECK(untouched(d.head()));
    CHECK_FALSE(untouched(gen.params()));
}

TEST_CASE("reference generator") {
    Rng rng(24);
    const CondBatch cond = random_cond(mini_net(), 2, rng);
    const ad::Mat z0 = rng.normal_matrix(4, 2);
    const RefGenerator zero(VelocityNet(mini_net(), rng));
    CHECK(gen_reference(zero, z0, cond) == z0);
    const RefGenerator ref(mini_model(25));
    CHECK(ref.schedule.steps() == stage_schedule(0).steps());
    CHECK(gen_reference(ref, z0, cond) == gen_reference(ref, z0, cond));
}

TEST_CASE("stage training loop") {
    const Dataset data = synthesize_dataset(mini_spec(32, 3));
    const PreparedData prepared = prepare(data, ContextConfig{3});
    const VelocityNet stage0 = mini_model(26);
    Rng rng(27);

    SECTION("zero steps leave the generator unchanged") {
        VelocityNet gen = stage0.clone();
        Discriminator disc(stage0, rng);
        const RefGenerator ref(stage0);
        StageConfig cfg = standard_stage(1);
        cfg.steps = 0;
        run_stage(gen, disc, ref, prepared, cfg, 1);
        CHECK(gen.params().bitwise_equal(stage0.params()));
    }
    SECTION("reference stays frozen and each side changes") {
        VelocityNet gen = stage0.clone();
        Discriminator disc(stage0, rng);
        const RefGenerator ref(stage0);
        const auto ref_fp = ref.net.params().fingerprint();
        const auto disc_fp = disc.fingerprint();
        StageConfig cfg = standard_stage(1);
        cfg.steps = 4;
        cfg.warmup = 2;
        cfg.batch = 4;
        std::vector<double> t_last;
        run_stage(gen, disc, ref, prepared, cfg, 1, [&](const StageStepLog& l) { t_last.push_back(l.t_last); });
        CHECK(ref.net.params().fingerprint() == ref_fp);
        CHECK(disc.fingerprint() != disc_fp);
        CHECK_FALSE(gen.params().bitwise_equal(stage0.params()));
        REQUIRE(t_last.size() == 4);
        CHECK(t_last[2] == 0.5);
        CHECK(t_last[3] == 0.5);
    }
    SECTION("progressive run emits the fixed schedules and ends at one step") {
        std::vector<StageConfig> cfgs = select_stages({}, {1, 2, 3});
        for (auto& c : cfgs) {
            c.steps = 2;
            c.warmup = 1;
            c.batch = 4;
        }
        std::vector<std::vector<double>> schedules;
        const VelocityNet out = run_progressive(stage0, prepared, cfgs, 2, [&](const StageConfig& c, const VelocityNet&) {
            schedules.push_back(c.target_schedule.steps());
        });
        CHECK(schedules == std::vector<std::vector<double>>{{1.0, 0.75, 0.5}, {1.0, 0.75}, {1.0}});
        NfeCounter c;
        const Batch b = make_batch(prepared, std::vector<std::size_t>{0, 1});
        sample(out, Schedule(schedules.back()), rng.normal_matrix(4, 2), b.cond, std::nullopt, c);
        CHECK(c.evals == 1);

        auto bad = cfgs;
        bad[1].prev_final_t = 0.25;
        CHECK_THROWS_AS(run_progressive(stage0, prepared, bad, 2), ConfigError);
    }
}
