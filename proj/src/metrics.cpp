// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

namespace sd {

namespace {

constexpr double kRidge = 1e-6;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

void check_features(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.cols() != y.cols()) throw ShapeError("metric: feature dimensions differ");
    if (!x.allFinite() || !y.allFinite()) throw DataError("metric: non-finite features");
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b, bool& degenerate) {
    const Eigen::ArrayXd da = a.array() - a.mean();
    const Eigen::ArrayXd db = b.array() - b.mean();
    const double saa = (da * da).sum(), sbb = (db * db).sum();
    degenerate = !(saa > 0.0 && sbb > 0.0);
    if (degenerate) return 0.0;
    // sqrt(s * s) == s exactly, so identical series give exactly 1.
    return std::clamp((da * db).sum() / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Mean row-pair distance, all pairs or `pairs` random draws.
double mean_pair_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, bool exhaustive, std::size_t pairs,
                          Rng& rng) {
    double acc = 0.0;
    if (exhaustive) {
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < b.rows(); ++j) acc += (a.row(i) - b.row(j)).norm();
        return acc / static_cast<double>(a.rows() * b.rows());
    }
    for (std::size_t p = 0; p < pairs; ++p) {
        const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(a.rows())));
        const auto j = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(b.rows())));
        acc += (a.row(i) - b.row(j)).norm();
    }
    return acc / static_cast<double>(pairs);
}

} // namespace

GaussianFit fit_gaussian(const Eigen::MatrixXd& features) {
    if (features.rows() < 2) throw DataError("fit_gaussian: need at least two observations");
    GaussianFit fit;
    fit.n = static_cast<std::size_t>(features.rows());
    fit.mean = features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = features.rowwise() - fit.mean.transpose();
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);
    fit.cov = 0.5 * (cov + cov.transpose());
    return fit;
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
    if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) throw ShapeError("frechet: dimension mismatch");
    // (S1 S2)^(1/2) shares its trace with the symmetric (S1^(1/2) S2 S1^(1/2))^(1/2).
    const Eigen::MatrixXd root_a = psd_sqrt(a.cov);
    const Eigen::MatrixXd middle = root_a * b.cov * root_a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (middle + middle.transpose()), Eigen::EigenvaluesOnly);
    const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double trace = std::max(0.0, a.cov.trace() + b.cov.trace() - 2.0 * cross);
    return (a.mean - b.mean).squaredNorm() + trace;
}

double frechet_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    check_features(x, y);
    GaussianFit fx = fit_gaussian(x), fy = fit_gaussian(y);
    fx.cov.diagonal().array() += kRidge;
    fy.cov.diagonal().array() += kRidge;
    return frechet_distance(fx, fy);
}

double energy_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Rng& rng, const EnergyOptions& opts) {
    check_features(x, y);
    if (x.rows() < 2 || y.rows() < 2) throw DataError("energy_distance: need at least two observations per set");
    const auto n = static_cast<std::size_t>(x.rows()), m = static_cast<std::size_t>(y.rows());
    const bool exhaustive = std::max({n * m, n * n, m * m}) <= opts.max_pairs;
    const double xy = mean_pair_distance(x, y, exhaustive, opts.max_pairs, rng);
    const double xx = mean_pair_distance(x, x, exhaustive, opts.max_pairs, rng);
    const double yy = mean_pair_distance(y, y, exhaustive, opts.max_pairs, rng);
    return std::max(0.0, 2.0 * xy - xx - yy);
}

SyncResult sync_correlation(const std::vector<Eigen::MatrixXd>& frames, const std::vector<Eigen::MatrixXd>& conds) {
    if (frames.empty()) throw DataError("sync_correlation: empty batch");
    if (frames.size() != conds.size()) throw ShapeError("sync_correlation: frames and conds differ in count");
    SyncResult out;
    double acc = 0.0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const int F = static_cast<int>(frames[i].rows());
        if (F < 2) throw ShapeError("sync_correlation: need at least two frames");
        bool degenerate = false;
        acc += pearson(frame_align(conds[i], F), frames[i].col(0), degenerate);
        if (degenerate) {
            ++out.degenerate;
            std::cerr << "warning: sync_correlation: constant series in sample " << i << ", counted as 0\n";
        }
    }
    out.value = acc / static_cast<double>(frames.size());
    return out;
}

Eigen::MatrixXd flatten_samples(const ad::Mat& stacked, int frames) {
    const Eigen::Index n = stacked.rows() / frames, D = stacked.cols();
    Eigen::MatrixXd out(n, frames * D);
    for (Eigen::Index s = 0; s < n; ++s)
        for (int f = 0; f < frames; ++f) out.block(s, f * D, 1, D) = stacked.row(s * frames + f);
    return out;
}

MetricsReport measure(const VelocityField& model, const Schedule& schedule, const PreparedData& heldout,
                      const MeasureOptions& opts, std::uint64_t seed) {
    if (opts.n_eval < 64 || opts.batch < 1) throw ConfigError("measure: n_eval must be >= 64 and batch >= 1");
    if (heldout.size() < opts.n_eval) throw DataError("measure: held-out set smaller than n_eval");
    const int F = heldout.spec.frames, D = heldout.spec.feature_dim;

    Rng rng(derive_seed(seed, "metrics.measure"));
    std::vector<std::size_t> order(heldout.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    order.resize(opts.n_eval);

    ad::Mat generated(static_cast<ad::Index>(opts.n_eval) * F, D);
    ad::Mat real(static_cast<ad::Index>(opts.n_eval) * F, D);
    std::vector<double> per_sample_ms;
    NfeCounter total;
    long nfe_per_sample = 0;
    for (std::size_t start = 0; start < opts.n_eval; start += opts.batch) {
        const std::size_t count = std::min(opts.batch, opts.n_eval - start);
        const Batch batch = make_batch(heldout, std::span(order).subspan(start, count));
        const ad::Mat z0 = rng.normal_matrix(batch.size() * F, D);
        NfeCounter counter;
        const auto t0 = std::chrono::steady_clock::now();
        const ad::Mat x = sample(model, schedule, z0, batch.cond, opts.guidance, counter);
        const auto t1 = std::chrono::steady_clock::now();
        per_sample_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(count));
        nfe_per_sample = counter.evals;
        total.evals += counter.evals * static_cast<long>(count);
        generated.middleRows(static_cast<ad::Index>(start) * F, static_cast<ad::Index>(count) * F) = x;
        real.middleRows(static_cast<ad::Index>(start) * F, static_cast<ad::Index>(count) * F) = batch.frames;
    }

    const Eigen::MatrixXd gen_flat = flatten_samples(generated, F);
    const Eigen::MatrixXd real_flat = flatten_samples(real, F);
    std::vector<Eigen::MatrixXd> gen_frames, conds;
    for (std::size_t i = 0; i < opts.n_eval; ++i) {
        gen_frames.push_back(generated.middleRows(static_cast<ad::Index>(i) * F, F));
        conds.push_back(heldout.samples[order[i]]->cond);
    }

    MetricsReport report;
    report.fd = frechet_distance(gen_flat, real_flat);
    Rng energy_rng(derive_seed(seed, "metrics.energy"));
    report.energy = energy_distance(gen_flat, real_flat, energy_rng);
    report.sync = sync_correlation(gen_frames, conds).value;
    report.nfe = total.evals;
    report.nfe_per_sample = nfe_per_sample;
    std::nth_element(per_sample_ms.begin(), per_sample_ms.begin() + static_cast<long>(per_sample_ms.size() / 2),
                     per_sample_ms.end());
    report.wall_ms = per_sample_ms[per_sample_ms.size() / 2];
    return report;
}

} // namespace sd
