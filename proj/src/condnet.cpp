// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/condnet.hpp"

#include "stepdistill/error.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace sd {

namespace {

constexpr int kPoolStride = 4;

ad::Mat scaled_normal(Rng& rng, int rows, int cols, double scale) {
    return rng.normal_matrix(rows, cols) * (scale / std::sqrt(static_cast<double>(rows)));
}

void add_linear(ParamSet& p, const std::string& name, int in, int out, Rng& rng, double scale = 1.0) {
    p.add(name + ".w", scale == 0.0 ? ad::Mat::Zero(in, out) : scaled_normal(rng, in, out, scale));
    p.add(name + ".b", ad::Mat::Zero(1, out));
}

ad::Var lin(const ParamSet& p, const std::string& name, const ad::Var& x) {
    return ad::linear(x, p.at(name + ".w"), p.at(name + ".b"));
}

ad::Var mlp2(const ParamSet& p, const std::string& name, const ad::Var& x) {
    return lin(p, name + ".fc2", ad::silu(lin(p, name + ".fc1", x)));
}

ad::Mat sinusoid_table(int rows, int width) {
    ad::Mat table(rows, width);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < width; ++c) {
            const double freq = std::pow(100.0, -static_cast<double>(c / 2 * 2) / width);
            table(r, c) = (c % 2 == 0) ? std::sin(r * freq) : std::cos(r * freq);
        }
    return table;
}

ad::Mat time_features(std::span<const double> t, int dim) {
    const int half = dim / 2;
    ad::Mat out(static_cast<ad::Index>(t.size()), dim);
    for (std::size_t b = 0; b < t.size(); ++b)
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            out(static_cast<ad::Index>(b), i) = std::sin(1000.0 * t[b] * freq);
            out(static_cast<ad::Index>(b), half + i) = std::cos(1000.0 * t[b] * freq);
        }
    return out;
}

} // namespace

void ContextConfig::validate() const {
    if (k < 1 || k % 2 == 0) throw ConfigError("context length k must be odd and >= 1");
}

ad::Mat build_context(const ad::Mat& a, const ContextConfig& cfg) {
    cfg.validate();
    const ad::Index L = a.rows(), C = a.cols();
    const int half = cfg.k / 2;
    ad::Mat out(L, cfg.k * C);
    for (ad::Index i = 0; i < L; ++i)
        for (int o = -half; o <= half; ++o) {
            const ad::Index src = std::clamp<ad::Index>(i + o, 0, L - 1);
            out.block(i, (o + half) * C, 1, C) = a.row(src);
        }
    return out;
}

CondBatch stack_contexts(const std::vector<const ad::Mat*>& contexts) {
    if (contexts.empty()) throw ShapeError("stack_contexts: empty batch");
    const ad::Index L = contexts.front()->rows(), W = contexts.front()->cols();
    CondBatch out{ad::Mat(L * static_cast<ad::Index>(contexts.size()), W), static_cast<ad::Index>(contexts.size())};
    for (std::size_t b = 0; b < contexts.size(); ++b) {
        if (contexts[b]->rows() != L || contexts[b]->cols() != W) throw ShapeError("stack_contexts: ragged batch");
        out.context.middleRows(static_cast<ad::Index>(b) * L, L) = *contexts[b];
    }
    return out;
}

void NetConfig::validate() const {
    if (frames < 1 || feature_dim < 1 || cond_channels < 1 || hidden < 1 || blocks < 0 || heads < 1 ||
        time_embed_dim < 2 || time_embed_dim % 2 != 0 || ffn_mult < 1)
        throw ConfigError("net config: dimensions out of range");
    if (hidden % heads != 0) throw ConfigError("net config: hidden must be divisible by heads");
    if (cond_len != kPoolStride * frames) throw ConfigError("net config: cond_len must equal 4 * frames");
    ContextConfig{context}.validate();
}

void to_json(nlohmann::json& j, const NetConfig& c) {
    j = nlohmann::json{{"frames", c.frames},       {"feature_dim", c.feature_dim},
                       {"cond_len", c.cond_len},   {"cond_channels", c.cond_channels},
                       {"context", c.context},     {"hidden", c.hidden},
                       {"blocks", c.blocks},       {"heads", c.heads},
                       {"time_embed_dim", c.time_embed_dim}, {"ffn_mult", c.ffn_mult}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
    NetConfig d;
    c.frames = j.value("frames", d.frames);
    c.feature_dim = j.value("feature_dim", d.feature_dim);
    c.cond_len = j.value("cond_len", d.cond_len);
    c.cond_channels = j.value("cond_channels", d.cond_channels);
    c.context = j.value("context", d.context);
    c.hidden = j.value("hidden", d.hidden);
    c.blocks = j.value("blocks", d.blocks);
    c.heads = j.value("heads", d.heads);
    c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
    c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
}

ParamSet init_velocity_params(const NetConfig& cfg, Rng& rng) {
    cfg.validate();
    const int H = cfg.hidden, W = cfg.context_width();
    ParamSet p;
    add_linear(p, "adapter.first.fc1", W, H, rng);
    add_linear(p, "adapter.first.fc2", H, H, rng);
    add_linear(p, "adapter.rest.fc1", W, H, rng);
    add_linear(p, "adapter.rest.fc2", H, H, rng);
    add_linear(p, "adapter.out", 2 * H, H, rng);

    add_linear(p, "embed.in", cfg.feature_dim, H, rng);
    add_linear(p, "embed.time.fc1", cfg.time_embed_dim, H, rng);
    add_linear(p, "embed.time.fc2", H, H, rng);
    const ad::Mat pos = sinusoid_table(cfg.frames, H);
    p.add("embed.frame_pos", pos);
    p.add("embed.cond_pos", pos);

    for (int b = 0; b < cfg.blocks; ++b) {
        const std::string blk = "block" + std::to_string(b);
        for (const char* attn : {".self", ".cross"}) {
            for (const char* proj : {".q", ".k", ".v"}) add_linear(p, blk + attn + proj, H, H, rng);
            add_linear(p, blk + attn + ".o", H, H, rng, 0.5);
        }
        add_linear(p, blk + ".ffn.fc1", H, cfg.ffn_mult * H, rng);
        add_linear(p, blk + ".ffn.fc2", cfg.ffn_mult * H, H, rng, 0.5);
    }
    add_linear(p, "head", H, cfg.feature_dim, rng, 0.0);
    return p;
}

ad::Var adapt(const ParamSet& params, const NetConfig& cfg, const CondBatch& cond) {
    const ad::Index L = cond.cond_len(), F = cfg.frames;
    if (L != kPoolStride * F) throw ShapeError("adapt: cond length must equal 4 * frames");
    if (cond.context.cols() != cfg.context_width()) throw ShapeError("adapt: context width mismatch");

    // Row 0 on its own; rows 1..L-1 pooled in windows of 4, the last window
    // completed by repeating row L-1.
    ad::Mat first(cond.batch, cond.context.cols());
    ad::Mat pooled(cond.batch * F, cond.context.cols());
    for (ad::Index b = 0; b < cond.batch; ++b) {
        const auto a = cond.context.middleRows(b * L, L);
        first.row(b) = a.row(0);
        for (ad::Index i = 0; i < F; ++i) {
            Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(a.cols());
            for (ad::Index j = 0; j < kPoolStride; ++j) acc += a.row(std::min<ad::Index>(1 + i * kPoolStride + j, L - 1));
            pooled.row(b * F + i) = acc / kPoolStride;
        }
    }
    const ad::Var first_enc = ad::repeat_rows(mlp2(params, "adapter.first", ad::constant(first)), F);
    const ad::Var rest_enc = mlp2(params, "adapter.rest", ad::constant(pooled));
    return lin(params, "adapter.out", ad::concat_cols(first_enc, rest_enc));
}

VelocityNet::VelocityNet(NetConfig cfg, ParamSet params) : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    if (!params_.contains("head.w") || !params_.contains("embed.frame_pos"))
        throw DataError("velocity net: parameter set is missing required entries");
    if (params_.at("embed.frame_pos").rows() != cfg_.frames || params_.at("head.w").rows() != cfg_.hidden)
        throw DataError("velocity net: parameter shapes disagree with config");
}

ad::Var VelocityNet::features(const ad::Var& z, std::span<const double> t, const CondBatch& cond) const {
    const ad::Index F = cfg_.frames;
    if (z.cols() != cfg_.feature_dim || z.rows() != cond.batch * F || static_cast<ad::Index>(t.size()) != cond.batch)
        throw ShapeError("velocity net: input shape mismatch");
    const ParamSet& p = params_;
    const ad::Var tokens = ad::add_tiled(adapt(p, cfg_, cond), p.at("embed.cond_pos"));
    const ad::Var temb = mlp2(p, "embed.time", ad::constant(time_features(t, cfg_.time_embed_dim)));

    ad::Var h = ad::add_tiled(lin(p, "embed.in", z), p.at("embed.frame_pos"));
    h = ad::add(h, ad::repeat_rows(temb, F));
    const ad::Var ctx = ad::layer_norm(tokens);
    for (int b = 0; b < cfg_.blocks; ++b) {
        const std::string blk = "block" + std::to_string(b);
        ad::Var x = ad::layer_norm(h);
        ad::Var a = ad::attention(lin(p, blk + ".self.q", x), lin(p, blk + ".self.k", x), lin(p, blk + ".self.v", x),
                                  cfg_.heads, F, F);
        h = ad::add(h, lin(p, blk + ".self.o", a));
        x = ad::layer_norm(h);
        a = ad::attention(lin(p, blk + ".cross.q", x), lin(p, blk + ".cross.k", ctx), lin(p, blk + ".cross.v", ctx),
                          cfg_.heads, F, F);
        h = ad::add(h, lin(p, blk + ".cross.o", a));
        h = ad::add(h, mlp2(p, blk + ".ffn", ad::layer_norm(h)));
    }
    return ad::layer_norm(h);
}

ad::Var VelocityNet::velocity(const ad::Var& z, std::span<const double> t, const CondBatch& cond) const {
    return lin(params_, "head", features(z, t, cond));
}

} // namespace sd
