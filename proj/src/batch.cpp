// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/batch.hpp"

namespace sd {

PreparedData prepare(const Dataset& data, const ContextConfig& ctx) {
    PreparedData out;
    out.spec = data.spec;
    out.samples.reserve(data.samples.size());
    out.contexts.reserve(data.samples.size());
    for (const auto& s : data.samples) {
        out.samples.push_back(&s);
        out.contexts.push_back(build_context(s.cond, ctx));
    }
    return out;
}

Batch make_batch(const PreparedData& data, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ShapeError("make_batch: empty batch");
    const ad::Index F = data.spec.frames, D = data.spec.feature_dim;
    Batch b;
    b.indices.assign(indices.begin(), indices.end());
    b.frames.resize(F * static_cast<ad::Index>(indices.size()), D);
    std::vector<const ad::Mat*> ctx;
    ctx.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t idx = indices[i];
        if (idx >= data.size()) throw ShapeError("make_batch: index out of range");
        b.frames.middleRows(static_cast<ad::Index>(i) * F, F) = data.samples[idx]->frames;
        ctx.push_back(&data.contexts[idx]);
    }
    b.cond = stack_contexts(ctx);
    return b;
}

Batch draw_batch(const PreparedData& data, std::size_t size, Rng& rng) {
    std::vector<std::size_t> idx(size);
    for (auto& i : idx) i = rng.index(data.size());
    return make_batch(data, idx);
}

} // namespace sd
