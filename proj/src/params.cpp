// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/params.hpp"

#include "stepdistill/error.hpp"

#include <cmath>
#include <cstring>

namespace sd {

ad::Var& ParamSet::add(const std::string& name, ad::Mat init, bool requires_grad) {
    auto [it, inserted] = params_.emplace(name, ad::Var(std::move(init), requires_grad));
    if (!inserted) throw ConfigError("duplicate parameter name: " + name);
    return it->second;
}

const ad::Var& ParamSet::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

ad::Var& ParamSet::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += static_cast<std::size_t>(v.value().size());
    return n;
}

ParamSet ParamSet::clone() const {
    ParamSet out;
    for (const auto& [name, v] : params_) out.add(name, v.value(), v.requires_grad());
    return out;
}

void ParamSet::assign(const ParamSet& other) {
    if (other.size() != size()) throw ShapeError("parameter sets differ in size");
    for (auto& [name, v] : params_) {
        const ad::Mat& src = other.at(name).value();
        if (src.rows() != v.rows() || src.cols() != v.cols())
            throw ShapeError("parameter shape mismatch: " + name);
        v.mutable_value() = src;
    }
}

void ParamSet::zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
}

void ParamSet::set_requires_grad(bool on) {
    for (auto& [_, v] : params_) v.node()->requires_grad = on;
}

bool ParamSet::all_finite() const {
    for (const auto& [_, v] : params_)
        if (!v.value().allFinite()) return false;
    return true;
}

bool ParamSet::bitwise_equal(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (const auto& [name, v] : params_) {
        if (!other.contains(name)) return false;
        const ad::Mat& a = v.value();
        const ad::Mat& b = other.at(name).value();
        if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
        if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0)
            return false;
    }
    return true;
}

std::uint64_t ParamSet::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, v] : params_) {
        mix(name.data(), name.size());
        const ad::Index dims[2] = {v.rows(), v.cols()};
        mix(dims, sizeof(dims));
        mix(v.value().data(), sizeof(double) * static_cast<std::size_t>(v.value().size()));
    }
    return h;
}

double grad_norm(const ParamSet& params) {
    double sq = 0.0;
    for (const auto& [_, v] : params)
        if (v.grad().size() != 0) sq += v.grad().squaredNorm();
    return std::sqrt(sq);
}

void Adam::step(ParamSet& params) {
    ++t_;
    double clip = 1.0;
    if (opts_.max_grad_norm > 0.0) {
        const double norm = grad_norm(params);
        if (norm > opts_.max_grad_norm) clip = opts_.max_grad_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (const auto& [name, var] : params) {
        if (!var.requires_grad() || var.grad().size() == 0) continue;
        auto& mom = state_[name];
        if (mom.m.size() == 0) {
            mom.m = ad::Mat::Zero(var.rows(), var.cols());
            mom.v = ad::Mat::Zero(var.rows(), var.cols());
        }
        const ad::Mat g = var.grad() * clip;
        mom.m = opts_.beta1 * mom.m + (1.0 - opts_.beta1) * g;
        mom.v = opts_.beta2 * mom.v + (1.0 - opts_.beta2) * g.cwiseAbs2();
        ad::Var handle = var;
        handle.mutable_value().array() -=
            opts_.lr * (mom.m.array() / bc1) / ((mom.v.array() / bc2).sqrt() + opts_.eps);
    }
}

} // namespace sd
