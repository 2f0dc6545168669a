// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "stepdistill/autodiff.hpp"

#include <map>
#include <string>

namespace sd {

// Named trainable arrays, iterated in name-sorted order.
class ParamSet {
public:
    using Map = std::map<std::string, ad::Var>;

    ad::Var& add(const std::string& name, ad::Mat init, bool requires_grad = true);
    const ad::Var& at(const std::string& name) const;
    ad::Var& at(const std::string& name);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    Map::const_iterator begin() const { return params_.begin(); }
    Map::const_iterator end() const { return params_.end(); }
    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;

    // Independent copy of every value.
    ParamSet clone() const;
    // Overwrites values from `other`; names and shapes must match exactly.
    void assign(const ParamSet& other);
    void zero_grad();
    void set_requires_grad(bool on);
    bool all_finite() const;
    bool bitwise_equal(const ParamSet& other) const;
    // Digest of names, shapes and raw value bits.
    std::uint64_t fingerprint() const;

private:
    Map params_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Global gradient-norm clip; <= 0 disables it.
    double max_grad_norm = 0.0;
};

class Adam {
public:
    explicit Adam(AdamOptions opts = {}) : opts_(opts) {}
    // Applies one update from the gradients currently stored in `params`.
    void step(ParamSet& params);
    const AdamOptions& options() const { return opts_; }
    long steps() const { return t_; }

private:
    struct Moments {
        ad::Mat m;
        ad::Mat v;
    };
    AdamOptions opts_;
    std::map<std::string, Moments> state_;
    long t_ = 0;
};

double grad_norm(const ParamSet& params);

} // namespace sd
