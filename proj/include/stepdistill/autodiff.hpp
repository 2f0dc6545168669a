// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Var is a shared handle to a graph node. Ops record their parents and a
// backward closure while gradient recording is enabled; under NoGradGuard
// they produce plain constants. Batched sequence data is laid out with one
// token per row: a batch of B sequences of length F occupies B*F rows.

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace sd::ad {

using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Mat& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Mat value, bool requires_grad = false);

    const Mat& value() const { return node_->value; }
    Mat& mutable_value() { return node_->value; }
    // Empty matrix when no gradient has reached this node.
    const Mat& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    double scalar() const { return node_->value(0, 0); }
    bool defined() const { return static_cast<bool>(node_); }
    void zero_grad();

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
    friend Var make_op(Mat, std::vector<Var>, std::function<void(Node&)>);
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds a result node; records the graph only if recording is on and some
// parent requires a gradient.
Var make_op(Mat value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Seeds d(root)/d(root) = 1 for a 1x1 root and accumulates into every
// reachable node that requires a gradient.
void backward(const Var& root);

Var constant(Mat value);
Var detach(const Var& v);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
// x * w + b with b a 1 x out row.
Var linear(const Var& x, const Var& w, const Var& b);
// Adds a (group x cols) table to every consecutive block of `group` rows.
Var add_tiled(const Var& a, const Var& table);
// Repeats every row of `a` `times` times consecutively.
Var repeat_rows(const Var& a, Index times);
// Mean over each consecutive block of `group` rows.
Var mean_row_groups(const Var& a, Index group);
Var concat_cols(const Var& a, const Var& b);
Var slice_rows(const Var& a, Index start, Index count);
Var concat_rows(const std::vector<Var>& parts);

Var silu(const Var& a);
Var relu(const Var& a);
Var square(const Var& a);
Var log_sigmoid(const Var& a);
// Row-wise normalization to zero mean, unit variance; no affine terms.
Var layer_norm(const Var& a, double eps = 1e-5);

Var sum(const Var& a);
Var mean(const Var& a);

// Multi-head scaled dot-product attention, independent per sample.
// q: (B*q_group) x W, k and v: (B*kv_group) x W, W divisible by heads.
Var attention(const Var& q, const Var& k, const Var& v, int heads, Index q_group, Index kv_group);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

} // namespace sd::ad
