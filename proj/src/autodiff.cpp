// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/autodiff.hpp"

#include "stepdistill/error.hpp"

#include <cmath>
#include <unordered_set>

namespace sd::ad {

namespace {

thread_local bool g_grad_enabled = true;

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch");
}

// Gradient accumulator for parent i, or nullptr if it does not need one.
Mat* parent_grad(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const Mat& parent_value(const Node& self, std::size_t i) { return self.parents[i]->value; }

double stable_log_sigmoid(double x) {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

Mat& Node::grad_buffer() {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    return grad;
}

Var::Var(Mat value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_) node_->grad.resize(0, 0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Mat value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    Var out;
    out.node_ = std::make_shared<Node>();
    out.node_->value = std::move(value);
    if (!g_grad_enabled) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node());
    out.node_->backward_fn = std::move(backward_fn);
    return out;
}

void backward(const Var& root) {
    if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward: root must be a scalar");
    if (!root.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer().array() += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
    }
}

Var constant(Mat value) { return Var(std::move(value), false); }

Var detach(const Var& v) { return Var(v.value(), false); }

Var add(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "add");
    return make_op(a.value() + b.value(), {a, b}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) *g += self.grad;
        if (Mat* g = parent_grad(self, 1)) *g += self.grad;
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "sub");
    return make_op(a.value() - b.value(), {a, b}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) *g += self.grad;
        if (Mat* g = parent_grad(self, 1)) *g -= self.grad;
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "mul");
    return make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) *g += self.grad.cwiseProduct(parent_value(self, 1));
        if (Mat* g = parent_grad(self, 1)) *g += self.grad.cwiseProduct(parent_value(self, 0));
    });
}

Var scale(const Var& a, double s) {
    return make_op(a.value() * s, {a}, [s](Node& self) {
        if (Mat* g = parent_grad(self, 0)) *g += self.grad * s;
    });
}

Var add_scalar(const Var& a, double s) {
    return make_op((a.value().array() + s).matrix(), {a}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) *g += self.grad;
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
    Mat out = a.value() * b.value();
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) g->noalias() += self.grad * parent_value(self, 1).transpose();
        if (Mat* g = parent_grad(self, 1)) g->noalias() += parent_value(self, 0).transpose() * self.grad;
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
        throw ShapeError("linear: shape mismatch");
    Mat out(x.rows(), w.cols());
    out.noalias() = x.value() * w.value();
    out.rowwise() += b.value().row(0);
    return make_op(std::move(out), {x, w, b}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) g->noalias() += self.grad * parent_value(self, 1).transpose();
        if (Mat* g = parent_grad(self, 1)) g->noalias() += parent_value(self, 0).transpose() * self.grad;
        if (Mat* g = parent_grad(self, 2)) *g += self.grad.colwise().sum();
    });
}

Var add_tiled(const Var& a, const Var& table) {
    const Index group = table.rows();
    if (group == 0 || a.rows() % group != 0 || a.cols() != table.cols())
        throw ShapeError("add_tiled: shape mismatch");
    Mat out = a.value();
    for (Index r = 0; r < out.rows(); r += group) out.middleRows(r, group) += table.value();
    return make_op(std::move(out), {a, table}, [group](Node& self) {
        if (Mat* g = parent_grad(self, 0)) *g += self.grad;
        if (Mat* g = parent_grad(self, 1))
            for (Index r = 0; r < self.grad.rows(); r += group) *g += self.grad.middleRows(r, group);
    });
}

Var repeat_rows(const Var& a, Index times) {
    if (times < 1) throw ShapeError("repeat_rows: times must be positive");
    Mat out(a.rows() * times, a.cols());
    for (Index r = 0; r < a.rows(); ++r)
        out.middleRows(r * times, times) = a.value().row(r).replicate(times, 1);
    return make_op(std::move(out), {a}, [times](Node& self) {
        if (Mat* g = parent_grad(self, 0))
            for (Index r = 0; r < g->rows(); ++r)
                g->row(r) += self.grad.middleRows(r * times, times).colwise().sum();
    });
}

Var mean_row_groups(const Var& a, Index group) {
    if (group < 1 || a.rows() % group != 0) throw ShapeError("mean_row_groups: shape mismatch");
    const Index n = a.rows() / group;
    Mat out(n, a.cols());
    for (Index r = 0; r < n; ++r) out.row(r) = a.value().middleRows(r * group, group).colwise().mean();
    return make_op(std::move(out), {a}, [group](Node& self) {
        if (Mat* g = parent_grad(self, 0)) {
            const double inv = 1.0 / static_cast<double>(group);
            for (Index r = 0; r < self.grad.rows(); ++r)
                g->middleRows(r * group, group).rowwise() += self.grad.row(r) * inv;
        }
    });
}

Var concat_cols(const Var& a, const Var& b) {
    if (a.rows() != b.rows()) throw ShapeError("concat_cols: row mismatch");
    Mat out(a.rows(), a.cols() + b.cols());
    out << a.value(), b.value();
    const Index split = a.cols();
    return make_op(std::move(out), {a, b}, [split](Node& self) {
        if (Mat* g = parent_grad(self, 0)) *g += self.grad.leftCols(split);
        if (Mat* g = parent_grad(self, 1)) *g += self.grad.rightCols(self.grad.cols() - split);
    });
}

Var slice_rows(const Var& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
    return make_op(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
        if (Mat* g = parent_grad(self, 0)) g->middleRows(start, count) += self.grad;
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != parts.front().cols()) throw ShapeError("concat_rows: column mismatch");
        rows += p.rows();
    }
    Mat out(rows, parts.front().cols());
    Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    return make_op(std::move(out), parts, [](Node& self) {
        Index r = 0;
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            const Index n = self.parents[i]->value.rows();
            if (Mat* g = parent_grad(self, i)) *g += self.grad.middleRows(r, n);
            r += n;
        }
    });
}

Var silu(const Var& a) {
    Mat out = a.value().unaryExpr([](double x) { return x * sigmoid(x); });
    return make_op(std::move(out), {a}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) {
            const Mat& x = parent_value(self, 0);
            *g += self.grad.binaryExpr(x, [](double gy, double v) {
                const double s = sigmoid(v);
                return gy * (s * (1.0 + v * (1.0 - s)));
            });
        }
    });
}

Var relu(const Var& a) {
    Mat out = a.value().cwiseMax(0.0);
    return make_op(std::move(out), {a}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) {
            const Mat& x = parent_value(self, 0);
            *g += self.grad.binaryExpr(x, [](double gy, double v) { return v > 0.0 ? gy : 0.0; });
        }
    });
}

Var square(const Var& a) {
    return make_op(a.value().cwiseAbs2(), {a}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) *g += 2.0 * self.grad.cwiseProduct(parent_value(self, 0));
    });
}

Var log_sigmoid(const Var& a) {
    Mat out = a.value().unaryExpr([](double x) { return stable_log_sigmoid(x); });
    return make_op(std::move(out), {a}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) {
            const Mat& x = parent_value(self, 0);
            *g += self.grad.binaryExpr(x, [](double gy, double v) { return gy * sigmoid(-v); });
        }
    });
}

Var layer_norm(const Var& a, double eps) {
    const Mat& x = a.value();
    Mat out(x.rows(), x.cols());
    Eigen::VectorXd inv_std(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        out.row(r) = (x.row(r).array() - mu) * inv_std(r);
    }
    return make_op(out, {a}, [inv_std](Node& self) {
        if (Mat* g = parent_grad(self, 0)) {
            const Mat& y = self.value;
            for (Index r = 0; r < y.rows(); ++r) {
                const auto gy = self.grad.row(r).array();
                const double mean_g = gy.mean();
                const double mean_gy = (gy * y.row(r).array()).mean();
                g->row(r).array() += inv_std(r) * (gy - mean_g - y.row(r).array() * mean_gy);
            }
        }
    });
}

Var sum(const Var& a) {
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return make_op(std::move(out), {a}, [](Node& self) {
        if (Mat* g = parent_grad(self, 0)) g->array() += self.grad(0, 0);
    });
}

Var mean(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.value().size());
    return scale(sum(a), inv);
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, Index q_group, Index kv_group) {
    const Index width = q.cols();
    if (heads < 1 || width % heads != 0 || k.cols() != width || v.cols() != width)
        throw ShapeError("attention: width mismatch");
    if (q_group < 1 || kv_group < 1 || q.rows() % q_group != 0 || k.rows() != v.rows() ||
        k.rows() % kv_group != 0 || q.rows() / q_group != k.rows() / kv_group)
        throw ShapeError("attention: group mismatch");
    const Index batch = q.rows() / q_group;
    const Index hd = width / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(batch * heads));
    Mat out(q.rows(), width);
    for (Index b = 0; b < batch; ++b) {
        for (Index h = 0; h < heads; ++h) {
            const auto qb = q.value().block(b * q_group, h * hd, q_group, hd);
            const auto kb = k.value().block(b * kv_group, h * hd, kv_group, hd);
            const auto vb = v.value().block(b * kv_group, h * hd, kv_group, hd);
            Mat s = (qb * kb.transpose()) * inv_sqrt;
            for (Index r = 0; r < s.rows(); ++r) {
                const double m = s.row(r).maxCoeff();
                s.row(r) = (s.row(r).array() - m).exp();
                s.row(r) /= s.row(r).sum();
            }
            out.block(b * q_group, h * hd, q_group, hd).noalias() = s * vb;
            (*probs)[static_cast<std::size_t>(b * heads + h)] = std::move(s);
        }
    }
    return make_op(std::move(out), {q, k, v}, [probs, batch, heads, hd, q_group, kv_group, inv_sqrt](Node& self) {
        Mat* gq = parent_grad(self, 0);
        Mat* gk = parent_grad(self, 1);
        Mat* gv = parent_grad(self, 2);
        const Mat& qv = parent_value(self, 0);
        const Mat& kv = parent_value(self, 1);
        const Mat& vv = parent_value(self, 2);
        for (Index b = 0; b < batch; ++b) {
            for (Index h = 0; h < heads; ++h) {
                const Mat& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
                const auto go = self.grad.block(b * q_group, h * hd, q_group, hd);
                if (gv) gv->block(b * kv_group, h * hd, kv_group, hd).noalias() += p.transpose() * go;
                if (!gq && !gk) continue;
                Mat dp = go * vv.block(b * kv_group, h * hd, kv_group, hd).transpose();
                const Eigen::VectorXd rowdot = (dp.cwiseProduct(p)).rowwise().sum();
                Mat ds = p.cwiseProduct(dp.colwise() - rowdot) * inv_sqrt;
                if (gq) gq->block(b * q_group, h * hd, q_group, hd).noalias() +=
                    ds * kv.block(b * kv_group, h * hd, kv_group, hd);
                if (gk) gk->block(b * kv_group, h * hd, kv_group, hd).noalias() +=
                    ds.transpose() * qv.block(b * q_group, h * hd, q_group, hd);
            }
        }
    });
}

} // namespace sd::ad
