#pragma once

// Reverse-mode automatic differentiation on dense matrices.
//
// Every backward rule is itself built from graph ops, so the gradients
// returned by backward() are differentiable again. That property is what
// allows the outer training objective to differentiate through an inner
// optimizer step (gradient-of-gradient).
//
// Conventions:
//  - values are Eigen::MatrixXd; a scalar is a 1x1 matrix
//  - batches are row-major: one sample per row
//  - node ids increase monotonically with creation, so iterating reachable
//    nodes by descending id is a valid reverse topological order

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace metadg::ag {

using Mat = Eigen::MatrixXd;

class Node;
using Var = std::shared_ptr<Node>;

// Maps the upstream gradient to the contribution for one parent.
using Vjp = std::function<Var(const Var&)>;

class Node {
public:
    Mat value;
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::pair<Var, Vjp>> edges;
};

inline Var make_var(Mat value, bool requires_grad) {
    static std::atomic<std::uint64_t> counter{0};
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->id = ++counter;
    return n;
}

inline Var constant(Mat value) { return make_var(std::move(value), false); }

inline Var constant_scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return make_var(std::move(m), false);
}

inline Var leaf(Mat value) { return make_var(std::move(value), true); }

inline Var detach(const Var& a) { return constant(a->value); }

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    std::to_string(a->value.rows()) + "x" + std::to_string(a->value.cols()) + " vs " +
                                    std::to_string(b->value.rows()) + "x" + std::to_string(b->value.cols()));
    }
}

// ---- forward declarations used inside backward rules ----
inline Var add(const Var& a, const Var& b);
inline Var mul(const Var& a, const Var& b);
inline Var div(const Var& a, const Var& b);
inline Var neg(const Var& a);
inline Var smul(const Var& a, double c);
inline Var matmul(const Var& a, const Var& b);
inline Var transpose(const Var& a);
inline Var sum_all(const Var& a);
inline Var sum_rows(const Var& a);
inline Var sum_cols(const Var& a);
inline Var bcast_scalar(const Var& s, Eigen::Index rows, Eigen::Index cols);
inline Var bcast_rows(const Var& row, Eigen::Index rows);
inline Var bcast_cols(const Var& col, Eigen::Index cols);
inline Var take_per_row(const Var& a, std::vector<int> col_idx);
inline Var scatter_per_row(const Var& g, std::vector<int> col_idx, Eigen::Index cols);

// ---- elementwise ----

inline Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Var out = make_var(a->value + b->value, a->requires_grad || b->requires_grad);
    if (a->requires_grad) out->edges.emplace_back(a, [](const Var& g) { return g; });
    if (b->requires_grad) out->edges.emplace_back(b, [](const Var& g) { return g; });
    return out;
}

inline Var neg(const Var& a) {
    Var out = make_var(-a->value, a->requires_grad);
    if (a->requires_grad) out->edges.emplace_back(a, [](const Var& g) { return neg(g); });
    return out;
}

inline Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Var out = make_var(a->value - b->value, a->requires_grad || b->requires_grad);
    if (a->requires_grad) out->edges.emplace_back(a, [](const Var& g) { return g; });
    if (b->requires_grad) out->edges.emplace_back(b, [](const Var& g) { return neg(g); });
    return out;
}

inline Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Var out = make_var(a->value.cwiseProduct(b->value), a->requires_grad || b->requires_grad);
    if (a->requires_grad) out->edges.emplace_back(a, [b](const Var& g) { return mul(g, b); });
    if (b->requires_grad) out->edges.emplace_back(b, [a](const Var& g) { return mul(g, a); });
    return out;
}

inline Var div(const Var& a, const Var& b) {
    check_same_shape(a, b, "div");
    Var out = make_var(a->value.cwiseQuotient(b->value), a->requires_grad || b->requires_grad);
    if (a->requires_grad) out->edges.emplace_back(a, [b](const Var& g) { return div(g, b); });
    if (b->requires_grad) {
        std::weak_ptr<Node> self = out;
        out->edges.emplace_back(b, [self, b](const Var& g) {
            Var o = self.lock();
            return neg(div(mul(g, o), b));
        });
    }
    return out;
}

inline Var smul(const Var& a, double c) {
    Var out = make_var(a->value * c, a->requires_grad);
    if (a->requires_grad) out->edges.emplace_back(a, [c](const Var& g) { return smul(g, c); });
    return out;
}

inline Var sadd(const Var& a, double c) {
    Var out = make_var(a->value.array() + c, a->requires_grad);
    if (a->requires_grad) out->edges.emplace_back(a, [](const Var& g) { return g; });
    return out;
}

inline Var relu(const Var& a) {
    Var out = make_var(a->value.cwiseMax(0.0), a->requires_grad);
    if (a->requires_grad) {
        Mat mask = (a->value.array() > 0.0).cast<double>();
        out->edges.emplace_back(a, [mask](const Var& g) { return mul(g, constant(mask)); });
    }
    return out;
}

inline Var exp(const Var& a) {
    Var out = make_var(a->value.array().exp().matrix(), a->requires_grad);
    if (a->requires_grad) {
        std::weak_ptr<Node> self = out;
        out->edges.emplace_back(a, [self](const Var& g) { return mul(g, self.lock()); });
    }
    return out;
}

inline Var log(const Var& a) {
    Var out = make_var(a->value.array().log().matrix(), a->requires_grad);
    if (a->requires_grad) out->edges.emplace_back(a, [a](const Var& g) { return div(g, a); });
    return out;
}

inline Var sqrt(const Var& a) {
    Var out = make_var(a->value.array().sqrt().matrix(), a->requires_grad);
    if (a->requires_grad) {
        std::weak_ptr<Node> self = out;
        out->edges.emplace_back(a, [self](const Var& g) { return div(smul(g, 0.5), self.lock()); });
    }
    return out;
}

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
    if (a->value.cols() != b->value.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    Var out = make_var(a->value * b->value, a->requires_grad || b->requires_grad);
    if (a->requires_grad) out->edges.emplace_back(a, [b](const Var& g) { return matmul(g, transpose(b)); });
    if (b->requires_grad) out->edges.emplace_back(b, [a](const Var& g) { return matmul(transpose(a), g); });
    return out;
}

inline Var transpose(const Var& a) {
    Var out = make_var(a->value.transpose(), a->requires_grad);
    if (a->requires_grad) out->edges.emplace_back(a, [](const Var& g) { return transpose(g); });
    return out;
}

// ---- reductions and broadcasts ----

inline Var sum_all(const Var& a) {
    Mat s(1, 1);
    s(0, 0) = a->value.sum();
    Var out = make_var(std::move(s), a->requires_grad);
    if (a->requires_grad) {
        const Eigen::Index r = a->value.rows(), c = a->value.cols();
        out->edges.emplace_back(a, [r, c](const Var& g) { return bcast_scalar(g, r, c); });
    }
    return out;
}

inline Var sum_rows(const Var& a) {
    Var out = make_var(a->value.colwise().sum(), a->requires_grad);
    if (a->requires_grad) {
        const Eigen::Index r = a->value.rows();
        out->edges.emplace_back(a, [r](const Var& g) { return bcast_rows(g, r); });
    }
    return out;
}

inline Var sum_cols(const Var& a) {
    Var out = make_var(a->value.rowwise().sum(), a->requires_grad);
    if (a->requires_grad) {
        const Eigen::Index c = a->value.cols();
        out->edges.emplace_back(a, [c](const Var& g) { return bcast_cols(g, c); });
    }
    return out;
}

inline Var bcast_scalar(const Var& s, Eigen::Index rows, Eigen::Index cols) {
    if (s->value.size() != 1) throw std::invalid_argument("bcast_scalar: input must be 1x1");
    Var out = make_var(Mat::Constant(rows, cols, s->value(0, 0)), s->requires_grad);
    if (s->requires_grad) out->edges.emplace_back(s, [](const Var& g) { return sum_all(g); });
    return out;
}

inline Var bcast_rows(const Var& row, Eigen::Index rows) {
    if (row->value.rows() != 1) throw std::invalid_argument("bcast_rows: input must be 1xC");
    Var out = make_var(row->value.replicate(rows, 1), row->requires_grad);
    if (row->requires_grad) out->edges.emplace_back(row, [](const Var& g) { return sum_rows(g); });
    return out;
}

inline Var bcast_cols(const Var& col, Eigen::Index cols) {
    if (col->value.cols() != 1) throw std::invalid_argument("bcast_cols: input must be Rx1");
    Var out = make_var(col->value.replicate(1, cols), col->requires_grad);
    if (col->requires_grad) out->edges.emplace_back(col, [](const Var& g) { return sum_cols(g); });
    return out;
}

// out[i,0] = a(i, col_idx[i])
inline Var take_per_row(const Var& a, std::vector<int> col_idx) {
    const Eigen::Index r = a->value.rows(), c = a->value.cols();
    if (static_cast<Eigen::Index>(col_idx.size()) != r) throw std::invalid_argument("take_per_row: index count != rows");
    Mat v(r, 1);
    for (Eigen::Index i = 0; i < r; ++i) {
        const int j = col_idx[static_cast<std::size_t>(i)];
        if (j < 0 || j >= c) throw std::invalid_argument("take_per_row: column index out of range");
        v(i, 0) = a->value(i, j);
    }
    Var out = make_var(std::move(v), a->requires_grad);
    if (a->requires_grad) {
        out->edges.emplace_back(a, [col_idx, c](const Var& g) { return scatter_per_row(g, col_idx, c); });
    }
    return out;
}

inline Var scatter_per_row(const Var& g, std::vector<int> col_idx, Eigen::Index cols) {
    const Eigen::Index r = g->value.rows();
    if (g->value.cols() != 1) throw std::invalid_argument("scatter_per_row: input must be Rx1");
    Mat v = Mat::Zero(r, cols);
    for (Eigen::Index i = 0; i < r; ++i) v(i, col_idx[static_cast<std::size_t>(i)]) = g->value(i, 0);
    Var out = make_var(std::move(v), g->requires_grad);
    if (g->requires_grad) {
        out->edges.emplace_back(g, [col_idx](const Var& gg) { return take_per_row(gg, col_idx); });
    }
    return out;
}

// ---- composite helpers ----

inline Var mean_all(const Var& a) {
    return smul(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

inline Var mean_rows(const Var& a) {
    return smul(sum_rows(a), 1.0 / static_cast<double>(a->value.rows()));
}

// Row-wise L2 normalization with a small guard inside the square root.
inline Var l2_normalize_rows(const Var& a) {
    Var sq = sum_cols(mul(a, a));
    Var nrm = sqrt(sadd(sq, 1e-12));
    return div(a, bcast_cols(nrm, a->value.cols()));
}

// Mean cross-entropy over rows of `logits` against integer class labels.
// The shift by the row max is a constant, so gradients are the usual softmax ones.
inline Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
    const Eigen::Index r = logits->value.rows(), c = logits->value.cols();
    if (static_cast<Eigen::Index>(labels.size()) != r) throw std::invalid_argument("softmax_cross_entropy: label count != rows");
    Mat row_max = logits->value.rowwise().maxCoeff();
    Var shifted = sub(logits, bcast_cols(constant(row_max), c));
    Var lse = add(log(sum_cols(exp(shifted))), constant(row_max));  // Rx1
    Var target = take_per_row(logits, labels);                      // Rx1
    return mean_all(sub(lse, target));
}

struct BatchNormOut {
    Var normalized;
    Mat batch_mean;  // 1xC, detached
    Mat batch_var;   // 1xC, detached (biased)
};

// Training-mode batch normalization over rows; statistics are part of the graph.
inline BatchNormOut batchnorm_train(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Eigen::Index r = x->value.rows();
    if (r < 2) throw std::invalid_argument("batchnorm_train: batch size must be >= 2");
    Var mu = mean_rows(x);
    Var xc = sub(x, bcast_rows(mu, r));
    Var var = mean_rows(mul(xc, xc));
    Var inv_std = div(constant(Mat::Ones(1, x->value.cols())), sqrt(sadd(var, eps)));
    Var xhat = mul(xc, bcast_rows(inv_std, r));
    Var out = add(mul(xhat, bcast_rows(gamma, r)), bcast_rows(beta, r));
    return {out, mu->value, var->value};
}

// Inference-mode batch normalization using fixed running statistics.
inline Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta,
                          const Mat& running_mean, const Mat& running_var, double eps) {
    const Eigen::Index r = x->value.rows();
    Mat inv_std = (running_var.array() + eps).sqrt().inverse();
    Var xc = sub(x, bcast_rows(constant(running_mean), r));
    Var xhat = mul(xc, bcast_rows(constant(inv_std), r));
    return add(mul(xhat, bcast_rows(gamma, r)), bcast_rows(beta, r));
}

// ---- backward ----

class GradTable {
public:
    void set(const Node* n, Var g) { grads_[n] = std::move(g); }

    // nullptr when the node received no gradient (unreachable or zero path)
    Var find(const Node* n) const {
        auto it = grads_.find(n);
        return it == grads_.end() ? nullptr : it->second;
    }
    Var find(const Var& v) const { return find(v.get()); }

    Mat value_or_zero(const Var& v) const {
        Var g = find(v);
        if (g) return g->value;
        return Mat::Zero(v->value.rows(), v->value.cols());
    }

private:
    std::unordered_map<const Node*, Var> grads_;
};

// Reverse-mode sweep from a scalar root. The returned gradients are graph
// expressions, so they can be differentiated again.
inline GradTable backward(const Var& root) {
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be a scalar");

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& [parent, vjp] : n->edges) {
            if (seen.insert(parent.get()).second) stack.push_back(parent.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

    GradTable table;
    table.set(root.get(), constant(Mat::Ones(1, 1)));
    for (Node* n : order) {
        Var g = table.find(n);
        if (!g) continue;
        for (auto& [parent, vjp] : n->edges) {
            Var contrib = vjp(g);
            Var existing = table.find(parent);
            table.set(parent.get(), existing ? add(existing, contrib) : contrib);
        }
    }
    return table;
}

}  // namespace metadg::ag
