#pragma once

// Test-only oracles, kept independent of the library code paths they check.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracles {

using Mat = Eigen::MatrixXd;

// Relative error with an absolute fallback for near-zero pairs.
inline double rel_err(double a, double b) {
    double scale = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / scale;
}

// Central finite differences of a scalar function over a set of matrices.
// `f` must recompute the full objective from scratch on each call.
inline std::vector<Mat> fd_gradients(std::vector<Mat> params,
                                     const std::function<double(const std::vector<Mat>&)>& f,
                                     double h = 1e-4) {
    std::vector<Mat> grads;
    grads.reserve(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
        Mat g = Mat::Zero(params[p].rows(), params[p].cols());
        for (Eigen::Index i = 0; i < params[p].rows(); ++i) {
            for (Eigen::Index j = 0; j < params[p].cols(); ++j) {
                const double orig = params[p](i, j);
                params[p](i, j) = orig + h;
                const double fp = f(params);
                params[p](i, j) = orig - h;
                const double fm = f(params);
                params[p](i, j) = orig;
                g(i, j) = (fp - fm) / (2.0 * h);
            }
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

inline double max_rel_err(const std::vector<Mat>& a, const std::vector<Mat>& b) {
    double worst = 0.0;
    for (std::size_t p = 0; p < a.size(); ++p) {
        for (Eigen::Index i = 0; i < a[p].rows(); ++i)
            for (Eigen::Index j = 0; j < a[p].cols(); ++j)
                worst = std::max(worst, rel_err(a[p](i, j), b[p](i, j)));
    }
    return worst;
}

// Average precision computed literally from the definition, walking the
// ranked list and accumulating precision at every relevant position.
inline double average_precision(const std::vector<bool>& relevant_in_rank_order) {
    int n_rel = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < relevant_in_rank_order.size(); ++r) {
        if (relevant_in_rank_order[r]) {
            ++n_rel;
            ap += static_cast<double>(n_rel) / static_cast<double>(r + 1);
        }
    }
    return n_rel == 0 ? 0.0 : ap / n_rel;
}

// Brute-force retrieval oracle: insertion sort on (distance, index) pairs,
// then metric accumulation from first principles.
struct RetrievalOracle {
    double rank1 = 0.0;
    double map = 0.0;
};

inline RetrievalOracle brute_force_retrieval(const Mat& query, const std::vector<int>& query_ids,
                                             const Mat& gallery, const std::vector<int>& gallery_ids) {
    const Eigen::Index nq = query.rows(), ng = gallery.rows();
    double hits = 0.0, ap_sum = 0.0;
    for (Eigen::Index q = 0; q < nq; ++q) {
        std::vector<std::pair<double, int>> order;
        for (Eigen::Index g = 0; g < ng; ++g) {
            order.emplace_back((query.row(q) - gallery.row(g)).norm(), static_cast<int>(g));
        }
        // insertion sort, strictly by (distance, index)
        for (std::size_t i = 1; i < order.size(); ++i) {
            auto key = order[i];
            std::size_t j = i;
            while (j > 0 && (order[j - 1].first > key.first ||
                             (order[j - 1].first == key.first && order[j - 1].second > key.second))) {
                order[j] = order[j - 1];
                --j;
            }
            order[j] = key;
        }
        if (gallery_ids[static_cast<std::size_t>(order[0].second)] == query_ids[static_cast<std::size_t>(q)]) hits += 1.0;
        std::vector<bool> rel;
        rel.reserve(order.size());
        for (auto& [d, g] : order) rel.push_back(gallery_ids[static_cast<std::size_t>(g)] == query_ids[static_cast<std::size_t>(q)]);
        ap_sum += average_precision(rel);
    }
    RetrievalOracle out;
    out.rank1 = hits / static_cast<double>(nq);
    out.map = ap_sum / static_cast<double>(nq);
    return out;
}

// Welch's t statistic and its degrees of freedom for two independent samples.
struct WelchResult {
    double t = 0.0;
    double df = 1.0;
};

inline WelchResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
    auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    auto var = [&](const std::vector<double>& v, double m) {
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s / static_cast<double>(v.size() - 1);
    };
    const double ma = mean(a), mb = mean(b);
    const double va = var(a, ma) / a.size(), vb = var(b, mb) / b.size();
    WelchResult r;
    const double denom = std::sqrt(va + vb);
    r.t = denom == 0.0 ? 0.0 : (ma - mb) / denom;
    const double num = (va + vb) * (va + vb);
    const double d = va * va / (a.size() - 1) + vb * vb / (b.size() - 1);
    r.df = d == 0.0 ? static_cast<double>(a.size() + b.size() - 2) : num / d;
    return r;
}

}  // namespace oracles
