#pragma once

// Small statistical helpers for seed-group comparisons in ablation tables.

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace metadg {

inline double sample_mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("sample_mean: empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) throw std::invalid_argument("sample_variance: need at least 2 observations");
    const double m = sample_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

struct PairedTest {
    double mean_diff = 0.0;
    double t = 0.0;
    double p_one_sided = 1.0;  // H1: mean(a - b) > 0
    double p_two_sided = 1.0;
};

// Paired t-test on per-seed differences a[i] - b[i].
inline PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("paired_t_test: need paired samples, n >= 2");
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    PairedTest r;
    r.mean_diff = sample_mean(diff);
    const double sd = std::sqrt(sample_variance(diff));
    const double n = static_cast<double>(diff.size());
    if (sd == 0.0) {
        r.t = r.mean_diff > 0 ? std::numeric_limits<double>::infinity()
                              : (r.mean_diff < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
        r.p_one_sided = r.mean_diff > 0 ? 0.0 : 1.0;
        r.p_two_sided = r.mean_diff != 0 ? 0.0 : 1.0;
        return r;
    }
    r.t = r.mean_diff / (sd / std::sqrt(n));
    boost::math::students_t dist(n - 1.0);
    r.p_one_sided = boost::math::cdf(boost::math::complement(dist, r.t));
    r.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    return r;
}

struct WelchTest {
    double t = 0.0;
    double df = 1.0;
    double p_two_sided = 1.0;
};

// Welch's unequal-variance t-test for two independent seed groups.
inline WelchTest welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t_test: need n >= 2 per group");
    const double ma = sample_mean(a), mb = sample_mean(b);
    const double va = sample_variance(a) / static_cast<double>(a.size());
    const double vb = sample_variance(b) / static_cast<double>(b.size());
    WelchTest r;
    if (va + vb == 0.0) {
        r.t = 0.0;
        r.df = static_cast<double>(a.size() + b.size() - 2);
        r.p_two_sided = ma == mb ? 1.0 : 0.0;
        return r;
    }
    r.t = (ma - mb) / std::sqrt(va + vb);
    const double num = (va + vb) * (va + vb);
    const double den = va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1);
    r.df = num / den;
    boost::math::students_t dist(r.df);
    r.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    return r;
}

}  // namespace metadg
