#pragma once

// Retrieval evaluation on a held-out domain: Euclidean ranking, CMC at
// Rank-1 and mean average precision.

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace metadg {

struct RetrievalSplit {
    Eigen::MatrixXd query;
    std::vector<int> query_ids;
    Eigen::MatrixXd gallery;
    std::vector<int> gallery_ids;
};

struct RetrievalResult {
    double map = 0.0;
    double rank1 = 0.0;
    int n_query = 0;
    int n_gallery = 0;
};

// Gallery indices by ascending Euclidean distance to the query; ties break
// toward the smaller gallery index.
inline std::vector<int> rank_gallery(const Eigen::RowVectorXd& query, const Eigen::MatrixXd& gallery) {
    if (gallery.rows() == 0) throw std::invalid_argument("rank_gallery: empty gallery");
    std::vector<double> dist(static_cast<std::size_t>(gallery.rows()));
    for (Eigen::Index g = 0; g < gallery.rows(); ++g)
        dist[static_cast<std::size_t>(g)] = (gallery.row(g) - query).squaredNorm();
    std::vector<int> order(static_cast<std::size_t>(gallery.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
    });
    return order;
}

inline void validate_split(const RetrievalSplit& split) {
    if (split.query.rows() != static_cast<Eigen::Index>(split.query_ids.size()) ||
        split.gallery.rows() != static_cast<Eigen::Index>(split.gallery_ids.size()))
        throw std::invalid_argument("RetrievalSplit: id count mismatch");
    for (int qid : split.query_ids) {
        if (std::find(split.gallery_ids.begin(), split.gallery_ids.end(), qid) == split.gallery_ids.end())
            throw std::invalid_argument("RetrievalSplit: query identity absent from gallery");
    }
}

inline double cmc_rank1(const RetrievalSplit& split) {
    validate_split(split);
    int hits = 0;
    for (Eigen::Index q = 0; q < split.query.rows(); ++q) {
        auto order = rank_gallery(split.query.row(q), split.gallery);
        if (split.gallery_ids[static_cast<std::size_t>(order[0])] == split.query_ids[static_cast<std::size_t>(q)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(split.query.rows());
}

inline double mean_ap(const RetrievalSplit& split) {
    validate_split(split);
    double ap_sum = 0.0;
    for (Eigen::Index q = 0; q < split.query.rows(); ++q) {
        auto order = rank_gallery(split.query.row(q), split.gallery);
        const int qid = split.query_ids[static_cast<std::size_t>(q)];
        int n_rel = 0;
        double ap = 0.0;
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (split.gallery_ids[static_cast<std::size_t>(order[r])] == qid) {
                ++n_rel;
                ap += static_cast<double>(n_rel) / static_cast<double>(r + 1);
            }
        }
        ap_sum += ap / n_rel;
    }
    return ap_sum / static_cast<double>(split.query.rows());
}

inline RetrievalResult evaluate_split(const RetrievalSplit& split) {
    RetrievalResult r;
    r.map = mean_ap(split);
    r.rank1 = cmc_rank1(split);
    r.n_query = static_cast<int>(split.query.rows());
    r.n_gallery = static_cast<int>(split.gallery.rows());
    return r;
}

}  // namespace metadg
