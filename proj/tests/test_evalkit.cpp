#include <catch2/catch_amalgamated.hpp>

#include <metadg/evalkit.hpp>

#include <random>

#include "oracles.hpp"

using namespace metadg;
using Mat = Eigen::MatrixXd;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
    return m;
}

}  // namespace

TEST_CASE("rank_gallery basics") {
    Mat g1(1, 2);
    g1 << 3.0, 4.0;
    CHECK(rank_gallery(Eigen::RowVector2d(0, 0), g1) == std::vector<int>{0});

    Mat g(3, 2);
    g << 1, 0, 0, 0, 5, 5;
    Eigen::RowVector2d q(0, 0);
    auto order = rank_gallery(q, g);
    CHECK(order == std::vector<int>{1, 0, 2});

    // exact duplicate of the query ranks first
    Mat g2(3, 2);
    g2 << 2, 2, 0.5, -0.25, 9, 9;
    auto order2 = rank_gallery(Eigen::RowVector2d(0.5, -0.25), g2);
    CHECK(order2[0] == 1);

    Mat empty(0, 2);
    CHECK_THROWS_AS(rank_gallery(q, empty), std::invalid_argument);
}

TEST_CASE("ranking matches a brute-force sort oracle with the same tie-break") {
    std::mt19937_64 rng(3);
    for (int round = 0; round < 10; ++round) {
        Mat g = random_mat(5, 3, rng);
        g.row(3) = g.row(1);  // force a tie
        Eigen::RowVectorXd q = random_mat(1, 3, rng).row(0);

        std::vector<std::pair<double, int>> pairs;
        for (int i = 0; i < 5; ++i) pairs.emplace_back((g.row(i) - q).norm(), i);
        std::stable_sort(pairs.begin(), pairs.end(), [](auto& a, auto& b) { return a.first < b.first; });

        auto order = rank_gallery(q, g);
        for (int i = 0; i < 5; ++i) CHECK(order[static_cast<std::size_t>(i)] == pairs[static_cast<std::size_t>(i)].second);
    }
}

TEST_CASE("rank-1 closed forms") {
    RetrievalSplit split;
    split.query = Mat(2, 2);
    split.query << 0, 0, 10, 10;
    split.query_ids = {0, 1};
    split.gallery = Mat(4, 2);
    split.gallery << 0.1, 0, 9.9, 10, 5, 5, -5, -5;
    split.gallery_ids = {0, 1, 0, 1};
    CHECK(cmc_rank1(split) == 1.0);

    split.gallery_ids = {1, 0, 0, 1};  // nearest items now mismatch
    CHECK(cmc_rank1(split) == 0.0);

    // constructed half-correct split: queries 2 and 3 rank a wrong item first
    RetrievalSplit half;
    half.query = Mat(4, 1);
    half.query << 0, 1, 10, 20;
    half.query_ids = {0, 1, 2, 3};
    half.gallery = Mat(4, 1);
    half.gallery << 0.1, 1.1, 25.0, 11.0;
    half.gallery_ids = {0, 1, 2, 3};
    CHECK(cmc_rank1(half) == 0.5);
}

TEST_CASE("average precision closed forms") {
    // (+, -, +) -> (1/1 + 2/3) / 2
    RetrievalSplit split;
    split.query = Mat(1, 1);
    split.query << 0.0;
    split.query_ids = {7};
    split.gallery = Mat(3, 1);
    split.gallery << 1.0, 2.0, 3.0;
    split.gallery_ids = {7, 9, 7};
    CHECK(mean_ap(split) == Catch::Approx(5.0 / 6.0).margin(1e-6));

    // all relevant first -> 1.0
    split.gallery_ids = {7, 7, 9};
    Mat g(3, 1);
    g << 1.0, 2.0, 3.0;
    split.gallery = g;
    CHECK(mean_ap(split) == Catch::Approx(1.0).margin(1e-12));

    // single relevant at rank k -> 1/k
    for (int k = 1; k <= 3; ++k) {
        RetrievalSplit s;
        s.query = Mat(1, 1);
        s.query << 0.0;
        s.query_ids = {1};
        s.gallery = Mat(3, 1);
        s.gallery << 1.0, 2.0, 3.0;
        s.gallery_ids = {0, 0, 0};
        s.gallery_ids[static_cast<std::size_t>(k - 1)] = 1;
        CHECK(mean_ap(s) == Catch::Approx(1.0 / k).margin(1e-12));
    }
}

TEST_CASE("metrics match the brute-force oracle on random splits") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> n_ids(2, 4), n_gal(4, 10);
    for (int round = 0; round < 50; ++round) {
        const int ids = n_ids(rng), gal = n_gal(rng);
        RetrievalSplit split;
        split.query = random_mat(ids, 3, rng);
        for (int i = 0; i < ids; ++i) split.query_ids.push_back(i);
        split.gallery = random_mat(gal, 3, rng);
        std::uniform_int_distribution<int> pick(0, ids - 1);
        for (int i = 0; i < gal; ++i) split.gallery_ids.push_back(pick(rng));
        for (int i = 0; i < ids; ++i) split.gallery_ids[static_cast<std::size_t>(i)] = i;  // every id present

        auto oracle = oracles::brute_force_retrieval(split.query, split.query_ids, split.gallery, split.gallery_ids);
        CHECK(mean_ap(split) == oracle.map);
        CHECK(cmc_rank1(split) == oracle.rank1);
    }
}

TEST_CASE("metrics are invariant under rigid rotation and bounded in [0,1]") {
    std::mt19937_64 rng(29);
    RetrievalSplit split;
    split.query = random_mat(4, 3, rng);
    split.query_ids = {0, 1, 2, 3};
    split.gallery = random_mat(12, 3, rng);
    for (int i = 0; i < 12; ++i) split.gallery_ids.push_back(i % 4);

    const double map = mean_ap(split), r1 = cmc_rank1(split);
    CHECK(map >= 0.0);
    CHECK(map <= 1.0);
    CHECK(r1 >= 0.0);
    CHECK(r1 <= 1.0);

    Eigen::Vector3d v(0.6, -0.3, 1.1);
    v.normalize();
    Mat rot = Mat::Identity(3, 3) - 2.0 * v * v.transpose();
    RetrievalSplit rotated = split;
    rotated.query = (rot * split.query.transpose()).transpose();
    rotated.gallery = (rot * split.gallery.transpose()).transpose();
    CHECK(mean_ap(rotated) == Catch::Approx(map).margin(1e-12));
    CHECK(cmc_rank1(rotated) == r1);
}

TEST_CASE("duplicating the gallery keeps rank-1 under the documented tie-break") {
    std::mt19937_64 rng(31);
    RetrievalSplit split;
    split.query = random_mat(3, 2, rng);
    split.query_ids = {0, 1, 2};
    split.gallery = random_mat(9, 2, rng);
    for (int i = 0; i < 9; ++i) split.gallery_ids.push_back(i % 3);

    RetrievalSplit doubled = split;
    doubled.gallery = Mat(18, 2);
    doubled.gallery << split.gallery, split.gallery;
    doubled.gallery_ids = split.gallery_ids;
    doubled.gallery_ids.insert(doubled.gallery_ids.end(), split.gallery_ids.begin(), split.gallery_ids.end());

    CHECK(cmc_rank1(doubled) == cmc_rank1(split));
}

TEST_CASE("a query identity missing from the gallery is rejected") {
    RetrievalSplit split;
    split.query = Mat::Zero(1, 2);
    split.query_ids = {5};
    split.gallery = Mat::Ones(2, 2);
    split.gallery_ids = {1, 2};
    CHECK_THROWS_AS(mean_ap(split), std::invalid_argument);
    CHECK_THROWS_AS(cmc_rank1(split), std::invalid_argument);
}
