#include <catch2/catch_amalgamated.hpp>

#include <metadg/metabn.hpp>

#include <random>

#include "oracles.hpp"

using namespace metadg;
using ag::Mat;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double mean = 0.0, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(mean, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
    return m;
}

}  // namespace

TEST_CASE("meta-train forward is plain BN and records the batch statistics") {
    MetaBNState state;
    Mat f = random_mat(48, 5, 3, 1.0, 2.0);
    ag::Var gamma = ag::constant(Mat::Constant(1, 5, 0.8));
    ag::Var beta = ag::constant(Mat::Constant(1, 5, 0.1));

    ag::Var out = metabn_metatrain_forward(state, ag::constant(f), gamma, beta);
    REQUIRE(state.saved_count() == 1);
    for (int j = 0; j < 5; ++j) {
        const double mean = out->value.col(j).mean();
        const double sd = std::sqrt((out->value.col(j).array() - mean).square().mean());
        CHECK(mean == Catch::Approx(0.1).margin(1e-5));
        CHECK(sd == Catch::Approx(0.8).margin(1e-5));
        CHECK(state.saved_means[0](0, j) == f.col(j).mean());  // exact
    }
}

TEST_CASE("a constant batch saves zero variance and stays finite") {
    MetaBNState state;
    Mat f = Mat::Constant(8, 3, 2.5);
    ag::Var out = metabn_metatrain_forward(state, ag::constant(f), ag::constant(Mat::Ones(1, 3)),
                                           ag::constant(Mat::Zero(1, 3)));
    CHECK(state.saved_vars[0].norm() == 0.0);
    CHECK(out->value.allFinite());
    CHECK(out->value.cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("sampled features follow the saved statistics") {
    MetaBNState state;
    state.saved_means.push_back(Mat::Constant(1, 4, 1.5));
    state.saved_vars.push_back(Mat::Constant(1, 4, 0.25));  // std 0.5

    SECTION("zero variance collapses every draw onto the mean") {
        MetaBNState zero;
        zero.saved_means.push_back(Mat::Constant(1, 4, -2.0));
        zero.saved_vars.push_back(Mat::Zero(1, 4));
        std::mt19937_64 rng(1);
        Mat z = metabn_sample_domain_features(zero, 0, 16, rng);
        CHECK((z.array() + 2.0).abs().maxCoeff() == 0.0);
    }

    SECTION("law of large numbers on 10000 draws") {
        std::mt19937_64 rng(7);
        const int b = 10000;
        Mat z = metabn_sample_domain_features(state, 0, b, rng);
        const double tol = 4.0 * 0.5 / std::sqrt(static_cast<double>(b));
        for (int j = 0; j < 4; ++j) CHECK(std::abs(z.col(j).mean() - 1.5) <= tol);
    }

    SECTION("fixed seed reproduces the draw") {
        std::mt19937_64 a(42), b(42);
        CHECK(metabn_sample_domain_features(state, 0, 8, a) == metabn_sample_domain_features(state, 0, 8, b));
    }

    SECTION("index out of range") {
        std::mt19937_64 rng(3);
        CHECK_THROWS_AS(metabn_sample_domain_features(state, 1, 4, rng), std::out_of_range);
    }
}

TEST_CASE("lambda endpoints reduce mixing to known forms") {
    MetaBNState state;
    Mat f1 = random_mat(16, 3, 11, 0.5, 1.5);
    Mat f2 = random_mat(16, 3, 13, -1.0, 0.5);
    ag::Var gamma = ag::constant(Mat::Constant(1, 3, 1.2));
    ag::Var beta = ag::constant(Mat::Constant(1, 3, -0.4));
    metabn_metatrain_forward(state, ag::constant(f1), gamma, beta);
    metabn_metatrain_forward(state, ag::constant(f2), gamma, beta);

    Mat ft = random_mat(16, 3, 17);

    SECTION("lambda = 1 equals plain BN of the meta-test features") {
        state.force_lambda = 1.0;
        std::mt19937_64 rl(1), rz(2);
        auto mixed = metabn_metatest_forward(state, ag::constant(ft), gamma, beta, rl, rz);
        REQUIRE(mixed.size() == 2);
        Mat plain = ag::batchnorm_train(ag::constant(ft), gamma, beta, state.eps).normalized->value;
        for (const auto& m : mixed) CHECK((m->value - plain).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-6));
    }

    SECTION("lambda = 0 normalizes the pure sampled features") {
        state.force_lambda = 0.0;
        std::mt19937_64 rl(1), rz(2);
        auto mixed = metabn_metatest_forward(state, ag::constant(ft), gamma, beta, rl, rz);
        std::mt19937_64 rz2(2);
        Mat z0 = metabn_sample_domain_features(state, 0, 16, rz2);
        Mat expect = ag::batchnorm_train(ag::constant(z0), gamma, beta, state.eps).normalized->value;
        CHECK((mixed[0]->value - expect).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-9));
    }
}

TEST_CASE("three source domains produce exactly two mixed feature sets") {
    MetaBNState state;
    ag::Var gamma = ag::constant(Mat::Ones(1, 3));
    ag::Var beta = ag::constant(Mat::Zero(1, 3));
    metabn_metatrain_forward(state, ag::constant(random_mat(8, 3, 19)), gamma, beta);
    metabn_metatrain_forward(state, ag::constant(random_mat(8, 3, 23)), gamma, beta);
    std::mt19937_64 rl(1), rz(2);
    auto mixed = metabn_metatest_forward(state, ag::constant(random_mat(8, 3, 29)), gamma, beta, rl, rz);
    CHECK(mixed.size() == 2);
}

TEST_CASE("every mixture is batch-standardized to (beta, |gamma|)") {
    // feature variances sit well above the BN epsilon, as they do at the
    // encoder's final slot; otherwise the 1e-5 tolerance is unreachable
    MetaBNState state;
    ag::Var gamma = ag::constant(Mat::Constant(1, 4, -1.3));  // negative scale: std is |gamma|
    ag::Var beta = ag::constant(Mat::Constant(1, 4, 0.6));
    metabn_metatrain_forward(state, ag::constant(random_mat(32, 4, 31, 2.0, 3.0)), gamma, beta);
    metabn_metatrain_forward(state, ag::constant(random_mat(32, 4, 37, -1.0, 2.0)), gamma, beta);

    std::mt19937_64 rl(5), rz(6);
    auto mixed = metabn_metatest_forward(state, ag::constant(random_mat(32, 4, 41, 0.0, 2.0)), gamma, beta, rl, rz);
    for (const auto& m : mixed) {
        for (int j = 0; j < 4; ++j) {
            const double mean = m->value.col(j).mean();
            const double sd = std::sqrt((m->value.col(j).array() - mean).square().mean());
            CHECK(mean == Catch::Approx(0.6).margin(1e-5));
            CHECK(sd == Catch::Approx(1.3).margin(1e-5));
        }
    }
}

TEST_CASE("mixing with one's own statistics is a no-op up to normalization") {
    // feature variance well above the BN epsilon, so the lambda-scaled
    // denominator agrees with the plain one at the checked tolerance
    Mat ft = random_mat(24, 3, 43, 0.0, 4.0);
    MetaBNState state;
    ag::Var gamma = ag::constant(Mat::Constant(1, 3, 0.9));
    ag::Var beta = ag::constant(Mat::Constant(1, 3, 0.2));
    state.saved_means.push_back(ft.colwise().mean());
    state.saved_vars.push_back(Mat::Zero(1, 3));
    state.force_lambda = 0.37;

    std::mt19937_64 rl(1), rz(2);
    auto mixed = metabn_metatest_forward(state, ag::constant(ft), gamma, beta, rl, rz);
    Mat plain = ag::batchnorm_train(ag::constant(ft), gamma, beta, state.eps).normalized->value;
    CHECK((mixed[0]->value - plain).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("meta-test gradients flow through the original features only") {
    MetaBNState state;
    ag::Var gamma = ag::constant(Mat::Constant(1, 3, 1.1));
    ag::Var beta = ag::constant(Mat::Constant(1, 3, -0.2));
    metabn_metatrain_forward(state, ag::constant(random_mat(8, 3, 47, 0.5)), gamma, beta);
    metabn_metatrain_forward(state, ag::constant(random_mat(8, 3, 53, -0.5)), gamma, beta);
    state.force_lambda = 0.6;

    Mat ft = random_mat(8, 3, 59);
    Mat weights = random_mat(8, 3, 61);

    auto objective = [&](const Mat& f) {
        std::mt19937_64 rl(9), rz(10);  // identical draws on every call
        MetaBNState s = state;
        ag::Var v = ag::leaf(f);
        auto mixed = metabn_metatest_forward(s, v, gamma, beta, rl, rz);
        ag::Var loss = ag::mean_all(ag::mul(mixed[0], ag::constant(weights)));
        loss = ag::add(loss, ag::mean_all(ag::mul(mixed[1], ag::constant(weights))));
        return std::pair{loss, v};
    };

    auto [loss, v] = objective(ft);
    auto table = ag::backward(loss);
    auto fd = oracles::fd_gradients({ft}, [&](const std::vector<Mat>& p) {
        return objective(p[0]).first->value(0, 0);
    });
    CHECK(oracles::max_rel_err({table.value_or_zero(v)}, fd) < 1e-3);
}

TEST_CASE("meta-test without saved statistics is an episode misuse") {
    MetaBNState state;
    std::mt19937_64 rl(1), rz(2);
    ag::Var gamma = ag::constant(Mat::Ones(1, 3));
    ag::Var beta = ag::constant(Mat::Zero(1, 3));
    CHECK_THROWS_AS(metabn_metatest_forward(state, ag::constant(random_mat(4, 3, 67)), gamma, beta, rl, rz),
                    std::logic_error);
}
