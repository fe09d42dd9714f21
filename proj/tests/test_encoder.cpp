#include <catch2/catch_amalgamated.hpp>

#include <metadg/encoder.hpp>

#include <random>

#include "oracles.hpp"

using namespace metadg;
using ag::Mat;

namespace {

Mat random_inputs(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
    return m;
}

EncoderParams tiny_encoder(std::uint64_t seed) {
    EncoderConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden_dims = {4, 3};
    cfg.embed_dim = 2;
    std::mt19937_64 rng(seed);
    return EncoderParams::init(cfg, rng);
}

}  // namespace

TEST_CASE("eval forward is deterministic") {
    auto params = tiny_encoder(1);
    Mat x = random_inputs(5, 3, 2);
    Mat a = embed_eval(params, x);
    Mat b = embed_eval(params, x);
    CHECK(a == b);
}

TEST_CASE("train-mode BN output matches batch-statistics oracle") {
    EncoderConfig cfg;
    cfg.input_dim = 4;
    cfg.hidden_dims = {};
    cfg.embed_dim = 4;
    std::mt19937_64 rng(3);
    auto params = EncoderParams::init(cfg, rng);
    params.learnable[2] = Mat::Constant(1, 4, 1.4);   // gamma
    params.learnable[3] = Mat::Constant(1, 4, -0.7);  // beta

    Mat x = random_inputs(64, 4, 9, 2.0);
    auto vars = lift_params(params.learnable, false);
    auto out = encoder_forward(cfg, vars, nullptr, nullptr, x, Mode::train);
    const Mat& y = out.raw->value;
    for (int j = 0; j < 4; ++j) {
        const double mean = y.col(j).mean();
        const double sd = std::sqrt((y.col(j).array() - mean).square().mean());
        CHECK(mean == Catch::Approx(-0.7).margin(1e-5));
        CHECK(sd == Catch::Approx(1.4).margin(1e-5));
    }
}

TEST_CASE("identity configuration reduces to batch standardization") {
    EncoderConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden_dims = {};
    cfg.embed_dim = 3;
    std::mt19937_64 rng(5);
    auto params = EncoderParams::init(cfg, rng);
    params.learnable[0] = Mat::Identity(3, 3);
    params.learnable[1].setZero();

    Mat x = random_inputs(16, 3, 21);
    auto vars = lift_params(params.learnable, false);
    auto out = encoder_forward(cfg, vars, nullptr, nullptr, x, Mode::train);
    for (int j = 0; j < 3; ++j) {
        const double mean = x.col(j).mean();
        const double sd = std::sqrt((x.col(j).array() - mean).square().mean() + EncoderParams::kBnEps);
        for (int i = 0; i < 16; ++i)
            CHECK(out.raw->value(i, j) == Catch::Approx((x(i, j) - mean) / sd).margin(1e-10));
    }
}

TEST_CASE("clone is an independent value copy") {
    auto params = tiny_encoder(7);
    params.buffers[1].setConstant(1.37);  // make running stats distinctive
    auto copy = params.clone();

    CHECK(copy.learnable == params.learnable);
    CHECK(copy.buffers == params.buffers);

    copy.learnable[0].array() += 1.0;
    CHECK(copy.learnable[0] != params.learnable[0]);
    CHECK(params.clone().clone().learnable == params.learnable);
    CHECK(copy.buffers[1] == params.buffers[1]);
}

TEST_CASE("normalized embeddings have unit rows") {
    auto params = tiny_encoder(11);
    Mat x = random_inputs(8, 3, 13);
    auto vars = lift_params(params.learnable, false);
    auto out = encoder_forward(params.config, vars, nullptr, nullptr, x, Mode::train);
    for (int i = 0; i < 8; ++i) CHECK(out.normed->value.row(i).norm() == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("train mode rejects a batch of one") {
    auto params = tiny_encoder(17);
    Mat x = random_inputs(1, 3, 19);
    auto vars = lift_params(params.learnable, false);
    CHECK_THROWS_AS(encoder_forward(params.config, vars, nullptr, nullptr, x, Mode::train), std::invalid_argument);
}

TEST_CASE("running statistics track batch statistics with momentum 0.1") {
    auto params = tiny_encoder(23);
    Mat x = random_inputs(32, 3, 29, 1.5);
    auto vars = lift_params(params.learnable, false);
    std::vector<Mat> buffers = params.buffers;
    auto out = encoder_forward(params.config, vars, nullptr, &buffers, x, Mode::train);
    (void)out;
    // first hidden layer pre-activation statistics
    Mat z = (x * params.learnable[0].eval()).rowwise() + params.learnable[1].row(0);
    Mat mean = z.colwise().mean();
    CHECK((buffers[0] - (0.9 * params.buffers[0] + 0.1 * mean)).norm() == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("every encoder parameter passes the finite-difference check") {
    auto params = tiny_encoder(31);
    Mat x = random_inputs(6, 3, 37);
    Mat c1 = random_inputs(6, 2, 41);
    Mat c2 = random_inputs(6, 2, 43);

    auto objective = [&](const std::vector<Mat>& learnable) {
        auto vars = lift_params(learnable, true);
        auto out = encoder_forward(params.config, vars, nullptr, nullptr, x, Mode::train);
        auto loss = ag::add(ag::mean_all(ag::mul(out.raw, ag::constant(c1))),
                            ag::mean_all(ag::mul(out.normed, ag::constant(c2))));
        return loss;
    };

    auto vars = lift_params(params.learnable, true);
    auto out = encoder_forward(params.config, vars, nullptr, nullptr, x, Mode::train);
    auto loss = ag::add(ag::mean_all(ag::mul(out.raw, ag::constant(c1))),
                        ag::mean_all(ag::mul(out.normed, ag::constant(c2))));
    auto table = ag::backward(loss);
    std::vector<Mat> analytic;
    for (const auto& v : vars) analytic.push_back(table.value_or_zero(v));

    auto fd = oracles::fd_gradients(params.learnable, [&](const std::vector<Mat>& p) {
        return objective(p)->value(0, 0);
    }, 1e-4);
    CHECK(oracles::max_rel_err(analytic, fd) < 1e-3);
}

TEST_CASE("eval mode uses running statistics, not batch statistics") {
    auto params = tiny_encoder(47);
    Mat x1 = random_inputs(8, 3, 53);
    Mat x2 = x1;
    x2.row(0).array() += 10.0;  // changes batch stats but not other rows' eval output

    Mat e1 = embed_eval(params, x1);
    Mat e2 = embed_eval(params, x2);
    for (int i = 1; i < 8; ++i) CHECK((e1.row(i) - e2.row(i)).norm() == Catch::Approx(0.0).margin(1e-12));
}
