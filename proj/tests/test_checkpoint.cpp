#include <catch2/catch_amalgamated.hpp>

#include <metadg/checkpoint.hpp>

#include <cstdio>
#include <filesystem>
#include <random>

using namespace metadg;
using ag::Mat;

TEST_CASE("checkpoint archive round-trips bit-exactly") {
    EncoderConfig cfg;
    cfg.input_dim = 5;
    cfg.hidden_dims = {7, 3};
    cfg.embed_dim = 4;
    std::mt19937_64 rng(3);
    auto params = EncoderParams::init(cfg, rng);

    // awkward values included on purpose
    params.learnable[0](0, 0) = 1.0 / 3.0;
    params.learnable[1](0, 1) = -0.0;
    params.buffers[0](0, 2) = 5e-324;  // smallest denormal
    params.buffers[1](0, 0) = 1e308;

    std::vector<IdentityMemory> mems(2);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int d = 0; d < 2; ++d) {
        mems[static_cast<std::size_t>(d)].domain_id = d;
        mems[static_cast<std::size_t>(d)].centroids = Mat(3, 4);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 4; ++j) mems[static_cast<std::size_t>(d)].centroids(i, j) = dist(rng);
    }

    const std::string path = (std::filesystem::temp_directory_path() / "metadg_ckpt_test.json").string();
    save_checkpoint({params, mems}, path);
    auto loaded = load_checkpoint(path);
    std::remove(path.c_str());

    REQUIRE(loaded.encoder.learnable.size() == params.learnable.size());
    for (std::size_t i = 0; i < params.learnable.size(); ++i) {
        CHECK(loaded.encoder.learnable[i].rows() == params.learnable[i].rows());
        CHECK(loaded.encoder.learnable[i] == params.learnable[i]);
    }
    for (std::size_t i = 0; i < params.buffers.size(); ++i) CHECK(loaded.encoder.buffers[i] == params.buffers[i]);
    REQUIRE(loaded.memories.size() == 2);
    for (std::size_t d = 0; d < 2; ++d) {
        CHECK(loaded.memories[d].centroids == mems[d].centroids);
        CHECK(loaded.memories[d].momentum == mems[d].momentum);
        CHECK(loaded.memories[d].temperature == mems[d].temperature);
    }
    CHECK(loaded.encoder.config.hidden_dims == cfg.hidden_dims);
}

TEST_CASE("manifest names line up with the layer layout") {
    EncoderConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden_dims = {4};
    cfg.embed_dim = 2;
    std::mt19937_64 rng(5);
    auto params = EncoderParams::init(cfg, rng);

    auto names = params.learnable_names();
    REQUIRE(names.size() == 8);
    CHECK(names[0] == "layer0.weight");
    CHECK(names[3] == "layer0.beta");
    CHECK(names[4] == "layer1.weight");
    auto bnames = params.buffer_names();
    CHECK(bnames[1] == "layer0.running_var");
    CHECK(bnames[2] == "layer1.running_mean");

    auto j = checkpoint_to_json({params, {}});
    CHECK(j.at("encoder").at("tensors").contains("layer1.gamma"));
    CHECK(j.at("encoder").at("tensors").at("layer0.weight").at("shape")[0] == 3);

    // corrupted payload is rejected
    auto bad = j;
    bad["encoder"]["tensors"]["layer0.weight"]["data"] = std::vector<std::string>{"0x1p+0"};
    CHECK_THROWS_AS(checkpoint_from_json(bad), std::runtime_error);
}
