#pragma once

// A small MLP feature encoder: [Linear -> BN -> ReLU] per hidden layer,
// then a final Linear followed by the last normalization slot. That slot is
// plain BN outside episodic training and becomes MetaBN during it.

#include <metadg/autograd.hpp>
#include <metadg/metabn.hpp>

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace metadg {

struct EncoderConfig {
    int input_dim = 32;
    std::vector<int> hidden_dims = {64, 64};
    int embed_dim = 32;
    bool use_metabn_last = true;

    int n_layers() const { return static_cast<int>(hidden_dims.size()) + 1; }

    void validate() const {
        if (input_dim < 1 || embed_dim < 2) throw std::invalid_argument("EncoderConfig: dims out of range");
        for (int h : hidden_dims)
            if (h < 1) throw std::invalid_argument("EncoderConfig: hidden dims must be positive");
    }
};

// Flat, enumerable parameter collection. Learnables are laid out per layer
// as [W, b, gamma, beta]; buffers as [running_mean, running_var]. The final
// layer comes last. Plain value semantics make Alg-style model copies a
// struct copy.
struct EncoderParams {
    EncoderConfig config;
    std::vector<ag::Mat> learnable;
    std::vector<ag::Mat> buffers;

    static constexpr double kBnEps = 1e-5;
    static constexpr double kBnMomentum = 0.1;

    static EncoderParams init(const EncoderConfig& cfg, std::mt19937_64& rng) {
        cfg.validate();
        EncoderParams p;
        p.config = cfg;
        std::normal_distribution<double> unit(0.0, 1.0);
        int in = cfg.input_dim;
        auto push_layer = [&](int out, bool relu_gain) {
            const double std = std::sqrt((relu_gain ? 2.0 : 1.0) / static_cast<double>(in));
            ag::Mat w(in, out);
            for (int i = 0; i < in; ++i)
                for (int j = 0; j < out; ++j) w(i, j) = unit(rng) * std;
            p.learnable.push_back(std::move(w));
            p.learnable.push_back(ag::Mat::Zero(1, out));       // b
            p.learnable.push_back(ag::Mat::Ones(1, out));       // gamma
            p.learnable.push_back(ag::Mat::Zero(1, out));       // beta
            p.buffers.push_back(ag::Mat::Zero(1, out));         // running mean
            p.buffers.push_back(ag::Mat::Ones(1, out));         // running var
            in = out;
        };
        for (int h : cfg.hidden_dims) push_layer(h, true);
        push_layer(cfg.embed_dim, false);
        return p;
    }

    EncoderParams clone() const { return *this; }

    std::vector<std::string> learnable_names() const {
        static const char* kinds[] = {"weight", "bias", "gamma", "beta"};
        std::vector<std::string> names;
        for (int l = 0; l < config.n_layers(); ++l)
            for (const char* k : kinds) names.push_back("layer" + std::to_string(l) + "." + k);
        return names;
    }
    std::vector<std::string> buffer_names() const {
        std::vector<std::string> names;
        for (int l = 0; l < config.n_layers(); ++l) {
            names.push_back("layer" + std::to_string(l) + ".running_mean");
            names.push_back("layer" + std::to_string(l) + ".running_var");
        }
        return names;
    }
};

inline std::vector<ag::Var> lift_params(const std::vector<ag::Mat>& mats, bool requires_grad = true) {
    std::vector<ag::Var> vars;
    vars.reserve(mats.size());
    for (const auto& m : mats) vars.push_back(requires_grad ? ag::leaf(m) : ag::constant(m));
    return vars;
}

enum class Mode { train, eval };

enum class MetaBNOp { none, record, mix };

struct MetaBNHook {
    MetaBNOp op = MetaBNOp::none;
    MetaBNState* state = nullptr;
    std::mt19937_64* rng_lambda = nullptr;
    std::mt19937_64* rng_z = nullptr;
};

struct ForwardOut {
    ag::Var raw;     // final-slot output, feeds triplet distances
    ag::Var normed;  // L2-normalized rows, feeds memory similarity
    std::vector<ag::Var> mixed_raw;     // MetaBN mixtures (mix mode only)
    std::vector<ag::Var> mixed_normed;  // their L2-normalized counterparts
};

// `params` must follow the EncoderParams learnable layout. In train mode,
// running statistics are written to `buffers` when it is non-null; eval
// mode reads them and never writes.
inline ForwardOut encoder_forward(const EncoderConfig& cfg, const std::vector<ag::Var>& params,
                                  const std::vector<ag::Mat>* buffers_in, std::vector<ag::Mat>* buffers_out,
                                  const ag::Mat& inputs, Mode mode, const MetaBNHook& hook = {}) {
    if (inputs.cols() != cfg.input_dim) throw std::invalid_argument("encoder_forward: input width != input_dim");
    if (mode == Mode::train && inputs.rows() < 2)
        throw std::invalid_argument("encoder_forward: train mode needs batch size >= 2");
    if (mode == Mode::eval && buffers_in == nullptr)
        throw std::invalid_argument("encoder_forward: eval mode needs running statistics");
    if (static_cast<int>(params.size()) != 4 * cfg.n_layers())
        throw std::invalid_argument("encoder_forward: parameter count mismatch");

    const Eigen::Index batch = inputs.rows();
    auto update_running = [&](int layer, const ag::Mat& mean, const ag::Mat& var) {
        if (buffers_out == nullptr) return;
        ag::Mat& rm = (*buffers_out)[static_cast<std::size_t>(2 * layer)];
        ag::Mat& rv = (*buffers_out)[static_cast<std::size_t>(2 * layer + 1)];
        rm = (1.0 - EncoderParams::kBnMomentum) * rm + EncoderParams::kBnMomentum * mean;
        rv = (1.0 - EncoderParams::kBnMomentum) * rv + EncoderParams::kBnMomentum * var;
    };

    ag::Var h = ag::constant(inputs);
    const int n_hidden = static_cast<int>(cfg.hidden_dims.size());
    for (int l = 0; l < n_hidden; ++l) {
        const auto& w = params[static_cast<std::size_t>(4 * l)];
        const auto& b = params[static_cast<std::size_t>(4 * l + 1)];
        const auto& gamma = params[static_cast<std::size_t>(4 * l + 2)];
        const auto& beta = params[static_cast<std::size_t>(4 * l + 3)];
        ag::Var z = ag::add(ag::matmul(h, w), ag::bcast_rows(b, batch));
        ag::Var bn;
        if (mode == Mode::train) {
            auto r = ag::batchnorm_train(z, gamma, beta, EncoderParams::kBnEps);
            update_running(l, r.batch_mean, r.batch_var);
            bn = r.normalized;
        } else {
            bn = ag::batchnorm_eval(z, gamma, beta, (*buffers_in)[static_cast<std::size_t>(2 * l)],
                                    (*buffers_in)[static_cast<std::size_t>(2 * l + 1)], EncoderParams::kBnEps);
        }
        h = ag::relu(bn);
    }

    const int fl = n_hidden;
    const auto& wf = params[static_cast<std::size_t>(4 * fl)];
    const auto& bf = params[static_cast<std::size_t>(4 * fl + 1)];
    const auto& gf = params[static_cast<std::size_t>(4 * fl + 2)];
    const auto& betaf = params[static_cast<std::size_t>(4 * fl + 3)];
    ag::Var features = ag::add(ag::matmul(h, wf), ag::bcast_rows(bf, batch));  // F entering the last slot

    ForwardOut out;
    if (mode == Mode::eval) {
        out.raw = ag::batchnorm_eval(features, gf, betaf, (*buffers_in)[static_cast<std::size_t>(2 * fl)],
                                     (*buffers_in)[static_cast<std::size_t>(2 * fl + 1)], EncoderParams::kBnEps);
    } else if (hook.op == MetaBNOp::record) {
        out.raw = metabn_metatrain_forward(*hook.state, features, gf, betaf);
        update_running(fl, hook.state->saved_means.back(), hook.state->saved_vars.back());
    } else {
        auto r = ag::batchnorm_train(features, gf, betaf, EncoderParams::kBnEps);
        update_running(fl, r.batch_mean, r.batch_var);
        out.raw = r.normalized;
        if (hook.op == MetaBNOp::mix) {
            out.mixed_raw = metabn_metatest_forward(*hook.state, features, gf, betaf, *hook.rng_lambda, *hook.rng_z);
            for (const auto& m : out.mixed_raw) out.mixed_normed.push_back(ag::l2_normalize_rows(m));
        }
    }
    out.normed = ag::l2_normalize_rows(out.raw);
    return out;
}

// Convenience wrapper when the parameters are plain values (no gradient).
inline ag::Mat embed_eval(const EncoderParams& p, const ag::Mat& inputs, bool l2_normalized = true) {
    auto vars = lift_params(p.learnable, false);
    auto out = encoder_forward(p.config, vars, &p.buffers, nullptr, inputs, Mode::eval);
    return l2_normalized ? out.normed->value : out.raw->value;
}

}  // namespace metadg
