#pragma once

// MetaBN: the final normalization layer used during episodic training.
// In the meta-train stage it is plain batch normalization that additionally
// saves the mini-batch mean and variance of its input features. In the
// meta-test stage it mixes the meta-test features with Gaussian samples
// drawn from each saved distribution and batch-normalizes every mixture,
// yielding one feature set per meta-train domain.

#include <metadg/autograd.hpp>

#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace metadg {

struct MetaBNState {
    std::vector<ag::Mat> saved_means;  // 1 x d each
    std::vector<ag::Mat> saved_vars;   // 1 x d each, per-dimension variance
    double eps = 1e-5;

    // test hook: when set, every mixing coefficient equals this value
    std::optional<double> force_lambda;

    void clear() {
        saved_means.clear();
        saved_vars.clear();
    }
    int saved_count() const { return static_cast<int>(saved_means.size()); }
};

// Plain train-mode BN on F; the batch statistics of F are appended to the
// episode state as differentiation constants.
inline ag::Var metabn_metatrain_forward(MetaBNState& state, const ag::Var& features, const ag::Var& gamma,
                                        const ag::Var& beta) {
    auto bn = ag::batchnorm_train(features, gamma, beta, state.eps);
    state.saved_means.push_back(bn.batch_mean);
    state.saved_vars.push_back(bn.batch_var);
    return bn.normalized;
}

// B iid draws; dimension j of each draw ~ Normal(mu[j], var[j]).
inline ag::Mat metabn_sample_domain_features(const MetaBNState& state, int domain_index, int batch_size,
                                             std::mt19937_64& rng) {
    if (domain_index < 0 || domain_index >= state.saved_count())
        throw std::out_of_range("metabn_sample_domain_features: saved-statistics index out of range");
    const ag::Mat& mu = state.saved_means[static_cast<std::size_t>(domain_index)];
    const ag::Mat& var = state.saved_vars[static_cast<std::size_t>(domain_index)];
    const Eigen::Index d = mu.cols();
    std::normal_distribution<double> unit(0.0, 1.0);
    ag::Mat z(batch_size, d);
    for (int i = 0; i < batch_size; ++i)
        for (Eigen::Index j = 0; j < d; ++j) z(i, j) = mu(0, j) + std::sqrt(var(0, j)) * unit(rng);
    return z;
}

// For every saved meta-train distribution i: draw lambda ~ Beta(1,1), mix
// F_T^i = lambda*F_T + (1-lambda)*Z^i, then batch-normalize the mixture.
// Gradients flow through F_T only.
inline std::vector<ag::Var> metabn_metatest_forward(MetaBNState& state, const ag::Var& features,
                                                    const ag::Var& gamma, const ag::Var& beta,
                                                    std::mt19937_64& rng_lambda, std::mt19937_64& rng_z) {
    if (state.saved_count() == 0)
        throw std::logic_error("metabn_metatest_forward: no saved meta-train statistics in this episode");
    const int batch = static_cast<int>(features->value.rows());
    if (batch < 2) throw std::invalid_argument("metabn_metatest_forward: batch size must be >= 2");

    std::uniform_real_distribution<double> beta11(0.0, 1.0);  // Beta(1,1) is uniform
    std::vector<ag::Var> mixed_outputs;
    mixed_outputs.reserve(static_cast<std::size_t>(state.saved_count()));
    for (int i = 0; i < state.saved_count(); ++i) {
        const double lambda = state.force_lambda ? *state.force_lambda : beta11(rng_lambda);
        ag::Mat z = metabn_sample_domain_features(state, i, batch, rng_z);
        ag::Var mixed = ag::add(ag::smul(features, lambda), ag::constant(z * (1.0 - lambda)));
        mixed_outputs.push_back(ag::batchnorm_train(mixed, gamma, beta, state.eps).normalized);
    }
    return mixed_outputs;
}

}  // namespace metadg
