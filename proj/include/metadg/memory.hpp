#pragma once

// Per-domain non-parametric identity memory. Slots hold one unit-norm
// centroid per identity; they are moved by a momentum blend of detached
// batch features, never by the optimizer, and act as constants inside the
// identification loss.

#include <metadg/autograd.hpp>
#include <metadg/encoder.hpp>
#include <metadg/synthdata.hpp>

#include <cstdio>
#include <stdexcept>
#include <vector>

namespace metadg {

struct IdentityMemory {
    int domain_id = 0;
    ag::Mat centroids;  // n_identities x embed_dim, unit-norm rows
    double momentum = 0.2;
    double temperature = 0.05;

    int slots() const { return static_cast<int>(centroids.rows()); }
};

namespace detail {
// Unit-normalize a row in place; degenerate near-zero vectors are guarded
// with a small epsilon and reported once per occurrence.
inline void normalize_slot(ag::Mat& m, Eigen::Index row) {
    const double norm = m.row(row).norm();
    if (norm < 1e-7) {
        std::fprintf(stderr, "[metadg] warning: near-zero centroid for slot %ld, epsilon guard applied\n",
                     static_cast<long>(row));
    }
    m.row(row) /= (norm + 1e-12);
}
}  // namespace detail

// Slot k starts as the normalized mean of the eval-mode embeddings of all
// samples with identity k.
inline IdentityMemory init_memory(const DomainDataset& data, const EncoderParams& params, double momentum = 0.2,
                                  double temperature = 0.05) {
    if (temperature <= 0.0) throw std::invalid_argument("init_memory: temperature must be positive");
    if (momentum < 0.0 || momentum > 1.0) throw std::invalid_argument("init_memory: momentum must be in [0,1]");

    ag::Mat embeddings = embed_eval(params, data.x);
    IdentityMemory mem;
    mem.domain_id = data.domain_id;
    mem.momentum = momentum;
    mem.temperature = temperature;
    mem.centroids = ag::Mat::Zero(data.n_identities, embeddings.cols());
    std::vector<int> counts(static_cast<std::size_t>(data.n_identities), 0);
    for (int r = 0; r < data.size(); ++r) {
        const int id = data.labels[static_cast<std::size_t>(r)];
        if (id < 0 || id >= data.n_identities) throw std::invalid_argument("init_memory: label out of range");
        mem.centroids.row(id) += embeddings.row(r);
        ++counts[static_cast<std::size_t>(id)];
    }
    for (int id = 0; id < data.n_identities; ++id) {
        if (counts[static_cast<std::size_t>(id)] == 0)
            throw std::invalid_argument("init_memory: identity " + std::to_string(id) + " has no samples");
        mem.centroids.row(id) /= counts[static_cast<std::size_t>(id)];
        detail::normalize_slot(mem.centroids, id);
    }
    return mem;
}

// M[k] <- m*M[k] + (1-m)*mean(batch features of identity k), re-normalized.
// Identities absent from the batch keep their slots untouched.
inline void update_memory(IdentityMemory& mem, const ag::Mat& embeddings, const std::vector<int>& labels) {
    if (embeddings.rows() != static_cast<Eigen::Index>(labels.size()))
        throw std::invalid_argument("update_memory: embedding/label count mismatch");
    std::vector<int> counts(static_cast<std::size_t>(mem.slots()), 0);
    ag::Mat sums = ag::Mat::Zero(mem.slots(), mem.centroids.cols());
    for (Eigen::Index r = 0; r < embeddings.rows(); ++r) {
        const int id = labels[static_cast<std::size_t>(r)];
        if (id < 0 || id >= mem.slots()) throw std::invalid_argument("update_memory: label out of range");
        sums.row(id) += embeddings.row(r);
        ++counts[static_cast<std::size_t>(id)];
    }
    for (int id = 0; id < mem.slots(); ++id) {
        if (counts[static_cast<std::size_t>(id)] == 0) continue;
        ag::Mat mean = sums.row(id) / counts[static_cast<std::size_t>(id)];
        mem.centroids.row(id) = mem.momentum * mem.centroids.row(id) + (1.0 - mem.momentum) * mean;
        detail::normalize_slot(mem.centroids, id);
    }
}

// -log softmax over temperature-scaled centroid similarities at the true
// slot, averaged over the batch. Centroids are constants; gradients reach
// the embeddings only.
inline ag::Var memory_id_loss(const IdentityMemory& mem, const ag::Var& normed_embeddings,
                              const std::vector<int>& labels) {
    if (mem.temperature <= 0.0) throw std::invalid_argument("memory_id_loss: temperature must be positive");
    for (int id : labels)
        if (id < 0 || id >= mem.slots()) throw std::invalid_argument("memory_id_loss: label out of range");
    ag::Var logits = ag::smul(ag::matmul(normed_embeddings, ag::constant(mem.centroids.transpose())),
                              1.0 / mem.temperature);
    return ag::softmax_cross_entropy(logits, labels);
}

}  // namespace metadg
