#pragma once

// Loss functions: batch-hard triplet, the two parametric FC classifier
// baselines, and the composite meta-train / meta-test objectives that the
// episodic trainer differentiates.

#include <metadg/autograd.hpp>
#include <metadg/encoder.hpp>
#include <metadg/memory.hpp>
#include <metadg/metabn.hpp>
#include <metadg/synthdata.hpp>

#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <vector>

namespace metadg {

// Hinge on (hardest-positive distance - hardest-negative distance + margin)
// per anchor, averaged over the batch. The hardest positive may be the
// anchor itself only when all its positives coincide with it.
inline ag::Var triplet_loss(const ag::Var& embeddings, const std::vector<int>& labels, double margin) {
    if (margin < 0.0) throw std::invalid_argument("triplet_loss: margin must be non-negative");
    const Eigen::Index b = embeddings->value.rows();
    if (static_cast<Eigen::Index>(labels.size()) != b)
        throw std::invalid_argument("triplet_loss: embedding/label count mismatch");

    std::map<int, int> counts;
    for (int l : labels) ++counts[l];
    if (counts.size() < 2) throw std::invalid_argument("triplet_loss: batch needs at least 2 identities");
    for (auto& [id, c] : counts)
        if (c < 2) throw std::invalid_argument("triplet_loss: every identity needs at least 2 instances");

    ag::Var sq = ag::sum_cols(ag::mul(embeddings, embeddings));  // Bx1
    ag::Var gram = ag::matmul(embeddings, ag::transpose(embeddings));
    ag::Var d2 = ag::sub(ag::add(ag::bcast_cols(sq, b), ag::bcast_rows(ag::transpose(sq), b)), ag::smul(gram, 2.0));
    ag::Var dist = ag::sqrt(ag::sadd(ag::relu(d2), 1e-16));

    // hardest indices are chosen on values and held constant for gradients
    std::vector<int> pos_idx(static_cast<std::size_t>(b)), neg_idx(static_cast<std::size_t>(b));
    const ag::Mat& dv = dist->value;
    for (Eigen::Index i = 0; i < b; ++i) {
        double worst_pos = -1.0, best_neg = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < b; ++j) {
            if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
                if (dv(i, j) > worst_pos) {
                    worst_pos = dv(i, j);
                    pos_idx[static_cast<std::size_t>(i)] = static_cast<int>(j);
                }
            } else if (dv(i, j) < best_neg) {
                best_neg = dv(i, j);
                neg_idx[static_cast<std::size_t>(i)] = static_cast<int>(j);
            }
        }
    }

    ag::Var d_pos = ag::take_per_row(dist, pos_idx);
    ag::Var d_neg = ag::take_per_row(dist, neg_idx);
    return ag::mean_all(ag::relu(ag::sadd(ag::sub(d_pos, d_neg), margin)));
}

enum class ClassifierKind { memory, fc_global, fc_parallel };

// Parametric classifier baselines. The global variant owns one weight
// matrix over the union of all source identities; the parallel variant one
// per source domain, each scoring only its own identities.
struct FCClassifier {
    ClassifierKind variant = ClassifierKind::fc_global;
    std::vector<ag::Mat> weights;
    std::vector<int> id_counts;  // per source domain

    static FCClassifier init(ClassifierKind variant, const std::vector<int>& id_counts, int embed_dim,
                             std::mt19937_64& rng) {
        if (variant == ClassifierKind::memory) throw std::invalid_argument("FCClassifier: memory is non-parametric");
        FCClassifier fc;
        fc.variant = variant;
        fc.id_counts = id_counts;
        std::normal_distribution<double> unit(0.0, 1.0);
        const double std = std::sqrt(1.0 / static_cast<double>(embed_dim));
        auto random_weight = [&](int classes) {
            ag::Mat w(classes, embed_dim);
            for (int i = 0; i < classes; ++i)
                for (int j = 0; j < embed_dim; ++j) w(i, j) = unit(rng) * std;
            return w;
        };
        if (variant == ClassifierKind::fc_global) {
            int total = 0;
            for (int c : id_counts) total += c;
            fc.weights.push_back(random_weight(total));
        } else {
            for (int c : id_counts) fc.weights.push_back(random_weight(c));
        }
        return fc;
    }

    int label_offset(std::size_t source_index) const {
        int off = 0;
        for (std::size_t i = 0; i < source_index; ++i) off += id_counts[i];
        return off;
    }
};

// Cross-entropy over the addressed classifier's logits. The global variant
// shifts local labels by the identity counts of preceding source domains.
inline ag::Var fc_id_loss(ClassifierKind variant, const std::vector<ag::Var>& weight_vars,
                          const std::vector<int>& id_counts, std::size_t source_index, const ag::Var& embeddings,
                          const std::vector<int>& labels) {
    std::vector<int> effective = labels;
    ag::Var weight;
    if (variant == ClassifierKind::fc_global) {
        weight = weight_vars.at(0);
        int off = 0;
        for (std::size_t i = 0; i < source_index; ++i) off += id_counts.at(i);
        for (int& l : effective) l += off;
    } else if (variant == ClassifierKind::fc_parallel) {
        weight = weight_vars.at(source_index);
    } else {
        throw std::invalid_argument("fc_id_loss: memory classifier has no FC weights");
    }
    for (int l : effective)
        if (l < 0 || l >= weight->value.rows()) throw std::invalid_argument("fc_id_loss: label exceeds classifier width");
    ag::Var logits = ag::matmul(embeddings, ag::transpose(weight));
    return ag::softmax_cross_entropy(logits, effective);
}

// Everything a loss evaluation needs to see of the model. Parameter vectors
// follow the trainer's layout; `source_index` maps a domain id to its
// position among the source domains.
struct ModelView {
    const EncoderConfig* config = nullptr;
    const std::vector<ag::Var>* enc_params = nullptr;
    std::vector<ag::Mat>* buffers_out = nullptr;  // running-stat target, may be null
    ClassifierKind classifier = ClassifierKind::memory;
    const std::vector<ag::Var>* fc_weights = nullptr;
    const std::vector<int>* id_counts = nullptr;
    const std::vector<IdentityMemory>* memories = nullptr;
    const std::map<int, std::size_t>* source_index = nullptr;
    double triplet_margin = 0.3;
    MetaBNState* metabn = nullptr;  // non-null enables record/mix at the final slot
    std::mt19937_64* rng_lambda = nullptr;
    std::mt19937_64* rng_z = nullptr;

    std::size_t index_of(int domain_id) const {
        auto it = source_index->find(domain_id);
        if (it == source_index->end())
            throw std::invalid_argument("ModelView: domain " + std::to_string(domain_id) + " is not a source domain");
        return it->second;
    }
};

// Identification loss for one domain batch under the view's classifier.
inline ag::Var id_loss_for_domain(const ModelView& view, std::size_t src_idx, const ag::Var& raw,
                                  const ag::Var& normed, const std::vector<int>& labels) {
    if (view.classifier == ClassifierKind::memory) {
        if (view.memories == nullptr || src_idx >= view.memories->size())
            throw std::invalid_argument("id_loss_for_domain: missing memory for domain");
        return memory_id_loss((*view.memories)[src_idx], normed, labels);
    }
    return fc_id_loss(view.classifier, *view.fc_weights, *view.id_counts, src_idx, raw, labels);
}

struct MetaTrainResult {
    ag::Var loss;
    // detached unit-norm embeddings per meta-train domain, for memory updates
    std::vector<ag::Mat> normed_embeddings;
};

// L_mtr: per meta-train domain, triplet + identification loss; averaged over
// the N_S-1 domains. With MetaBN enabled the forward records batch stats.
inline MetaTrainResult meta_train_loss(const ModelView& view, const MetaEpisode& episode) {
    if (episode.meta_train_batches.empty()) throw std::invalid_argument("meta_train_loss: episode has no meta-train batches");
    MetaTrainResult result;
    ag::Var total;
    for (std::size_t i = 0; i < episode.meta_train_batches.size(); ++i) {
        const Batch& batch = episode.meta_train_batches[i];
        const std::size_t src = view.index_of(episode.meta_train_domains[i]);
        MetaBNHook hook;
        if (view.metabn != nullptr) hook = {MetaBNOp::record, view.metabn, nullptr, nullptr};
        auto out = encoder_forward(*view.config, *view.enc_params, nullptr, view.buffers_out, batch.x, Mode::train, hook);
        ag::Var term = ag::add(triplet_loss(out.raw, batch.labels, view.triplet_margin),
                               id_loss_for_domain(view, src, out.raw, out.normed, batch.labels));
        total = total ? ag::add(total, term) : term;
        result.normed_embeddings.push_back(out.normed->value);
    }
    result.loss = ag::smul(total, 1.0 / static_cast<double>(episode.meta_train_batches.size()));
    return result;
}

// L_mte: triplet on the unmixed embeddings plus the identification loss
// averaged over the MetaBN mixtures (or on plain features without MetaBN).
inline ag::Var meta_test_loss(const ModelView& view, const MetaEpisode& episode) {
    const Batch& batch = episode.meta_test_batch;
    const std::size_t src = view.index_of(episode.meta_test_domain);
    MetaBNHook hook;
    if (view.metabn != nullptr) {
        if (view.metabn->saved_count() == 0)
            throw std::logic_error("meta_test_loss: MetaBN has no saved meta-train statistics");
        hook = {MetaBNOp::mix, view.metabn, view.rng_lambda, view.rng_z};
    }
    auto out = encoder_forward(*view.config, *view.enc_params, nullptr, view.buffers_out, batch.x, Mode::train, hook);

    ag::Var id_term;
    if (view.metabn != nullptr) {
        ag::Var sum;
        for (std::size_t k = 0; k < out.mixed_raw.size(); ++k) {
            ag::Var term = id_loss_for_domain(view, src, out.mixed_raw[k], out.mixed_normed[k], batch.labels);
            sum = sum ? ag::add(sum, term) : term;
        }
        id_term = ag::smul(sum, 1.0 / static_cast<double>(out.mixed_raw.size()));
    } else {
        id_term = id_loss_for_domain(view, src, out.raw, out.normed, batch.labels);
    }
    return ag::add(triplet_loss(out.raw, batch.labels, view.triplet_margin), id_term);
}

}  // namespace metadg
