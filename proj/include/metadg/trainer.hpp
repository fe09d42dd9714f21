#pragma once

// The episodic trainer: per iteration it splits the source domains into
// meta-train and meta-test, takes one differentiable inner Adam step to get
// updated parameters, evaluates the meta-test loss on them, and optimizes
// the original parameters with the gradient of the summed objective. The
// path through the inner step carries the second-order terms.

#include <metadg/autograd.hpp>
#include <metadg/encoder.hpp>
#include <metadg/evalkit.hpp>
#include <metadg/losses.hpp>
#include <metadg/memory.hpp>
#include <metadg/metabn.hpp>
#include <metadg/rng.hpp>
#include <metadg/synthdata.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <vector>

namespace metadg {

// Warmup ramps linearly from lr_start to lr_peak, then each decay epoch
// multiplies by decay_factor. Inner and outer rates follow the same shape.
struct ScheduleConfig {
    double lr_start = 3.5e-5;
    double lr_peak = 3.5e-4;
    int warmup_epochs = 5;
    std::vector<int> decay_epochs = {15, 25};
    double decay_factor = 0.1;
    double inner_scale = 1.0;  // alpha = inner_scale * shape(epoch)
};

struct LrPair {
    double alpha = 0.0;
    double beta = 0.0;
};

inline LrPair lr_at(const ScheduleConfig& s, int epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be non-negative");
    double lr;
    if (epoch < s.warmup_epochs) {
        const double t = static_cast<double>(epoch) / static_cast<double>(s.warmup_epochs);
        lr = s.lr_start + (s.lr_peak - s.lr_start) * t;
    } else {
        lr = s.lr_peak;
    }
    for (int d : s.decay_epochs)
        if (epoch >= d) lr *= s.decay_factor;
    return {s.inner_scale * lr, lr};
}

// Conventional Adam with decoupled weight decay, used for the outer update.
struct AdamState {
    std::vector<ag::Mat> m;
    std::vector<ag::Mat> v;
    long step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;

    static AdamState init(const std::vector<const ag::Mat*>& params, double weight_decay) {
        AdamState s;
        s.weight_decay = weight_decay;
        for (const ag::Mat* p : params) {
            s.m.push_back(ag::Mat::Zero(p->rows(), p->cols()));
            s.v.push_back(ag::Mat::Zero(p->rows(), p->cols()));
        }
        return s;
    }
};

inline void adam_step(AdamState& s, const std::vector<ag::Mat*>& params, const std::vector<ag::Mat>& grads,
                      double lr) {
    if (params.size() != s.m.size() || grads.size() != s.m.size())
        throw std::invalid_argument("adam_step: parameter/moment count mismatch");
    ++s.step_count;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step_count));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        ag::Mat& p = *params[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i].cwiseProduct(grads[i]);
        ag::Mat m_hat = s.m[i] / bc1;
        ag::Mat v_hat = s.v[i] / bc2;
        ag::Mat update = m_hat.array() / (v_hat.array().sqrt() + s.eps);
        p -= lr * (update + s.weight_decay * p).matrix();
    }
}

// One Adam step from fresh zero moments, expressed with graph ops so the
// result stays differentiable in theta. At step one the bias corrections
// cancel and the update reduces to g / sqrt(g^2 + eps). Parameters that
// received no gradient pass through unchanged. The first-order flag detaches
// the gradient, truncating the second-order path while keeping the direct
// dependence on theta.
inline std::vector<ag::Var> inner_update(const std::vector<ag::Var>& theta, const ag::GradTable& grads,
                                         double alpha, bool first_order = false) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    std::vector<ag::Var> updated;
    updated.reserve(theta.size());
    for (const auto& t : theta) {
        ag::Var g = grads.find(t);
        if (!g) {
            updated.push_back(t);
            continue;
        }
        if (first_order) g = ag::detach(g);
        ag::Var m_hat = ag::smul(ag::smul(g, 1.0 - kBeta1), 1.0 / (1.0 - kBeta1));
        ag::Var v_hat = ag::smul(ag::smul(ag::mul(g, g), 1.0 - kBeta2), 1.0 / (1.0 - kBeta2));
        ag::Var step = ag::div(m_hat, ag::sqrt(ag::sadd(v_hat, kEps)));
        updated.push_back(ag::sub(t, ag::smul(step, alpha)));
    }
    return updated;
}

enum class RunMode { baseline, meta, meta_metabn };

struct TrainerConfig {
    EncoderConfig encoder;
    RunMode mode = RunMode::meta_metabn;
    ClassifierKind classifier = ClassifierKind::memory;
    double memory_momentum = 0.2;
    double memory_temperature = 0.05;
    double triplet_margin = 0.3;
    int batch_p = 16;
    int batch_k = 4;
    int epochs = 30;
    ScheduleConfig schedule;
    double weight_decay = 5e-4;
    bool first_order = false;
    std::optional<double> force_lambda;  // test hook for the MetaBN mixing coefficient
    int eval_every = 1;                  // epochs between held-out evaluations; 0 = final only
    std::uint64_t seed = 0;
};

struct IterationMetrics {
    int iteration = 0;
    int epoch = 0;
    double loss_mtr = 0.0;
    double loss_mte = 0.0;  // zero in baseline mode
    double lr = 0.0;
    double grad_norm = 0.0;
};

struct EvalMetrics {
    int epoch = 0;
    RetrievalResult retrieval;
};

struct RunHistory {
    std::vector<IterationMetrics> iterations;
    std::vector<EvalMetrics> evals;
};

class Trainer {
public:
    Trainer(TrainerConfig cfg, std::vector<DomainDataset> sources, std::optional<EvalSplit> held_out_eval)
        : cfg_(std::move(cfg)),
          sources_(std::move(sources)),
          held_out_(std::move(held_out_eval)),
          rng_episodes_(SeedStreams{cfg_.seed}.stream("episodes")),
          rng_lambda_(SeedStreams{cfg_.seed}.stream("lambda")),
          rng_z_(SeedStreams{cfg_.seed}.stream("z")) {
        if (sources_.size() < 2 && cfg_.mode != RunMode::baseline)
            throw std::invalid_argument("Trainer: episodic modes need at least 2 source domains");
        if (sources_.empty()) throw std::invalid_argument("Trainer: no source domains");

        auto rng_init = SeedStreams{cfg_.seed}.stream("init");
        params_ = EncoderParams::init(cfg_.encoder, rng_init);
        for (std::size_t i = 0; i < sources_.size(); ++i) {
            id_counts_.push_back(sources_[i].n_identities);
            source_index_[sources_[i].domain_id] = i;
        }
        if (cfg_.classifier != ClassifierKind::memory)
            fc_ = FCClassifier::init(cfg_.classifier, id_counts_, cfg_.encoder.embed_dim, rng_init);

        if (cfg_.classifier == ClassifierKind::memory) {
            for (const auto& d : sources_)
                memories_.push_back(init_memory(d, params_, cfg_.memory_momentum, cfg_.memory_temperature));
        }
    }

    const EncoderParams& params() const { return params_; }
    const std::vector<IdentityMemory>& memories() const { return memories_; }
    const RunHistory& history() const { return history_; }

    int iterations_per_epoch() const {
        int min_size = sources_[0].size();
        for (const auto& d : sources_) min_size = std::min(min_size, d.size());
        const int batch = cfg_.batch_p * cfg_.batch_k;
        return (min_size + batch - 1) / batch;
    }

    IterationMetrics meta_step(const MetaEpisode& episode, double alpha, double beta_lr) {
        if (cfg_.mode == RunMode::baseline) throw std::logic_error("meta_step: trainer is in baseline mode");
        validate_episode(episode);

        auto theta = lift_theta();
        MetaBNState metabn;
        metabn.force_lambda = cfg_.force_lambda;
        const bool use_metabn = cfg_.mode == RunMode::meta_metabn;

        ModelView view = make_view(theta, &params_.buffers, use_metabn ? &metabn : nullptr);
        auto mtr = meta_train_loss(view, episode);

        auto inner_grads = ag::backward(mtr.loss);
        auto theta_prime = inner_update(theta.all, inner_grads, alpha, cfg_.first_order);
        if (!all_finite(theta_prime))
            throw std::runtime_error("meta_step: non-finite parameters after inner update");

        // the copied model owns a scratch copy of the running statistics
        std::vector<ag::Mat> scratch_buffers = params_.buffers;
        ThetaVars prime = split_theta(theta_prime);
        ModelView view_prime = make_view(prime, &scratch_buffers, use_metabn ? &metabn : nullptr);
        ag::Var mte = meta_test_loss(view_prime, episode);

        ag::Var total = ag::add(mtr.loss, mte);
        auto outer_grads = ag::backward(total);

        // memory maintenance uses this iteration's features under the
        // original parameters; the meta-test batch gets its own pass
        ag::Mat test_embeddings;
        if (cfg_.classifier == ClassifierKind::memory) {
            auto const_params = lift_params(params_.learnable, false);
            test_embeddings = encoder_forward(cfg_.encoder, const_params, nullptr, nullptr, episode.meta_test_batch.x,
                                              Mode::train)
                                  .normed->value;
        }

        IterationMetrics metrics = apply_outer_step(theta, outer_grads, beta_lr);
        metrics.loss_mtr = mtr.loss->value(0, 0);
        metrics.loss_mte = mte->value(0, 0);

        if (cfg_.classifier == ClassifierKind::memory) {
            for (std::size_t i = 0; i < episode.meta_train_domains.size(); ++i) {
                auto& mem = memories_[source_index_.at(episode.meta_train_domains[i])];
                update_memory(mem, mtr.normed_embeddings[i], episode.meta_train_batches[i].labels);
            }
            auto& mem_t = memories_[source_index_.at(episode.meta_test_domain)];
            update_memory(mem_t, test_embeddings, episode.meta_test_batch.labels);
        }
        return metrics;
    }

    IterationMetrics baseline_step(const std::vector<Batch>& batches, double beta_lr) {
        if (batches.size() != sources_.size())
            throw std::invalid_argument("baseline_step: need one batch per source domain");

        // same per-domain objective as the meta-train stage, over all sources
        MetaEpisode pooled;
        pooled.meta_test_domain = -1;
        for (std::size_t i = 0; i < sources_.size(); ++i) {
            pooled.meta_train_domains.push_back(sources_[i].domain_id);
            pooled.meta_train_batches.push_back(batches[i]);
        }

        auto theta = lift_theta();
        ModelView view = make_view(theta, &params_.buffers, nullptr);
        auto result = meta_train_loss(view, pooled);
        auto grads = ag::backward(result.loss);

        IterationMetrics metrics = apply_outer_step(theta, grads, beta_lr);
        metrics.loss_mtr = result.loss->value(0, 0);

        if (cfg_.classifier == ClassifierKind::memory) {
            for (std::size_t i = 0; i < sources_.size(); ++i)
                update_memory(memories_[i], result.normed_embeddings[i], batches[i].labels);
        }
        return metrics;
    }

    RunHistory train() {
        const int iters = iterations_per_epoch();
        int iteration = 0;
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            const LrPair lr = lr_at(cfg_.schedule, epoch);
            for (int i = 0; i < iters; ++i) {
                IterationMetrics m;
                if (cfg_.mode == RunMode::baseline) {
                    std::vector<Batch> batches;
                    for (const auto& d : sources_)
                        batches.push_back(sample_pk_batch(d, cfg_.batch_p, cfg_.batch_k, rng_episodes_));
                    m = baseline_step(batches, lr.beta);
                } else {
                    std::vector<const DomainDataset*> ptrs;
                    for (const auto& d : sources_) ptrs.push_back(&d);
                    MetaEpisode ep = split_episode(ptrs, cfg_.batch_p, cfg_.batch_k, rng_episodes_);
                    m = meta_step(ep, lr.alpha, lr.beta);
                }
                m.iteration = iteration++;
                m.epoch = epoch;
                history_.iterations.push_back(m);
            }
            if (held_out_ && cfg_.eval_every > 0 && ((epoch + 1) % cfg_.eval_every == 0 || epoch + 1 == cfg_.epochs))
                history_.evals.push_back({epoch, evaluate()});
        }
        if (held_out_ && cfg_.eval_every == 0) history_.evals.push_back({cfg_.epochs - 1, evaluate()});
        return history_;
    }

    RetrievalResult evaluate() const {
        if (!held_out_) throw std::logic_error("evaluate: no held-out split configured");
        RetrievalSplit split;
        split.query = embed_eval(params_, held_out_->query_x);
        split.query_ids = held_out_->query_ids;
        split.gallery = embed_eval(params_, held_out_->gallery_x);
        split.gallery_ids = held_out_->gallery_ids;
        return evaluate_split(split);
    }

private:
    struct ThetaVars {
        std::vector<ag::Var> all;
        std::vector<ag::Var> encoder;
        std::vector<ag::Var> fc;
    };

    ThetaVars lift_theta() {
        ThetaVars t;
        t.encoder = lift_params(params_.learnable, true);
        t.all = t.encoder;
        if (fc_) {
            t.fc = lift_params(fc_->weights, true);
            t.all.insert(t.all.end(), t.fc.begin(), t.fc.end());
        }
        return t;
    }

    ThetaVars split_theta(const std::vector<ag::Var>& all) const {
        ThetaVars t;
        t.all = all;
        const std::size_t n_enc = params_.learnable.size();
        t.encoder.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_enc));
        t.fc.assign(all.begin() + static_cast<std::ptrdiff_t>(n_enc), all.end());
        return t;
    }

    ModelView make_view(const ThetaVars& theta, std::vector<ag::Mat>* buffers_out, MetaBNState* metabn) {
        ModelView view;
        view.config = &cfg_.encoder;
        view.enc_params = &theta.encoder;
        view.buffers_out = buffers_out;
        view.classifier = cfg_.classifier;
        view.fc_weights = theta.fc.empty() ? nullptr : &theta.fc;
        view.id_counts = &id_counts_;
        view.memories = &memories_;
        view.source_index = &source_index_;
        view.triplet_margin = cfg_.triplet_margin;
        view.metabn = metabn;
        view.rng_lambda = &rng_lambda_;
        view.rng_z = &rng_z_;
        return view;
    }

    IterationMetrics apply_outer_step(const ThetaVars& theta, const ag::GradTable& grads, double lr) {
        std::vector<ag::Mat> grad_values;
        grad_values.reserve(theta.all.size());
        double sq_norm = 0.0;
        for (const auto& t : theta.all) {
            grad_values.push_back(grads.value_or_zero(t));
            if (!grad_values.back().allFinite()) throw std::runtime_error("outer step: non-finite gradient");
            sq_norm += grad_values.back().squaredNorm();
        }

        std::vector<ag::Mat*> targets;
        for (auto& m : params_.learnable) targets.push_back(&m);
        if (fc_)
            for (auto& w : fc_->weights) targets.push_back(&w);
        if (!adam_) {
            std::vector<const ag::Mat*> shapes;
            for (ag::Mat* t : targets) shapes.push_back(t);
            adam_ = AdamState::init(shapes, cfg_.weight_decay);
        }
        adam_step(*adam_, targets, grad_values, lr);

        IterationMetrics m;
        m.lr = lr;
        m.grad_norm = std::sqrt(sq_norm);
        return m;
    }

    void validate_episode(const MetaEpisode& episode) const {
        std::set<int> seen(episode.meta_train_domains.begin(), episode.meta_train_domains.end());
        if (seen.size() != episode.meta_train_domains.size())
            throw std::invalid_argument("meta_step: duplicate meta-train domain");
        if (seen.count(episode.meta_test_domain) != 0)
            throw std::invalid_argument("meta_step: meta-test domain also in meta-train set");
        seen.insert(episode.meta_test_domain);
        std::set<int> all;
        for (const auto& d : sources_) all.insert(d.domain_id);
        if (seen != all) throw std::invalid_argument("meta_step: episode does not partition the source domains");
    }

    static bool all_finite(const std::vector<ag::Var>& vars) {
        for (const auto& v : vars)
            if (!v->value.allFinite()) return false;
        return true;
    }

    TrainerConfig cfg_;
    std::vector<DomainDataset> sources_;
    std::optional<EvalSplit> held_out_;
    EncoderParams params_;
    std::optional<FCClassifier> fc_;
    std::vector<IdentityMemory> memories_;
    std::vector<int> id_counts_;
    std::map<int, std::size_t> source_index_;
    std::optional<AdamState> adam_;
    RunHistory history_;
    std::mt19937_64 rng_episodes_;
    std::mt19937_64 rng_lambda_;
    std::mt19937_64 rng_z_;
};

}  // namespace metadg
