#pragma once

// Procedural multi-domain identity datasets. Each domain draws its own
// identity cluster centers and applies a domain-specific affine transform,
// which is the synthetic stand-in for the scene/camera gap between sources.

#include <metadg/rng.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metadg {

using Mat = Eigen::MatrixXd;

struct DomainDataset {
    int domain_id = 0;
    Mat x;                    // n_samples x input_dim
    std::vector<int> labels;  // identity per row, values exactly {0..n_identities-1}
    int n_identities = 0;

    int size() const { return static_cast<int>(x.rows()); }
    int input_dim() const { return static_cast<int>(x.cols()); }
};

struct EvalSplit {
    Mat query_x;
    std::vector<int> query_ids;
    Mat gallery_x;
    std::vector<int> gallery_ids;
};

struct DomainShiftSpec {
    int domain_id = 0;
    Mat transform;           // input_dim x input_dim
    Eigen::VectorXd offset;  // input_dim
    Mat centers;             // n_identities x input_dim
    int samples_per_identity = 0;
    double noise_scale = 0.0;
    std::uint64_t seed = 0;

    int n_identities() const { return static_cast<int>(centers.rows()); }
    int input_dim() const { return static_cast<int>(centers.cols()); }
};

struct GeneratedDomain {
    DomainDataset full;   // all identities
    DomainDataset train;  // first half of the identities, relabeled from 0
    EvalSplit eval;       // second half: one query per identity, rest gallery
};

struct Batch {
    Mat x;
    std::vector<int> labels;
    int size() const { return static_cast<int>(x.rows()); }
};

struct MetaEpisode {
    int meta_test_domain = -1;
    std::vector<int> meta_train_domains;
    std::vector<Batch> meta_train_batches;  // aligned with meta_train_domains
    Batch meta_test_batch;
};

// Knobs for building a family of related domain specs.
//
// Identity centers have two parts. A `signal_dim`-dimensional block carries
// identity structure the same way in every domain; the rest of the space
// holds per-domain spurious directions whose identity structure is stronger
// (`spurious_scale`) but does not transfer: a model that leans on them wins
// on its source domains and loses on a held-out one. `shift_scale` controls
// the per-domain affine transform on top; zero shift and zero spurious
// scale make every domain structurally identical.
struct SynthConfig {
    int n_domains = 4;
    int ids_per_domain = 50;
    int samples_per_id = 20;
    int input_dim = 32;
    int signal_dim = 8;
    int spurious_dim = 8;
    double signal_scale = 1.0;
    double spurious_scale = 2.0;
    double shift_scale = 0.5;
    double offset_scale = 0.5;
    double scale_jitter = 0.0;  // per-dimension log-normal scale diversity across domains
    double noise_scale = 0.5;
    std::uint64_t seed = 0;
};

inline std::vector<DomainShiftSpec> make_domain_specs(const SynthConfig& cfg) {
    if (cfg.n_domains < 2) throw std::invalid_argument("make_domain_specs: need at least 2 domains");
    if (cfg.signal_dim < 1 || cfg.signal_dim + cfg.spurious_dim > cfg.input_dim)
        throw std::invalid_argument("make_domain_specs: signal/spurious dims exceed input_dim");
    std::vector<DomainShiftSpec> specs;
    SeedStreams streams{cfg.seed};
    auto rng = streams.stream("data");
    std::normal_distribution<double> unit(0.0, 1.0);
    const double col_scale = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
    const int complement = cfg.input_dim - cfg.signal_dim;
    for (int d = 0; d < cfg.n_domains; ++d) {
        DomainShiftSpec spec;
        spec.domain_id = d;

        // identity codes: shared-format signal block plus a spurious block
        // embedded in domain-specific directions of the complement space
        Mat basis;
        if (cfg.spurious_dim > 0) {
            Mat raw(complement, cfg.spurious_dim);
            for (int i = 0; i < complement; ++i)
                for (int j = 0; j < cfg.spurious_dim; ++j) raw(i, j) = unit(rng);
            basis = Eigen::HouseholderQR<Mat>(raw).householderQ() * Mat::Identity(complement, cfg.spurious_dim);
        }
        spec.centers = Mat::Zero(cfg.ids_per_domain, cfg.input_dim);
        for (int i = 0; i < cfg.ids_per_domain; ++i) {
            for (int j = 0; j < cfg.signal_dim; ++j) spec.centers(i, j) = unit(rng) * cfg.signal_scale;
            if (cfg.spurious_dim > 0) {
                Eigen::VectorXd code(cfg.spurious_dim);
                for (int j = 0; j < cfg.spurious_dim; ++j) code(j) = unit(rng) * cfg.spurious_scale;
                spec.centers.row(i).tail(complement) = (basis * code).transpose();
            }
        }

        Mat perturb(cfg.input_dim, cfg.input_dim);
        for (int i = 0; i < cfg.input_dim; ++i)
            for (int j = 0; j < cfg.input_dim; ++j) perturb(i, j) = unit(rng) * col_scale;
        spec.transform = Mat::Identity(cfg.input_dim, cfg.input_dim) + cfg.shift_scale * perturb;
        if (cfg.scale_jitter > 0.0) {
            for (int i = 0; i < cfg.input_dim; ++i)
                spec.transform.row(i) *= std::exp(unit(rng) * cfg.scale_jitter);
        }
        spec.offset = Eigen::VectorXd(cfg.input_dim);
        for (int j = 0; j < cfg.input_dim; ++j) spec.offset(j) = unit(rng) * cfg.offset_scale * cfg.shift_scale;
        spec.samples_per_identity = cfg.samples_per_id;
        spec.noise_scale = cfg.noise_scale;
        spec.seed = streams.derive("domain-" + std::to_string(d));
        specs.push_back(std::move(spec));
    }
    return specs;
}

inline DomainDataset generate_domain(const DomainShiftSpec& spec) {
    if (spec.n_identities() < 2) throw std::invalid_argument("generate_domain: need at least 2 identities");
    if (spec.samples_per_identity < 2)
        throw std::invalid_argument("generate_domain: need at least 2 samples per identity");
    if (spec.transform.rows() != spec.input_dim() || spec.transform.cols() != spec.input_dim())
        throw std::invalid_argument("generate_domain: transform shape does not match input_dim");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    const int n = spec.n_identities() * spec.samples_per_identity;
    const int d = spec.input_dim();

    DomainDataset out;
    out.domain_id = spec.domain_id;
    out.n_identities = spec.n_identities();
    out.x = Mat(n, d);
    out.labels.resize(static_cast<std::size_t>(n));
    int row = 0;
    Eigen::VectorXd point(d);
    for (int id = 0; id < spec.n_identities(); ++id) {
        for (int s = 0; s < spec.samples_per_identity; ++s) {
            for (int j = 0; j < d; ++j) point(j) = spec.centers(id, j) + spec.noise_scale * unit(rng);
            out.x.row(row) = (spec.transform * point + spec.offset).transpose();
            out.labels[static_cast<std::size_t>(row)] = id;
            ++row;
        }
    }
    return out;
}

// Identities are split 50/50: the first half (relabeled from 0) is the
// training side, the second half becomes the query/gallery evaluation side
// with the first sample of each identity as its query.
inline GeneratedDomain split_domain(const DomainDataset& full) {
    GeneratedDomain out;
    out.full = full;
    const int n_train_ids = full.n_identities / 2;
    const int d = full.input_dim();

    std::vector<int> train_rows, query_rows, gallery_rows;
    std::vector<int> seen_eval(static_cast<std::size_t>(full.n_identities), 0);
    for (int r = 0; r < full.size(); ++r) {
        const int id = full.labels[static_cast<std::size_t>(r)];
        if (id < n_train_ids) {
            train_rows.push_back(r);
        } else if (seen_eval[static_cast<std::size_t>(id)]++ == 0) {
            query_rows.push_back(r);
        } else {
            gallery_rows.push_back(r);
        }
    }

    out.train.domain_id = full.domain_id;
    out.train.n_identities = n_train_ids;
    out.train.x = Mat(static_cast<Eigen::Index>(train_rows.size()), d);
    out.train.labels.resize(train_rows.size());
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
        out.train.x.row(static_cast<Eigen::Index>(i)) = full.x.row(train_rows[i]);
        out.train.labels[i] = full.labels[static_cast<std::size_t>(train_rows[i])];
    }

    auto fill_eval = [&](const std::vector<int>& rows, Mat& x, std::vector<int>& ids) {
        x = Mat(static_cast<Eigen::Index>(rows.size()), d);
        ids.resize(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            x.row(static_cast<Eigen::Index>(i)) = full.x.row(rows[i]);
            ids[i] = full.labels[static_cast<std::size_t>(rows[i])];
        }
    };
    fill_eval(query_rows, out.eval.query_x, out.eval.query_ids);
    fill_eval(gallery_rows, out.eval.gallery_x, out.eval.gallery_ids);
    return out;
}

inline std::vector<GeneratedDomain> generate_domains(const std::vector<DomainShiftSpec>& specs) {
    if (specs.size() < 2) throw std::invalid_argument("generate_domains: need at least 2 domain specs");
    std::vector<GeneratedDomain> out;
    out.reserve(specs.size());
    for (const auto& spec : specs) out.push_back(split_domain(generate_domain(spec)));
    return out;
}

// P distinct identities, K instances each. Instances are drawn without
// replacement when an identity has at least K samples, with replacement
// otherwise. Rows come out grouped by identity.
inline Batch sample_pk_batch(const DomainDataset& data, int p, int k, std::mt19937_64& rng) {
    if (p < 1 || k < 1) throw std::invalid_argument("sample_pk_batch: P and K must be positive");
    if (p > data.n_identities) throw std::invalid_argument("sample_pk_batch: P exceeds identity count");

    std::vector<std::vector<int>> by_id(static_cast<std::size_t>(data.n_identities));
    for (int r = 0; r < data.size(); ++r) by_id[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(r)])].push_back(r);

    // partial Fisher-Yates for the identity choice keeps the draw order stable
    std::vector<int> ids(static_cast<std::size_t>(data.n_identities));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < p; ++i) {
        std::uniform_int_distribution<int> pick(i, data.n_identities - 1);
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(pick(rng))]);
    }

    Batch batch;
    batch.x = Mat(static_cast<Eigen::Index>(p) * k, data.input_dim());
    batch.labels.resize(static_cast<std::size_t>(p) * static_cast<std::size_t>(k));
    int row = 0;
    for (int i = 0; i < p; ++i) {
        const int id = ids[static_cast<std::size_t>(i)];
        auto& pool = by_id[static_cast<std::size_t>(id)];
        if (pool.empty()) throw std::invalid_argument("sample_pk_batch: identity has no samples");
        std::vector<int> chosen;
        if (static_cast<int>(pool.size()) >= k) {
            std::vector<int> idx(pool.size());
            std::iota(idx.begin(), idx.end(), 0);
            for (int j = 0; j < k; ++j) {
                std::uniform_int_distribution<int> pick(j, static_cast<int>(pool.size()) - 1);
                std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(pick(rng))]);
                chosen.push_back(pool[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])]);
            }
        } else {
            std::uniform_int_distribution<int> pick(0, static_cast<int>(pool.size()) - 1);
            for (int j = 0; j < k; ++j) chosen.push_back(pool[static_cast<std::size_t>(pick(rng))]);
        }
        for (int r : chosen) {
            batch.x.row(row) = data.x.row(r);
            batch.labels[static_cast<std::size_t>(row)] = id;
            ++row;
        }
    }
    return batch;
}

// Columnar text format, one sample per line:
//   domain_id identity x_0 x_1 ... x_{d-1}
// Values are printed with 17 significant digits, which round-trips IEEE
// doubles. The train/eval split is positional, so a file fully determines
// the generated domains.
inline void write_datasets(const std::vector<GeneratedDomain>& domains, std::ostream& out) {
    char buf[32];
    for (const auto& dom : domains) {
        const DomainDataset& d = dom.full;
        for (int r = 0; r < d.size(); ++r) {
            out << d.domain_id << ' ' << d.labels[static_cast<std::size_t>(r)];
            for (int j = 0; j < d.input_dim(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", d.x(r, j));
                out << ' ' << buf;
            }
            out << '\n';
        }
    }
}

inline void write_datasets_file(const std::vector<GeneratedDomain>& domains, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_datasets_file: cannot open " + path);
    write_datasets(domains, out);
}

inline std::vector<GeneratedDomain> read_datasets(std::istream& in) {
    std::map<int, std::vector<std::pair<int, std::vector<double>>>> by_domain;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        int domain_id = 0, identity = 0;
        if (!(ss >> domain_id >> identity)) throw std::runtime_error("read_datasets: malformed line");
        std::vector<double> xs;
        double v;
        while (ss >> v) xs.push_back(v);
        if (xs.empty()) throw std::runtime_error("read_datasets: sample without features");
        by_domain[domain_id].emplace_back(identity, std::move(xs));
    }
    std::vector<GeneratedDomain> out;
    for (auto& [domain_id, rows] : by_domain) {
        DomainDataset full;
        full.domain_id = domain_id;
        full.x = Mat(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().second.size()));
        full.labels.resize(rows.size());
        int max_id = -1;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            full.labels[i] = rows[i].first;
            max_id = std::max(max_id, rows[i].first);
            for (std::size_t j = 0; j < rows[i].second.size(); ++j)
                full.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i].second[j];
        }
        full.n_identities = max_id + 1;
        out.push_back(split_domain(full));
    }
    return out;
}

inline std::vector<GeneratedDomain> read_datasets_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_datasets_file: cannot open " + path);
    return read_datasets(in);
}

// One meta-test domain chosen uniformly; the rest are meta-train, each with
// a fresh PK batch.
inline MetaEpisode split_episode(const std::vector<const DomainDataset*>& domains, int p, int k,
                                 std::mt19937_64& rng) {
    if (domains.size() < 2) throw std::invalid_argument("split_episode: need at least 2 source domains");
    std::uniform_int_distribution<int> pick(0, static_cast<int>(domains.size()) - 1);
    const int test_idx = pick(rng);

    MetaEpisode ep;
    ep.meta_test_domain = domains[static_cast<std::size_t>(test_idx)]->domain_id;
    for (int i = 0; i < static_cast<int>(domains.size()); ++i) {
        if (i == test_idx) continue;
        ep.meta_train_domains.push_back(domains[static_cast<std::size_t>(i)]->domain_id);
        ep.meta_train_batches.push_back(sample_pk_batch(*domains[static_cast<std::size_t>(i)], p, k, rng));
    }
    ep.meta_test_batch = sample_pk_batch(*domains[static_cast<std::size_t>(test_idx)], p, k, rng);
    return ep;
}

}  // namespace metadg
