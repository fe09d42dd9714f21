#pragma once

// Experiment runner: config parsing, single runs, ablation grids and plots.
// A config fully determines a run; one root seed fans out to the data,
// episode, lambda, z and init streams.

#include <metadg/checkpoint.hpp>
#include <metadg/metrics.hpp>
#include <metadg/stats.hpp>
#include <metadg/svgplot.hpp>
#include <metadg/trainer.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metadg {

struct ExperimentConfig {
    std::uint64_t seed = 7;
    RunMode mode = RunMode::meta_metabn;
    ClassifierKind classifier = ClassifierKind::memory;
    int held_out_domain = -1;                // default: last domain
    std::vector<int> source_domains;         // default: all but the held-out one
    SynthConfig data;                        // data.seed == 0 means "use root seed"
    EncoderConfig encoder;
    TrainerConfig trainer;                   // encoder/mode/classifier/seed filled from above
    std::string out_dir;                     // empty: nothing persisted
};

inline RunMode parse_run_mode(const std::string& s) {
    if (s == "baseline") return RunMode::baseline;
    if (s == "meta") return RunMode::meta;
    if (s == "meta_metabn") return RunMode::meta_metabn;
    throw std::invalid_argument("unknown mode '" + s + "' (expected baseline|meta|meta_metabn)");
}

inline std::string run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::baseline: return "baseline";
        case RunMode::meta: return "meta";
        default: return "meta_metabn";
    }
}

inline ClassifierKind parse_classifier(const std::string& s) {
    if (s == "memory") return ClassifierKind::memory;
    if (s == "fc_global") return ClassifierKind::fc_global;
    if (s == "fc_parallel") return ClassifierKind::fc_parallel;
    throw std::invalid_argument("unknown classifier '" + s + "' (expected memory|fc_global|fc_parallel)");
}

inline std::string classifier_name(ClassifierKind c) {
    switch (c) {
        case ClassifierKind::memory: return "memory";
        case ClassifierKind::fc_global: return "fc_global";
        default: return "fc_parallel";
    }
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.seed = j.value("seed", std::uint64_t{7});
    cfg.mode = parse_run_mode(j.value("mode", std::string("meta_metabn")));
    cfg.classifier = parse_classifier(j.value("classifier", std::string("memory")));
    cfg.held_out_domain = j.value("held_out_domain", -1);
    cfg.source_domains = j.value("source_domains", std::vector<int>{});
    cfg.out_dir = j.value("out_dir", std::string{});

    const auto d = j.value("data", nlohmann::json::object());
    cfg.data.n_domains = d.value("n_domains", 4);
    cfg.data.ids_per_domain = d.value("ids_per_domain", 50);
    cfg.data.samples_per_id = d.value("samples_per_id", 20);
    cfg.data.input_dim = d.value("input_dim", 32);
    cfg.data.signal_dim = d.value("signal_dim", 8);
    cfg.data.spurious_dim = d.value("spurious_dim", 8);
    cfg.data.signal_scale = d.value("signal_scale", 1.0);
    cfg.data.spurious_scale = d.value("spurious_scale", 2.0);
    cfg.data.shift_scale = d.value("shift_scale", 0.5);
    cfg.data.offset_scale = d.value("offset_scale", 0.5);
    cfg.data.noise_scale = d.value("noise_scale", 0.5);
    cfg.data.seed = d.value("seed", std::uint64_t{0});

    const auto e = j.value("encoder", nlohmann::json::object());
    cfg.encoder.input_dim = cfg.data.input_dim;
    cfg.encoder.hidden_dims = e.value("hidden_dims", std::vector<int>{64, 64});
    cfg.encoder.embed_dim = e.value("embed_dim", 32);
    cfg.encoder.use_metabn_last = cfg.mode == RunMode::meta_metabn;

    const auto h = j.value("hyper", nlohmann::json::object());
    cfg.trainer.memory_momentum = h.value("memory_momentum", 0.2);
    cfg.trainer.memory_temperature = h.value("memory_temperature", 0.05);
    cfg.trainer.triplet_margin = h.value("triplet_margin", 0.3);
    cfg.trainer.batch_p = h.value("batch_p", 16);
    cfg.trainer.batch_k = h.value("batch_k", 4);
    cfg.trainer.epochs = h.value("epochs", 30);
    cfg.trainer.schedule.lr_start = h.value("lr_start", 3.5e-5);
    cfg.trainer.schedule.lr_peak = h.value("lr_peak", 3.5e-4);
    cfg.trainer.schedule.warmup_epochs = h.value("warmup_epochs", 5);
    cfg.trainer.schedule.decay_epochs = h.value("decay_epochs", std::vector<int>{15, 25});
    cfg.trainer.schedule.decay_factor = h.value("decay_factor", 0.1);
    cfg.trainer.schedule.inner_scale = h.value("inner_lr_scale", 1.0);
    cfg.trainer.weight_decay = h.value("weight_decay", 5e-4);
    cfg.trainer.first_order = h.value("first_order", false);
    cfg.trainer.eval_every = h.value("eval_every", 1);
    if (h.contains("force_lambda")) cfg.trainer.force_lambda = h.at("force_lambda").get<double>();
    return cfg;
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["mode"] = run_mode_name(cfg.mode);
    j["classifier"] = classifier_name(cfg.classifier);
    j["held_out_domain"] = cfg.held_out_domain;
    j["source_domains"] = cfg.source_domains;
    j["out_dir"] = cfg.out_dir;
    j["data"] = {{"n_domains", cfg.data.n_domains},         {"ids_per_domain", cfg.data.ids_per_domain},
                 {"samples_per_id", cfg.data.samples_per_id}, {"input_dim", cfg.data.input_dim},
                 {"signal_dim", cfg.data.signal_dim},       {"spurious_dim", cfg.data.spurious_dim},
                 {"signal_scale", cfg.data.signal_scale},   {"spurious_scale", cfg.data.spurious_scale},
                 {"shift_scale", cfg.data.shift_scale},     {"offset_scale", cfg.data.offset_scale},
                 {"noise_scale", cfg.data.noise_scale},     {"seed", cfg.data.seed}};
    j["encoder"] = {{"hidden_dims", cfg.encoder.hidden_dims}, {"embed_dim", cfg.encoder.embed_dim}};
    j["hyper"] = {{"memory_momentum", cfg.trainer.memory_momentum},
                  {"memory_temperature", cfg.trainer.memory_temperature},
                  {"triplet_margin", cfg.trainer.triplet_margin},
                  {"batch_p", cfg.trainer.batch_p},
                  {"batch_k", cfg.trainer.batch_k},
                  {"epochs", cfg.trainer.epochs},
                  {"lr_start", cfg.trainer.schedule.lr_start},
                  {"lr_peak", cfg.trainer.schedule.lr_peak},
                  {"warmup_epochs", cfg.trainer.schedule.warmup_epochs},
                  {"decay_epochs", cfg.trainer.schedule.decay_epochs},
                  {"decay_factor", cfg.trainer.schedule.decay_factor},
                  {"inner_lr_scale", cfg.trainer.schedule.inner_scale},
                  {"weight_decay", cfg.trainer.weight_decay},
                  {"first_order", cfg.trainer.first_order},
                  {"eval_every", cfg.trainer.eval_every}};
    return j;
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    const std::uint64_t h = SeedStreams::fnv1a(experiment_to_json(cfg).dump());
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Resolved plan: the fully-defaulted view of a config plus the derived
// source/held-out layout, used by --dry-run and by run_experiment itself.
struct ResolvedPlan {
    ExperimentConfig cfg;
    int held_out = -1;
    std::vector<int> sources;
    SynthConfig data;
};

inline ResolvedPlan resolve_plan(const ExperimentConfig& cfg_in) {
    ResolvedPlan plan;
    plan.cfg = cfg_in;
    plan.data = cfg_in.data;
    if (plan.data.seed == 0) plan.data.seed = cfg_in.seed;
    if (plan.data.n_domains < 2) throw std::invalid_argument("config: need at least 2 domains");

    plan.held_out = cfg_in.held_out_domain < 0 ? plan.data.n_domains - 1 : cfg_in.held_out_domain;
    if (plan.held_out < 0 || plan.held_out >= plan.data.n_domains)
        throw std::invalid_argument("config: held_out_domain out of range");

    plan.sources = cfg_in.source_domains;
    if (plan.sources.empty()) {
        for (int d = 0; d < plan.data.n_domains; ++d)
            if (d != plan.held_out) plan.sources.push_back(d);
    }
    for (int s : plan.sources) {
        if (s < 0 || s >= plan.data.n_domains) throw std::invalid_argument("config: source domain out of range");
        if (s == plan.held_out) throw std::invalid_argument("config: held-out domain cannot be a source");
    }
    if (plan.sources.empty()) throw std::invalid_argument("config: no source domains");
    if (plan.sources.size() < 2 && cfg_in.mode != RunMode::baseline)
        throw std::invalid_argument("config: episodic modes need at least 2 source domains");

    plan.cfg.trainer.encoder = cfg_in.encoder;
    plan.cfg.trainer.encoder.input_dim = plan.data.input_dim;
    plan.cfg.trainer.encoder.use_metabn_last = cfg_in.mode == RunMode::meta_metabn;
    plan.cfg.trainer.mode = cfg_in.mode;
    plan.cfg.trainer.classifier = cfg_in.classifier;
    plan.cfg.trainer.seed = cfg_in.seed;
    return plan;
}

struct ExperimentResult {
    ExperimentConfig cfg;
    RunHistory history;
    RetrievalResult final_eval;
    std::string hash;
};

inline nlohmann::json result_to_json(const ExperimentResult& r) {
    nlohmann::json j;
    j["config"] = experiment_to_json(r.cfg);
    j["config_hash"] = r.hash;
    j["map"] = r.final_eval.map;
    j["rank1"] = r.final_eval.rank1;
    j["n_query"] = r.final_eval.n_query;
    j["n_gallery"] = r.final_eval.n_gallery;
    if (!r.history.iterations.empty()) {
        j["final_l_mtr"] = r.history.iterations.back().loss_mtr;
        j["final_l_mte"] = r.history.iterations.back().loss_mte;
    }
    return j;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg_in) {
    ResolvedPlan plan = resolve_plan(cfg_in);
    auto domains = generate_domains(make_domain_specs(plan.data));

    std::vector<DomainDataset> sources;
    for (int s : plan.sources) sources.push_back(domains[static_cast<std::size_t>(s)].train);
    EvalSplit held_out = domains[static_cast<std::size_t>(plan.held_out)].eval;

    Trainer trainer(plan.cfg.trainer, std::move(sources), held_out);
    ExperimentResult result;
    result.cfg = plan.cfg;
    result.cfg.data = plan.data;
    result.cfg.held_out_domain = plan.held_out;
    result.cfg.source_domains = plan.sources;
    result.history = trainer.train();
    result.final_eval = result.history.evals.empty() ? trainer.evaluate() : result.history.evals.back().retrieval;
    result.hash = config_hash(result.cfg);

    if (!cfg_in.out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(cfg_in.out_dir);
        write_metrics_file(result.history, cfg_in.out_dir + "/metrics.jsonl");
        std::ofstream rj(cfg_in.out_dir + "/result.json");
        rj << result_to_json(result).dump(1) << "\n";
        save_checkpoint({trainer.params(), trainer.memories()}, cfg_in.out_dir + "/checkpoint.json");
    }
    return result;
}

// ---- ablation grids ----

struct GridRow {
    std::string name;
    ExperimentConfig cfg;  // per-seed root seed is substituted at run time
};

struct GridRowResult {
    std::string name;
    std::vector<double> map_per_seed;
    std::vector<double> rank1_per_seed;
    double mean_map = 0.0;
    double mean_rank1 = 0.0;
};

struct GridResult {
    std::vector<std::uint64_t> seeds;
    std::vector<GridRowResult> rows;
    int baseline_row = -1;
};

// Every row runs once per seed; rows see identical data at a given seed.
// Comparisons against the row named "baseline" (or the first baseline-mode
// row) use a paired test over seeds.
inline GridResult run_ablation_grid(const std::vector<GridRow>& rows, const std::vector<std::uint64_t>& seeds,
                                    const std::string& out_root = {}) {
    if (rows.empty() || seeds.empty()) throw std::invalid_argument("run_ablation_grid: rows and seeds required");
    for (const auto& row : rows) {
        if (row.cfg.data.seed != rows.front().cfg.data.seed)
            throw std::invalid_argument("run_ablation_grid: rows must share the data seed");
    }
    GridResult grid;
    grid.seeds = seeds;
    for (const auto& row : rows) {
        GridRowResult rr;
        rr.name = row.name;
        for (std::uint64_t seed : seeds) {
            ExperimentConfig cfg = row.cfg;
            cfg.seed = seed;
            if (!out_root.empty()) cfg.out_dir = out_root + "/" + row.name + "_seed" + std::to_string(seed);
            auto res = run_experiment(cfg);
            rr.map_per_seed.push_back(res.final_eval.map);
            rr.rank1_per_seed.push_back(res.final_eval.rank1);
        }
        rr.mean_map = sample_mean(rr.map_per_seed);
        rr.mean_rank1 = sample_mean(rr.rank1_per_seed);
        grid.rows.push_back(std::move(rr));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].name == "baseline" || (grid.baseline_row < 0 && rows[i].cfg.mode == RunMode::baseline))
            grid.baseline_row = static_cast<int>(i);
    }
    return grid;
}

inline std::string grid_table_text(const GridResult& grid) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-24s %8s %8s %10s %10s %10s\n", "row", "mAP", "R1", "d_mAP", "d_R1", "p(mAP)");
    out << buf;
    const GridRowResult* base = grid.baseline_row >= 0 ? &grid.rows[static_cast<std::size_t>(grid.baseline_row)] : nullptr;
    for (const auto& row : grid.rows) {
        double dmap = 0.0, dr1 = 0.0, p = 1.0;
        if (base != nullptr && &row != base) {
            dmap = row.mean_map - base->mean_map;
            dr1 = row.mean_rank1 - base->mean_rank1;
            if (row.map_per_seed.size() >= 2) p = paired_t_test(row.map_per_seed, base->map_per_seed).p_one_sided;
        }
        std::snprintf(buf, sizeof(buf), "%-24s %8.4f %8.4f %+10.4f %+10.4f %10.4g\n", row.name.c_str(), row.mean_map,
                      row.mean_rank1, dmap, dr1, p);
        out << buf;
    }
    return out.str();
}

inline std::string grid_csv(const GridResult& grid) {
    std::ostringstream out;
    out << "row,seed,map,rank1\n";
    char buf[128];
    for (const auto& row : grid.rows) {
        for (std::size_t i = 0; i < grid.seeds.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s,%llu,%.17g,%.17g\n", row.name.c_str(),
                          static_cast<unsigned long long>(grid.seeds[i]), row.map_per_seed[i], row.rank1_per_seed[i]);
            out << buf;
        }
    }
    return out.str();
}

// ---- plots ----

// Writes loss curves (and eval curves when present) for the given runs.
// Returns the written file paths. Names are derived from `stem`.
inline std::vector<std::string> plot_metrics(const std::vector<std::pair<std::string, const RunHistory*>>& runs,
                                             const std::string& out_dir, const std::string& stem) {
    if (runs.empty()) throw std::invalid_argument("plot_metrics: no runs");
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;

    std::vector<Series> loss_series;
    bool any_mte = false;
    for (const auto& [label, hist] : runs) {
        if (hist->iterations.empty()) throw std::invalid_argument("plot_metrics: empty history for " + label);
        Series mtr{label + " L_mtr", {}, {}};
        Series mte{label + " L_mte", {}, {}};
        for (const auto& it : hist->iterations) {
            mtr.x.push_back(it.iteration);
            mtr.y.push_back(it.loss_mtr);
            if (it.loss_mte != 0.0) {
                mte.x.push_back(it.iteration);
                mte.y.push_back(it.loss_mte);
            }
        }
        loss_series.push_back(std::move(mtr));
        if (!mte.x.empty()) {
            loss_series.push_back(std::move(mte));
            any_mte = true;
        }
    }
    (void)any_mte;
    const std::string loss_path = out_dir + "/" + stem + "_loss.svg";
    write_svg_plot(loss_series, "training loss", "iteration", "loss", loss_path);
    written.push_back(loss_path);

    std::vector<Series> eval_series;
    for (const auto& [label, hist] : runs) {
        if (hist->evals.empty()) continue;
        Series map_s{label + " mAP", {}, {}};
        Series r1_s{label + " R1", {}, {}};
        for (const auto& e : hist->evals) {
            map_s.x.push_back(e.epoch);
            map_s.y.push_back(e.retrieval.map);
            r1_s.x.push_back(e.epoch);
            r1_s.y.push_back(e.retrieval.rank1);
        }
        eval_series.push_back(std::move(map_s));
        eval_series.push_back(std::move(r1_s));
    }
    if (!eval_series.empty()) {
        const std::string eval_path = out_dir + "/" + stem + "_eval.svg";
        write_svg_plot(eval_series, "held-out retrieval", "epoch", "metric", eval_path);
        written.push_back(eval_path);
    }
    return written;
}

}  // namespace metadg
