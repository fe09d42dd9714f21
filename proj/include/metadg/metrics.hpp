#pragma once

// JSON-lines metrics stream: one object per training iteration, one per
// held-out evaluation. Identical runs produce byte-identical streams.

#include <metadg/trainer.hpp>

#include <json.hpp>

#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace metadg {

inline nlohmann::json iteration_to_json(const IterationMetrics& m) {
    return {{"kind", "iteration"}, {"iteration", m.iteration}, {"epoch", m.epoch}, {"l_mtr", m.loss_mtr},
            {"l_mte", m.loss_mte}, {"lr", m.lr},               {"grad_norm", m.grad_norm}};
}

inline nlohmann::json eval_to_json(const EvalMetrics& e) {
    return {{"kind", "eval"},
            {"epoch", e.epoch},
            {"map", e.retrieval.map},
            {"rank1", e.retrieval.rank1},
            {"n_query", e.retrieval.n_query},
            {"n_gallery", e.retrieval.n_gallery}};
}

inline void write_metrics_stream(const RunHistory& history, std::ostream& out) {
    for (const auto& m : history.iterations) out << iteration_to_json(m).dump() << "\n";
    for (const auto& e : history.evals) out << eval_to_json(e).dump() << "\n";
}

inline void write_metrics_file(const RunHistory& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_metrics_file: cannot open " + path);
    write_metrics_stream(history, out);
}

inline RunHistory read_metrics_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_metrics_file: cannot open " + path);
    RunHistory history;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        if (j.at("kind") == "iteration") {
            IterationMetrics m;
            m.iteration = j.at("iteration").get<int>();
            m.epoch = j.at("epoch").get<int>();
            m.loss_mtr = j.at("l_mtr").get<double>();
            m.loss_mte = j.at("l_mte").get<double>();
            m.lr = j.at("lr").get<double>();
            m.grad_norm = j.at("grad_norm").get<double>();
            history.iterations.push_back(m);
        } else {
            EvalMetrics e;
            e.epoch = j.at("epoch").get<int>();
            e.retrieval.map = j.at("map").get<double>();
            e.retrieval.rank1 = j.at("rank1").get<double>();
            e.retrieval.n_query = j.at("n_query").get<int>();
            e.retrieval.n_gallery = j.at("n_gallery").get<int>();
            history.evals.push_back(e);
        }
    }
    return history;
}

}  // namespace metadg
