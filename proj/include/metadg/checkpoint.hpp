#pragma once

// Self-describing JSON checkpoint archive. Floating-point payloads are
// hex-float strings (printf %a), which round-trip IEEE doubles exactly;
// the manifest carries names and shapes for every tensor.

#include <metadg/encoder.hpp>
#include <metadg/memory.hpp>

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metadg {

namespace detail {

inline nlohmann::json encode_mat(const ag::Mat& m) {
    nlohmann::json j;
    j["shape"] = {m.rows(), m.cols()};
    std::vector<std::string> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    char buf[40];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%a", m(i, c));
            data.emplace_back(buf);
        }
    }
    j["data"] = std::move(data);
    return j;
}

inline ag::Mat decode_mat(const nlohmann::json& j) {
    const auto shape = j.at("shape");
    ag::Mat m(shape.at(0).get<Eigen::Index>(), shape.at(1).get<Eigen::Index>());
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != m.size())
        throw std::runtime_error("checkpoint: tensor payload length does not match shape");
    std::size_t idx = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = std::strtod(data.at(idx++).get<std::string>().c_str(), nullptr);
    return m;
}

}  // namespace detail

struct Checkpoint {
    EncoderParams encoder;
    std::vector<IdentityMemory> memories;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
    nlohmann::json j;
    j["format"] = "metadg-checkpoint";
    j["version"] = 1;

    nlohmann::json enc;
    enc["input_dim"] = ckpt.encoder.config.input_dim;
    enc["hidden_dims"] = ckpt.encoder.config.hidden_dims;
    enc["embed_dim"] = ckpt.encoder.config.embed_dim;
    enc["use_metabn_last"] = ckpt.encoder.config.use_metabn_last;

    const auto lnames = ckpt.encoder.learnable_names();
    const auto bnames = ckpt.encoder.buffer_names();
    nlohmann::json tensors = nlohmann::json::object();
    for (std::size_t i = 0; i < lnames.size(); ++i) tensors[lnames[i]] = detail::encode_mat(ckpt.encoder.learnable[i]);
    for (std::size_t i = 0; i < bnames.size(); ++i) tensors[bnames[i]] = detail::encode_mat(ckpt.encoder.buffers[i]);
    enc["tensors"] = std::move(tensors);
    enc["manifest"] = {{"learnable", lnames}, {"buffers", bnames}};
    j["encoder"] = std::move(enc);

    nlohmann::json mems = nlohmann::json::array();
    for (const auto& m : ckpt.memories) {
        nlohmann::json jm;
        jm["domain_id"] = m.domain_id;
        jm["momentum"] = m.momentum;
        jm["temperature"] = m.temperature;
        jm["centroids"] = detail::encode_mat(m.centroids);
        mems.push_back(std::move(jm));
    }
    j["memories"] = std::move(mems);
    return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    if (j.at("format").get<std::string>() != "metadg-checkpoint")
        throw std::runtime_error("checkpoint: unrecognized format tag");
    Checkpoint ckpt;
    const auto& enc = j.at("encoder");
    ckpt.encoder.config.input_dim = enc.at("input_dim").get<int>();
    ckpt.encoder.config.hidden_dims = enc.at("hidden_dims").get<std::vector<int>>();
    ckpt.encoder.config.embed_dim = enc.at("embed_dim").get<int>();
    ckpt.encoder.config.use_metabn_last = enc.at("use_metabn_last").get<bool>();

    const auto& tensors = enc.at("tensors");
    for (const auto& name : ckpt.encoder.learnable_names())
        ckpt.encoder.learnable.push_back(detail::decode_mat(tensors.at(name)));
    for (const auto& name : ckpt.encoder.buffer_names())
        ckpt.encoder.buffers.push_back(detail::decode_mat(tensors.at(name)));

    for (const auto& jm : j.at("memories")) {
        IdentityMemory m;
        m.domain_id = jm.at("domain_id").get<int>();
        m.momentum = jm.at("momentum").get<double>();
        m.temperature = jm.at("temperature").get<double>();
        m.centroids = detail::decode_mat(jm.at("centroids"));
        ckpt.memories.push_back(std::move(m));
    }
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << checkpoint_to_json(ckpt).dump(1) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return checkpoint_from_json(j);
}

}  // namespace metadg
