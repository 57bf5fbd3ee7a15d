#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "histoseq/lstm.hpp"
#include "histoseq/training.hpp"
#include "json.hpp"

namespace histoseq {

inline constexpr const char* kCheckpointFormat = "histoseq-bilstm";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"optimizer", std::string(to_string(c.optimizer))},
            {"learning_rate", c.learning_rate},
            {"momentum", c.momentum},
            {"squared_grad_decay", c.squared_grad_decay},
            {"grad_decay", c.grad_decay},
            {"epsilon", c.epsilon},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience ? nlohmann::json(*c.patience) : nlohmann::json(nullptr)},
            {"dropout_rate", c.dropout_rate},
            {"seed", c.seed},
            {"clip_norm", c.clip_norm}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (auto k = parse_optimizer(j.at("optimizer").get<std::string>())) c.optimizer = *k;
    else throw DataError("checkpoint names an unknown optimizer");
    c.learning_rate = j.at("learning_rate").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.squared_grad_decay = j.at("squared_grad_decay").get<double>();
    c.grad_decay = j.at("grad_decay").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").is_null() ? std::nullopt : std::optional<int>(j.at("patience").get<int>());
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.clip_norm = j.value("clip_norm", 0.0);
    return c;
}

/// Tensors are stored column-major as flat arrays; float values survive the
/// trip through JSON doubles exactly.
template <typename T>
nlohmann::json model_to_json(const BiLstmModel<T>& m, const TrainConfig& config, std::uint64_t init_seed) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["scalar"] = sizeof(T) == 4 ? "float32" : "float64";
    j["shape"] = {{"input_size", m.input_size()},
                  {"hidden", m.hidden()},
                  {"classes", m.classes()},
                  {"bidirectional", m.bidirectional}};
    j["dropout_rate"] = m.dropout_rate;
    j["init_seed"] = init_seed;
    j["config"] = train_config_to_json(config);
    j["tensors"] = nlohmann::json::object();
    for_each_tensor(m, [&j](std::string_view name, const auto& t) {
        nlohmann::json arr = nlohmann::json::array();
        for (Eigen::Index k = 0; k < t.size(); ++k) arr.push_back(static_cast<double>(t.data()[k]));
        j["tensors"][std::string(name)] = {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::move(arr)}};
    });
    return j;
}

template <typename T>
struct Checkpoint {
    BiLstmModel<T> model;
    TrainConfig config;
    std::uint64_t init_seed = 0;
};

template <typename T>
Checkpoint<T> model_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kCheckpointFormat) throw DataError("not a model checkpoint");
    if (j.value("version", 0) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
    const auto& s = j.at("shape");
    const ModelShape shape{s.at("input_size").get<int>(), s.at("hidden").get<int>(), s.at("classes").get<int>(),
                           s.at("bidirectional").get<bool>()};
    Checkpoint<T> out;
    out.model = BiLstmModel<T>::zeros(shape);
    out.model.dropout_rate = j.at("dropout_rate").get<double>();
    out.init_seed = j.value("init_seed", std::uint64_t{0});
    out.config = train_config_from_json(j.at("config"));
    for_each_tensor(out.model, [&j](std::string_view name, auto& t) {
        const auto& tj = j.at("tensors").at(std::string(name));
        if (tj.at("rows").get<Eigen::Index>() != t.rows() || tj.at("cols").get<Eigen::Index>() != t.cols()) {
            throw DataError("checkpoint tensor " + std::string(name) + " has the wrong shape");
        }
        const auto& data = tj.at("data");
        if (static_cast<Eigen::Index>(data.size()) != t.size()) {
            throw DataError("checkpoint tensor " + std::string(name) + " has the wrong element count");
        }
        for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = static_cast<T>(data[static_cast<std::size_t>(k)].get<double>());
    });
    return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const BiLstmModel<T>& m, const TrainConfig& config,
                     std::uint64_t init_seed) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << model_to_json(m, config, init_seed).dump() << '\n';
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("checkpoint not found: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    return model_from_json<T>(j);
}

}  // namespace histoseq
