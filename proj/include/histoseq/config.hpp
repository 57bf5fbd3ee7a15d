#pragma once

// Pipeline configuration: flat key = value text with one [section] per stage.
//
//   [pipeline]  patch_side, strategy, extractor, classes, seed
//   [input]     annotations, slides (';'-separated, paired), features_manifest
//   [schema]    annotation_element, coordinate_element, label_attribute, ...
//   [model]     hidden, bidirectional
//   [train]     optimizer, learning_rate, momentum, squared_grad_decay,
//               grad_decay, epsilon, max_epochs, patience, dropout_rate, clip_norm
//   [split]     mode (kfold | holdout), k, train, validation, test

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "histoseq/annotation.hpp"
#include "histoseq/core.hpp"
#include "histoseq/evaluation.hpp"
#include "histoseq/scanning.hpp"
#include "histoseq/training.hpp"
#include "json.hpp"

namespace histoseq {

enum class SplitMode { kfold, holdout };

struct PipelineConfig {
    int patch_side = kDefaultPatchSide;
    ScanStrategy strategy = ScanStrategy::serpentine;
    std::string extractor = "toy";
    std::vector<std::string> classes{"Benign", "InSitu", "Invasive"};
    std::uint64_t seed = 0;

    std::vector<std::filesystem::path> annotations;
    std::vector<std::filesystem::path> slides;
    std::filesystem::path features_manifest;

    AnnotationSchema schema;
    ModelSpec model;
    TrainConfig train;

    SplitMode split_mode = SplitMode::kfold;
    int k = 10;
    SplitRatios ratios;

    int class_count() const { return static_cast<int>(classes.size()); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["pipeline"] = {{"patch_side", patch_side},
                         {"strategy", std::string(to_string(strategy))},
                         {"extractor", extractor},
                         {"classes", classes},
                         {"seed", seed}};
        auto paths = [](const std::vector<std::filesystem::path>& v) {
            std::vector<std::string> out;
            for (const auto& p : v) out.push_back(p.generic_string());
            return out;
        };
        j["input"] = {{"annotations", paths(annotations)},
                      {"slides", paths(slides)},
                      {"features_manifest", features_manifest.generic_string()}};
        j["schema"] = {{"annotation_element", schema.annotation_element},
                       {"coordinate_element", schema.coordinate_element},
                       {"label_attribute", schema.label_attribute},
                       {"id_attribute", schema.id_attribute},
                       {"x_attribute", schema.x_attribute},
                       {"y_attribute", schema.y_attribute},
                       {"order_attribute", schema.order_attribute},
                       {"coordinate_scale", schema.coordinate_scale}};
        j["model"] = {{"hidden", model.hidden}, {"bidirectional", model.bidirectional}};
        j["train"] = train_config_json();
        j["split"] = {{"mode", split_mode == SplitMode::kfold ? "kfold" : "holdout"},
                      {"k", k},
                      {"train", ratios.train},
                      {"validation", ratios.validation},
                      {"test", ratios.test}};
        return j;
    }

private:
    nlohmann::json train_config_json() const {
        return {{"optimizer", std::string(to_string(train.optimizer))},
                {"learning_rate", train.learning_rate},
                {"momentum", train.momentum},
                {"squared_grad_decay", train.squared_grad_decay},
                {"grad_decay", train.grad_decay},
                {"epsilon", train.epsilon},
                {"max_epochs", train.max_epochs},
                {"patience", train.patience ? nlohmann::json(*train.patience) : nlohmann::json(nullptr)},
                {"dropout_rate", train.dropout_rate},
                {"clip_norm", train.clip_norm}};
    }
};

/// Every problem found in a config file, reported together.
class ConfigError : public ValidationError {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : ValidationError(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "configuration has " + std::to_string(p.size()) + " problem(s):";
        for (const auto& x : p) s += "\n  - " + x;
        return s;
    }
    std::vector<std::string> problems_;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

}  // namespace detail

/// Defaults: scan2, lr 1e-4, patience 5, 30 epochs; RMSprop with
/// dropout 0.5, except 4-class problems which use ADAM with dropout 0.6.
inline void apply_class_defaults(PipelineConfig& cfg) {
    if (cfg.class_count() == 4) {
        cfg.train.optimizer = OptimizerKind::adam;
        cfg.train.dropout_rate = 0.6;
    } else {
        cfg.train.optimizer = OptimizerKind::rmsprop;
        cfg.train.dropout_rate = 0.5;
    }
}

inline PipelineConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {}) {
    boost::property_tree::ptree tree;
    try {
        std::istringstream in(text);
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError({"line " + std::to_string(e.line()) + ": " + e.message()});
    }

    PipelineConfig cfg;
    std::vector<std::string> problems;
    const std::map<std::string, std::set<std::string>> known{
        {"pipeline", {"patch_side", "strategy", "extractor", "classes", "seed"}},
        {"input", {"annotations", "slides", "features_manifest"}},
        {"schema",
         {"annotation_element", "coordinate_element", "label_attribute", "id_attribute", "x_attribute", "y_attribute",
          "order_attribute", "coordinate_scale"}},
        {"model", {"hidden", "bidirectional"}},
        {"train",
         {"optimizer", "learning_rate", "momentum", "squared_grad_decay", "grad_decay", "epsilon", "max_epochs",
          "patience", "dropout_rate", "clip_norm"}},
        {"split", {"mode", "k", "train", "validation", "test"}}};
    for (const auto& [section, body] : tree) {
        auto it = known.find(section);
        if (it == known.end()) {
            problems.push_back("unknown section [" + section + "]");
            continue;
        }
        for (const auto& [key, value] : body)
            if (!it->second.count(key)) problems.push_back("unknown key " + section + "." + key);
    }

    auto get = [&tree](const std::string& path) -> std::optional<std::string> {
        if (auto v = tree.get_optional<std::string>(path)) return *v;
        return std::nullopt;
    };
    auto number = [&](const std::string& path, auto& target) {
        using V = std::remove_reference_t<decltype(target)>;
        if (auto s = get(path)) {
            try {
                std::size_t pos = 0;
                V v{};
                if constexpr (std::is_floating_point_v<V>) v = static_cast<V>(std::stod(*s, &pos));
                else if constexpr (std::is_same_v<V, std::uint64_t>) v = std::stoull(*s, &pos);
                else v = static_cast<V>(std::stoll(*s, &pos));
                if (pos != s->size()) throw std::invalid_argument("trailing");
                target = v;
            } catch (const std::exception&) {
                problems.push_back(path + ": '" + *s + "' is not a valid number");
            }
        }
    };
    auto boolean = [&](const std::string& path, bool& target) {
        if (auto s = get(path)) {
            if (*s == "true" || *s == "1" || *s == "yes") target = true;
            else if (*s == "false" || *s == "0" || *s == "no") target = false;
            else problems.push_back(path + ": expected true/false, got '" + *s + "'");
        }
    };
    auto resolve = [&base_dir](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };

    number("pipeline.patch_side", cfg.patch_side);
    if (auto s = get("pipeline.strategy")) {
        if (auto st = parse_strategy(*s)) cfg.strategy = *st;
        else problems.push_back("pipeline.strategy: expected scan1, scan2 or scan3, got '" + *s + "'");
    }
    if (auto s = get("pipeline.extractor")) cfg.extractor = *s;
    if (auto s = get("pipeline.classes")) cfg.classes = detail::split_list(*s, ',');
    number("pipeline.seed", cfg.seed);

    if (auto s = get("input.annotations"))
        for (const auto& p : detail::split_list(*s, ';')) cfg.annotations.push_back(resolve(p));
    if (auto s = get("input.slides"))
        for (const auto& p : detail::split_list(*s, ';')) cfg.slides.push_back(resolve(p));
    if (auto s = get("input.features_manifest")) cfg.features_manifest = resolve(*s);

    auto& sc = cfg.schema;
    for (auto [key, target] : {std::pair{"annotation_element", &sc.annotation_element},
                               std::pair{"coordinate_element", &sc.coordinate_element},
                               std::pair{"label_attribute", &sc.label_attribute},
                               std::pair{"id_attribute", &sc.id_attribute}, std::pair{"x_attribute", &sc.x_attribute},
                               std::pair{"y_attribute", &sc.y_attribute},
                               std::pair{"order_attribute", &sc.order_attribute}}) {
        if (auto s = get(std::string("schema.") + key)) *target = *s;
    }
    number("schema.coordinate_scale", sc.coordinate_scale);

    number("model.hidden", cfg.model.hidden);
    boolean("model.bidirectional", cfg.model.bidirectional);

    apply_class_defaults(cfg);
    auto& tc = cfg.train;
    if (auto s = get("train.optimizer")) {
        if (auto k = parse_optimizer(*s)) tc.optimizer = *k;
        else problems.push_back("train.optimizer: expected sgdm, rmsprop or adam, got '" + *s + "'");
    }
    number("train.learning_rate", tc.learning_rate);
    number("train.momentum", tc.momentum);
    number("train.squared_grad_decay", tc.squared_grad_decay);
    number("train.grad_decay", tc.grad_decay);
    number("train.epsilon", tc.epsilon);
    number("train.max_epochs", tc.max_epochs);
    if (auto s = get("train.patience")) {
        if (*s == "none" || s->empty()) {
            tc.patience.reset();
        } else {
            int p = 0;
            number("train.patience", p);
            tc.patience = p;
        }
    }
    number("train.dropout_rate", tc.dropout_rate);
    number("train.clip_norm", tc.clip_norm);
    tc.seed = cfg.seed;

    if (auto s = get("split.mode")) {
        if (*s == "kfold") cfg.split_mode = SplitMode::kfold;
        else if (*s == "holdout") cfg.split_mode = SplitMode::holdout;
        else problems.push_back("split.mode: expected kfold or holdout, got '" + *s + "'");
    }
    number("split.k", cfg.k);
    number("split.train", cfg.ratios.train);
    number("split.validation", cfg.ratios.validation);
    number("split.test", cfg.ratios.test);

    // Semantic checks.
    if (cfg.patch_side < 1) problems.emplace_back("pipeline.patch_side must be >= 1");
    if (cfg.extractor != "toy" && cfg.extractor != "manifest") {
        problems.push_back("pipeline.extractor: expected toy or manifest, got '" + cfg.extractor + "'");
    }
    if (cfg.classes.size() < 2) problems.emplace_back("pipeline.classes must name at least two classes");
    if (cfg.model.hidden < 1) problems.emplace_back("model.hidden must be >= 1");
    if (cfg.k < 2) problems.emplace_back("split.k must be >= 2");
    if (std::abs(cfg.ratios.train + cfg.ratios.validation + cfg.ratios.test - 1.0) > 1e-9) {
        problems.emplace_back("split ratios must sum to 1");
    }
    if (cfg.annotations.size() != cfg.slides.size()) {
        problems.emplace_back("input.annotations and input.slides must list the same number of files");
    }
    for (const auto& e : tc.validate()) problems.push_back("train." + e);
    cfg.schema.classes = cfg.classes;

    if (!problems.empty()) throw ConfigError(problems);
    return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config file not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.parent_path());
}

/// Checks that referenced inputs exist; used at the start of a run.
inline void require_inputs(const PipelineConfig& cfg) {
    std::vector<std::string> problems;
    for (const auto& p : cfg.annotations)
        if (!std::filesystem::exists(p)) problems.push_back("annotation file not found: " + p.string());
    for (const auto& p : cfg.slides)
        if (!std::filesystem::exists(p)) problems.push_back("slide raster not found: " + p.string());
    if (cfg.extractor == "manifest" && !std::filesystem::exists(cfg.features_manifest)) {
        problems.push_back("features manifest not found: " + cfg.features_manifest.string());
    }
    if (!problems.empty()) throw ConfigError(problems);
}

}  // namespace histoseq
