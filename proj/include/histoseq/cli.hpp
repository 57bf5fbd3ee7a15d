#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "histoseq/pipeline.hpp"

namespace histoseq::cli {

namespace fs = std::filesystem;

inline PipelineConfig config_or_default(const std::string& path) {
    if (path.empty()) {
        PipelineConfig cfg;
        apply_class_defaults(cfg);
        return cfg;
    }
    return load_config(path);
}

inline ScanStrategy strategy_or_throw(const std::string& s) {
    if (auto st = parse_strategy(s)) return *st;
    throw ValidationError("unknown scan strategy '" + s + "' (expected scan1, scan2 or scan3)");
}

/// Entry point shared by the executable and the tests. Returns the exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout) {
    CLI::App app{"Sequence classification of histology regions with a bidirectional LSTM"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolkitVersion));
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress logging");

    std::string config_path, out_dir = "histoseq_out";
    auto add_config = [&](CLI::App* sub) { sub->add_option("-c,--config", config_path, "Config file (INI)"); };
    auto add_out = [&](CLI::App* sub) { sub->add_option("-o,--out", out_dir, "Output directory"); };

    // extract-regions
    auto* regions_cmd = app.add_subcommand("extract-regions", "Parse annotations, rasterize, rotate and crop regions");
    add_config(regions_cmd);
    add_out(regions_cmd);
    std::string annotations_path, slide_path, classes_list;
    regions_cmd->add_option("--annotations", annotations_path, "Annotation XML (overrides config)");
    regions_cmd->add_option("--slide", slide_path, "Slide raster (overrides config)");
    regions_cmd->add_option("--classes", classes_list, "Comma-separated class names (overrides config)");

    // scan
    auto* scan_cmd = app.add_subcommand("scan", "Print a scan order as row,col lines");
    int scan_rows = 0, scan_cols = 0;
    std::string strategy_name = "scan2";
    scan_cmd->add_option("--rows", scan_rows, "Grid rows")->required()->check(CLI::PositiveNumber);
    scan_cmd->add_option("--cols", scan_cols, "Grid columns")->required()->check(CLI::PositiveNumber);
    scan_cmd->add_option("-s,--strategy", strategy_name, "scan1 | scan2 | scan3");

    // tile
    auto* tile_cmd = app.add_subcommand("tile", "Cut normalized regions into patches");
    add_config(tile_cmd);
    add_out(tile_cmd);
    std::string regions_manifest, tile_image_path, tile_label = "unlabelled";
    std::optional<std::string> tile_strategy;
    std::optional<int> patch_side;
    tile_cmd->add_option("--regions", regions_manifest, "regions.json from extract-regions");
    tile_cmd->add_option("--image", tile_image_path, "Tile a single raster instead");
    tile_cmd->add_option("--label", tile_label, "Label recorded for --image");
    tile_cmd->add_option("-s,--strategy", tile_strategy, "scan1 | scan2 | scan3");
    tile_cmd->add_option("--patch-side", patch_side, "Patch side in pixels")->check(CLI::PositiveNumber);

    // extract-features
    auto* feat_cmd = app.add_subcommand("extract-features", "Build feature sequences");
    add_config(feat_cmd);
    add_out(feat_cmd);
    std::string tiles_manifest, external_manifest;
    std::optional<std::string> feat_strategy, extractor_name;
    feat_cmd->add_option("--tiles", tiles_manifest, "tiles.json from tile");
    feat_cmd->add_option("-s,--strategy", feat_strategy, "scan1 | scan2 | scan3");
    feat_cmd->add_option("--extractor", extractor_name, "toy | manifest")->check(CLI::IsMember({"toy", "manifest"}));
    feat_cmd->add_option("--manifest", external_manifest, "Precomputed feature manifest (extractor=manifest)");

    // train
    auto* train_cmd = app.add_subcommand("train", "Hold-out training and test evaluation");
    add_config(train_cmd);
    add_out(train_cmd);
    std::string features_path;
    train_cmd->add_option("--features", features_path, "Feature manifest from extract-features");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a trained model");
    add_config(eval_cmd);
    add_out(eval_cmd);
    std::string model_path, split_path;
    eval_cmd->add_option("--model", model_path, "model.json from train");
    eval_cmd->add_option("--features", features_path, "Feature manifest");
    eval_cmd->add_option("--split", split_path, "split.json; restricts evaluation to the test subset");

    // cross-validate
    auto* cv_cmd = app.add_subcommand("cross-validate", "k-fold cross-validation");
    add_config(cv_cmd);
    add_out(cv_cmd);
    std::optional<int> folds;
    cv_cmd->add_option("--features", features_path, "Feature manifest from extract-features");
    cv_cmd->add_option("-k,--folds", folds, "Number of folds")->check(CLI::Range(2, 1000));

    // flops
    auto* flops_cmd = app.add_subcommand("flops", "Per-step inference FLOPs of the BiLSTM");
    int input_size = 1024, hidden = 2000, classes = 3;
    bool json_only = false;
    flops_cmd->add_option("--input-size", input_size, "Feature dimension I")->check(CLI::PositiveNumber);
    flops_cmd->add_option("--hidden", hidden, "Hidden units per direction H")->check(CLI::PositiveNumber);
    flops_cmd->add_option("--classes", classes, "Output classes C")->check(CLI::PositiveNumber);
    flops_cmd->add_flag("--json", json_only, "Print only the JSON report");

    // run-all
    auto* all_cmd = app.add_subcommand("run-all", "Run every stage from one config");
    add_config(all_cmd);
    add_out(all_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, std::cerr);
        return code == 0 ? 0 : static_cast<int>(ErrorKind::validation);
    }
    pipeline::quiet() = quiet;

    try {
        const fs::path out_path(out_dir);
        if (scan_cmd->parsed()) {
            const ScanOrder order = scan_order(GridDims{scan_rows, scan_cols}, strategy_or_throw(strategy_name));
            for (const auto& v : order.visits) out << v.row << ',' << v.col << '\n';
            return 0;
        }
        if (flops_cmd->parsed()) {
            const FlopsReport rep = bilstm_flops(input_size, hidden, classes);
            if (!json_only) out << rep << '\n';
            out << rep.to_json().dump(2) << '\n';
            return 0;
        }

        if (regions_cmd->parsed()) {
            PipelineConfig cfg = config_or_default(config_path);
            if (!classes_list.empty()) {
                cfg.classes = detail::split_list(classes_list, ',');
                cfg.schema.classes = cfg.classes;
            }
            if (!annotations_path.empty() || !slide_path.empty()) {
                if (annotations_path.empty() || slide_path.empty())
                    throw ValidationError("--annotations and --slide go together");
                cfg.annotations = {annotations_path};
                cfg.slides = {slide_path};
            }
            if (cfg.annotations.empty()) throw ValidationError("no annotations given (config input.annotations or --annotations)");
            pipeline::write_run_record(cfg, "extract-regions", out_path);
            out << pipeline::extract_regions(cfg, out_path).string() << '\n';
            return 0;
        }
        if (tile_cmd->parsed()) {
            PipelineConfig cfg = config_or_default(config_path);
            const ScanStrategy st = tile_strategy ? strategy_or_throw(*tile_strategy) : cfg.strategy;
            const int side = patch_side.value_or(cfg.patch_side);
            pipeline::write_run_record(cfg, "tile", out_path);
            if (!tile_image_path.empty()) {
                const Image img = read_raster(tile_image_path);
                const std::string rid = fs::path(tile_image_path).stem().string();
                pipeline::tile_image(img, rid, tile_label, pipeline::class_index(cfg.classes, tile_label), st, side,
                                     out_path / "tiles" / rid);
                out << (out_path / "tiles" / rid / "manifest.json").string() << '\n';
                return 0;
            }
            const fs::path src = regions_manifest.empty() ? out_path / "regions" / "regions.json" : fs::path(regions_manifest);
            out << pipeline::tile_regions(src, st, side, out_path).string() << '\n';
            return 0;
        }
        if (feat_cmd->parsed()) {
            PipelineConfig cfg = config_or_default(config_path);
            const std::string ext = extractor_name.value_or(cfg.extractor);
            pipeline::write_run_record(cfg, "extract-features", out_path);
            if (ext == "manifest") {
                const fs::path src = external_manifest.empty() ? cfg.features_manifest : fs::path(external_manifest);
                if (src.empty()) throw ValidationError("extractor 'manifest' needs --manifest or input.features_manifest");
                out << pipeline::import_features(src, out_path).string() << '\n';
                return 0;
            }
            const ScanStrategy st = feat_strategy ? strategy_or_throw(*feat_strategy) : cfg.strategy;
            const fs::path src = tiles_manifest.empty() ? out_path / "tiles" / "tiles.json" : fs::path(tiles_manifest);
            out << pipeline::extract_features(src, st, BlockStatsExtractor{}, out_path).string() << '\n';
            return 0;
        }

        auto features_for = [&](const PipelineConfig& cfg) {
            if (!features_path.empty()) return fs::path(features_path);
            if (!cfg.features_manifest.empty()) return cfg.features_manifest;
            return out_path / "features" / "features.json";
        };
        if (train_cmd->parsed()) {
            PipelineConfig cfg = config_or_default(config_path);
            pipeline::write_run_record(cfg, "train", out_path);
            const auto res = pipeline::train_stage(cfg, features_for(cfg), out_path);
            out << res.report.string() << '\n';
            return 0;
        }
        if (eval_cmd->parsed()) {
            PipelineConfig cfg = config_or_default(config_path);
            pipeline::write_run_record(cfg, "evaluate", out_path);
            const fs::path model = model_path.empty() ? out_path / "train" / "model.json" : fs::path(model_path);
            std::optional<fs::path> split;
            if (!split_path.empty()) split = split_path;
            out << pipeline::evaluate_stage(model, features_for(cfg), split, cfg.classes, out_path).string() << '\n';
            return 0;
        }
        if (cv_cmd->parsed()) {
            PipelineConfig cfg = config_or_default(config_path);
            pipeline::write_run_record(cfg, "cross-validate", out_path);
            out << pipeline::cross_validate_stage(cfg, features_for(cfg), folds.value_or(cfg.k), out_path).string()
                << '\n';
            return 0;
        }
        if (all_cmd->parsed()) {
            if (config_path.empty()) throw ValidationError("run-all needs --config");
            const auto res = pipeline::run_all(load_config(config_path), out_path);
            out << res.report.string() << '\n';
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "histoseq: error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "histoseq: error: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::data);
    }
    return static_cast<int>(ErrorKind::validation);
}

}  // namespace histoseq::cli
