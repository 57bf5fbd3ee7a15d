#pragma once

// File-based pipeline stages. Each stage reads the manifest written by the
// previous one and writes its own:
//
//   extract-regions -> regions/regions.json
//   tile            -> tiles/tiles.json
//   extract-features-> features/features.json
//   train           -> train/{model,history,split,report}.json
//   cross-validate  -> cv/cv_report.json

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "histoseq/annotation.hpp"
#include "histoseq/checkpoint.hpp"
#include "histoseq/config.hpp"
#include "histoseq/evaluation.hpp"
#include "histoseq/features.hpp"
#include "histoseq/flops.hpp"
#include "histoseq/image_io.hpp"
#include "histoseq/orientation.hpp"
#include "histoseq/scanning.hpp"
#include "histoseq/training.hpp"
#include "json.hpp"

namespace histoseq::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline bool& quiet() {
    static bool q = false;
    return q;
}

inline void log_info(const std::string& msg) {
    if (!quiet()) std::cerr << "[histoseq] " << msg << '\n';
}

inline void log_warn(const std::string& msg) { std::cerr << "[histoseq] warning: " << msg << '\n'; }

inline void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + " is not valid JSON: " + e.what());
    }
}

/// Missing upstream artifacts name the stage that produces them.
inline void require_manifest(const fs::path& path, const std::string& producer) {
    if (path.empty() || !fs::exists(path)) {
        throw ValidationError("manifest not found: " + (path.empty() ? std::string("<unset>") : path.string()) +
                              " (produce it with `histoseq " + producer + "`)");
    }
}

inline int class_index(const std::vector<std::string>& classes, const std::string& label) {
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i] == label) return static_cast<int>(i);
    return -1;
}

inline Image crop_reflect(const Image& src, long long x0, long long y0, int w, int h) {
    Image out(w, h, src.channels);
    for (int r = 0; r < h; ++r) {
        const int sr = reflect_index(y0 + r, src.height);
        for (int c = 0; c < w; ++c) {
            const int sc = reflect_index(x0 + c, src.width);
            for (int ch = 0; ch < src.channels; ++ch) out.at(r, c, ch) = src.at(sr, sc, ch);
        }
    }
    return out;
}

inline json bbox_json(const BoundingBox& b) {
    return {{"min_x", b.min_x}, {"min_y", b.min_y}, {"max_x", b.max_x}, {"max_y", b.max_y}};
}

// ---------------------------------------------------------------------------

inline fs::path extract_regions(const PipelineConfig& cfg, const fs::path& out_dir) {
    const fs::path dir = out_dir / "regions";
    fs::create_directories(dir);
    json manifest;
    manifest["stage"] = "extract-regions";
    manifest["classes"] = cfg.classes;
    manifest["patch_side"] = cfg.patch_side;
    manifest["regions"] = json::array();
    manifest["issues"] = json::array();

    for (std::size_t s = 0; s < cfg.annotations.size(); ++s) {
        std::ifstream in(cfg.annotations[s], std::ios::binary);
        if (!in) throw DataError("cannot read annotations " + cfg.annotations[s].string());
        const std::string xml((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const AnnotationSet set = parse_annotations(xml, cfg.schema);
        const Image slide = read_raster(cfg.slides[s]);
        const std::string stem = cfg.annotations[s].stem().string();

        for (const auto& issue : set.issues) {
            log_warn(stem + " region " + std::to_string(issue.region_id) + ": " + issue.message);
            manifest["issues"].push_back({{"slide", stem}, {"region", issue.region_id}, {"message", issue.message}});
        }
        for (const RegionRecord& rec : set.regions) {
            const std::string rid = stem + "_" + std::to_string(rec.region_id);
            if (!rec.known_label) {
                log_warn("region " + rid + " has unknown label '" + rec.label + "'; skipped");
                manifest["issues"].push_back(
                    {{"slide", stem}, {"region", rec.region_id}, {"message", "unknown label '" + rec.label + "'"}});
                continue;
            }
            const BoundingBox box = region_bounding_box(rec);
            RegionMask mask;
            try {
                mask = rasterize_mask(rec, box);
            } catch (const DataError& e) {
                log_warn(e.what());
                manifest["issues"].push_back({{"slide", stem}, {"region", rec.region_id}, {"message", e.what()}});
                continue;
            }
            const Image crop = crop_reflect(slide, box.min_x, box.min_y, mask.width, mask.height);
            const NormalizedRegion norm = normalize_rotation(crop, mask, cfg.patch_side);
            if (norm.degenerate_orientation) log_warn("region " + rid + " is isotropic; rotation skipped");

            const fs::path rdir = dir / rid;
            fs::create_directories(rdir);
            write_png(rdir / "image.png", norm.image);
            write_png(rdir / "mask.png", mask_to_image(norm.mask));
            BoundingBox world = norm.bbox;
            world.min_x += box.min_x;
            world.max_x += box.min_x;
            world.min_y += box.min_y;
            world.max_y += box.min_y;
            const json meta{{"region_id", rid},
                            {"label", rec.label},
                            {"label_index", class_index(cfg.classes, rec.label)},
                            {"rotation_deg", norm.rotation_deg},
                            {"degenerate_orientation", norm.degenerate_orientation},
                            {"bbox", bbox_json(world)},
                            {"width", norm.image.width},
                            {"height", norm.image.height},
                            {"area_px", rec.area_px},
                            {"metadata", rec.metadata}};
            write_json(rdir / "region.json", meta);
            json entry = meta;
            entry["dir"] = rid;
            manifest["regions"].push_back(entry);
        }
    }
    const fs::path path = dir / "regions.json";
    write_json(path, manifest);
    log_info("extracted " + std::to_string(manifest["regions"].size()) + " regions -> " + path.string());
    return path;
}

/// Tiles one raster; writes patch files and the per-region manifest.
inline json tile_image(const Image& image, const std::string& region_id, const std::string& label, int label_index,
                       ScanStrategy strategy, int patch_side, const fs::path& rdir) {
    fs::create_directories(rdir);
    const GridDims dims = grid_dims(image.height, image.width, patch_side);
    const ScanOrder order = scan_order(dims, strategy);
    const auto patches = tile_region(image, order, patch_side);
    json m;
    m["region_id"] = region_id;
    m["label"] = label;
    m["label_index"] = label_index;
    m["strategy"] = std::string(to_string(strategy));
    m["patch_side"] = patch_side;
    m["dims"] = {{"rows", dims.rows}, {"cols", dims.cols}};
    m["patches"] = json::array();
    for (const Patch& p : patches) {
        const std::string file = "patch_" + std::to_string(p.sequence_pos) + "_" + std::to_string(p.grid_pos.row) +
                                 "_" + std::to_string(p.grid_pos.col) + ".png";
        write_png(rdir / file, p.pixels);
        m["patches"].push_back({{"seq", p.sequence_pos}, {"row", p.grid_pos.row}, {"col", p.grid_pos.col}, {"file", file}});
    }
    write_json(rdir / "manifest.json", m);
    return m;
}

inline fs::path tile_regions(const fs::path& regions_manifest, ScanStrategy strategy, int patch_side,
                             const fs::path& out_dir) {
    require_manifest(regions_manifest, "extract-regions");
    const json regions = read_json(regions_manifest);
    const fs::path dir = out_dir / "tiles";
    json manifest;
    manifest["stage"] = "tile";
    manifest["strategy"] = std::string(to_string(strategy));
    manifest["patch_side"] = patch_side;
    manifest["classes"] = regions.value("classes", json::array());
    manifest["regions"] = json::array();
    for (const auto& r : regions.at("regions")) {
        const std::string rid = r.at("region_id").get<std::string>();
        const Image image = read_png(regions_manifest.parent_path() / r.at("dir").get<std::string>() / "image.png");
        const json m = tile_image(image, rid, r.at("label").get<std::string>(), r.at("label_index").get<int>(),
                                  strategy, patch_side, dir / rid);
        manifest["regions"].push_back({{"region_id", rid},
                                       {"label", m["label"]},
                                       {"label_index", m["label_index"]},
                                       {"dir", rid},
                                       {"rows", m["dims"]["rows"]},
                                       {"cols", m["dims"]["cols"]},
                                       {"m", m["patches"].size()}});
    }
    const fs::path path = dir / "tiles.json";
    write_json(path, manifest);
    log_info("tiled " + std::to_string(manifest["regions"].size()) + " regions -> " + path.string());
    return path;
}

/// Reads every region's patches in `strategy` order and writes the feature
/// manifest. Tiles may have been cut in any order; grid positions are used.
inline fs::path extract_features(const fs::path& tiles_manifest, ScanStrategy strategy, const FeatureExtractor& extractor,
                                 const fs::path& out_dir) {
    require_manifest(tiles_manifest, "tile");
    const json tiles = read_json(tiles_manifest);
    FeatureDataset data;
    data.classes = tiles.value("classes", std::vector<std::string>{});
    data.metadata = {{"extractor", extractor.name()},
                     {"strategy", std::string(to_string(strategy))},
                     {"patch_side", tiles.value("patch_side", kDefaultPatchSide)},
                     {"preprocessing", "raw RGB patches, no colour normalization"}};
    for (const auto& r : tiles.at("regions")) {
        const fs::path rdir = tiles_manifest.parent_path() / r.at("dir").get<std::string>();
        const json m = read_json(rdir / "manifest.json");
        std::map<std::pair<int, int>, std::string> files;
        for (const auto& p : m.at("patches")) files[{p.at("row").get<int>(), p.at("col").get<int>()}] = p.at("file");
        const GridDims dims{m.at("dims").at("rows").get<int>(), m.at("dims").at("cols").get<int>()};
        const ScanOrder order = scan_order(dims, strategy);
        std::vector<Patch> patches;
        for (std::size_t k = 0; k < order.visits.size(); ++k) {
            const auto v = order.visits[k];
            auto it = files.find({v.row, v.col});
            if (it == files.end()) {
                throw DataError("region " + m.at("region_id").get<std::string>() + " is missing patch (" +
                                std::to_string(v.row) + "," + std::to_string(v.col) + ")");
            }
            patches.push_back(Patch{read_png(rdir / it->second), v, static_cast<int>(k)});
        }
        data.sequences.push_back(build_sequence(patches, extractor, m.at("label_index").get<int>(),
                                                m.at("region_id").get<std::string>()));
    }
    const fs::path path = write_feature_manifest(out_dir / "features", data);
    log_info("built " + std::to_string(data.sequences.size()) + " feature sequences -> " + path.string());
    return path;
}

/// Validates an externally produced manifest and copies it into the run.
inline fs::path import_features(const fs::path& manifest, const fs::path& out_dir) {
    require_manifest(manifest, "extract-features");
    const FeatureDataset data = load_feature_manifest(manifest);
    const fs::path path = write_feature_manifest(out_dir / "features", data);
    log_info("imported " + std::to_string(data.sequences.size()) + " feature sequences -> " + path.string());
    return path;
}

inline FeatureDataset load_features_for(const PipelineConfig& cfg, const fs::path& manifest) {
    require_manifest(manifest, "extract-features");
    FeatureDataset data = load_feature_manifest(manifest);
    if (data.sequences.empty()) throw DataError("feature manifest " + manifest.string() + " has no regions");
    for (const auto& s : data.sequences) {
        if (s.label < 0 || s.label >= cfg.class_count()) {
            throw DataError("region '" + s.region_id + "' label index " + std::to_string(s.label) +
                            " is outside the configured classes");
        }
    }
    return data;
}

inline json history_json(const TrainHistory& h) {
    json j;
    j["stop_reason"] = std::string(to_string(h.stop_reason));
    j["best_epoch"] = h.best_epoch;
    j["epochs"] = json::array();
    for (const auto& e : h.epochs) {
        j["epochs"].push_back({{"epoch", e.epoch},
                               {"train_loss", e.train_loss},
                               {"val_loss", e.val_loss ? json(*e.val_loss) : json(nullptr)},
                               {"val_accuracy", e.val_accuracy ? json(*e.val_accuracy) : json(nullptr)}});
    }
    return j;
}

inline std::string eval_table(const EvalReport& r, const std::vector<std::string>& classes) {
    CrossValidationReport single = aggregate({r});
    return format_table(single, classes);
}

struct TrainOutputs {
    fs::path model;
    fs::path report;
    fs::path split;
};

/// Hold-out training with the configured ratios; evaluates on the test part.
inline TrainOutputs train_stage(const PipelineConfig& cfg, const fs::path& features_manifest, const fs::path& out_dir) {
    const FeatureDataset data = load_features_for(cfg, features_manifest);
    const auto labels = labels_of(data.sequences);
    const auto ids = ids_of(data.sequences);
    const SplitPlan plan = split(labels, ids, cfg.ratios, cfg.seed, cfg.class_count());
    for (const auto& w : plan.warnings) log_warn(w);
    const auto train_set = gather(data.sequences, plan.members(Subset::train));
    const auto val_set = gather(data.sequences, plan.members(Subset::validation));
    const auto test_set = gather(data.sequences, plan.members(Subset::test));

    const ModelShape shape{static_cast<int>(data.sequences.front().dim()), cfg.model.hidden, cfg.class_count(),
                           cfg.model.bidirectional};
    log_info("training on " + std::to_string(train_set.size()) + " sequences (validation " +
             std::to_string(val_set.size()) + ", test " + std::to_string(test_set.size()) + ")");
    auto result = train(BiLstmModel<float>::initialized(shape, cfg.seed), train_set, val_set, cfg.train);

    const fs::path dir = out_dir / "train";
    fs::create_directories(dir);
    TrainOutputs out{dir / "model.json", dir / "report.json", dir / "split.json"};
    save_checkpoint(out.model, result.model, cfg.train, cfg.seed);
    write_json(dir / "history.json", history_json(result.history));
    write_json(out.split, plan.to_json());
    const EvalReport rep = evaluate_model(result.model, test_set);
    json rj = rep.to_json();
    rj["subset"] = "test";
    rj["classes"] = cfg.classes;
    write_json(out.report, rj);
    std::ofstream(dir / "report.txt") << eval_table(rep, cfg.classes);
    return out;
}

inline fs::path evaluate_stage(const fs::path& model_path, const fs::path& features_manifest,
                               const std::optional<fs::path>& split_path, const std::vector<std::string>& classes,
                               const fs::path& out_dir) {
    require_manifest(model_path, "train");
    require_manifest(features_manifest, "extract-features");
    const auto ckpt = load_checkpoint<float>(model_path);
    const FeatureDataset data = load_feature_manifest(features_manifest);
    std::vector<FeatureSequence> subset;
    if (split_path) {
        const json plan = read_json(*split_path);
        const auto& assign = plan.at("assignment");
        for (const auto& s : data.sequences)
            if (assign.contains(s.region_id) && assign.at(s.region_id).get<int>() == static_cast<int>(Subset::test))
                subset.push_back(s);
    } else {
        subset = data.sequences;
    }
    const EvalReport rep = evaluate_model(ckpt.model, subset);
    json rj = rep.to_json();
    rj["subset"] = split_path ? "test" : "all";
    rj["classes"] = classes;
    const fs::path path = out_dir / "evaluation.json";
    write_json(path, rj);
    std::ofstream(out_dir / "evaluation.txt") << eval_table(rep, classes);
    return path;
}

inline fs::path cross_validate_stage(const PipelineConfig& cfg, const fs::path& features_manifest, int k,
                                     const fs::path& out_dir) {
    const FeatureDataset data = load_features_for(cfg, features_manifest);
    log_info(std::to_string(k) + "-fold cross-validation over " + std::to_string(data.sequences.size()) + " sequences");
    const CrossValidationReport rep =
        cross_validate<float>(data.sequences, cfg.class_count(), cfg.model, cfg.train, k, cfg.seed);
    for (const auto& w : rep.warnings) log_warn(w);
    const fs::path dir = out_dir / "cv";
    json j = rep.to_json();
    j["classes"] = cfg.classes;
    j["k"] = k;
    write_json(dir / "cv_report.json", j);
    std::ofstream(dir / "cv_table.txt") << format_table(rep, cfg.classes);
    return dir / "cv_report.json";
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

/// Config snapshot, seeds and version. The timestamp lives in its own file so
/// the record itself is reproducible.
inline void write_run_record(const PipelineConfig& cfg, const std::string& command, const fs::path& out_dir) {
    json rec;
    rec["toolkit_version"] = kToolkitVersion;
    rec["command"] = command;
    rec["config"] = cfg.to_json();
    rec["seeds"] = {{"master", cfg.seed}, {"train", cfg.train.seed}};
    write_json(out_dir / "run.json", rec);
    write_json(out_dir / "run_timestamp.json", {{"timestamp", utc_timestamp()}});
}

struct RunAllOutputs {
    fs::path features;
    fs::path report;
    fs::path flops;
};

inline RunAllOutputs run_all(const PipelineConfig& cfg, const fs::path& out_dir) {
    require_inputs(cfg);
    write_run_record(cfg, "run-all", out_dir);
    fs::path features;
    if (cfg.extractor == "manifest") {
        features = import_features(cfg.features_manifest, out_dir);
    } else {
        if (cfg.annotations.empty()) throw ValidationError("run-all needs input.annotations and input.slides");
        const fs::path regions = extract_regions(cfg, out_dir);
        const fs::path tiles = tile_regions(regions, cfg.strategy, cfg.patch_side, out_dir);
        features = extract_features(tiles, cfg.strategy, BlockStatsExtractor{}, out_dir);
    }
    RunAllOutputs out;
    out.features = features;
    if (cfg.split_mode == SplitMode::kfold) {
        out.report = cross_validate_stage(cfg, features, cfg.k, out_dir);
    } else {
        out.report = train_stage(cfg, features, out_dir).report;
    }
    const FeatureDataset data = load_feature_manifest(features);
    const FlopsReport fr = bilstm_flops(data.sequences.front().dim(), cfg.model.hidden, cfg.class_count());
    out.flops = out_dir / "flops.json";
    write_json(out.flops, fr.to_json());
    return out;
}

}  // namespace histoseq::pipeline
