#pragma once

// Patch features and D-by-m feature sequences, plus the JSON/CSV manifest used
// to exchange externally computed features.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "histoseq/core.hpp"
#include "histoseq/scanning.hpp"
#include "json.hpp"

namespace histoseq {

using FeatureVector = Eigen::VectorXd;

struct FeatureSequence {
    Eigen::MatrixXd features;  // D x m, column t = patch t in scan order
    int label = 0;
    std::string region_id;

    Eigen::Index dim() const noexcept { return features.rows(); }
    Eigen::Index length() const noexcept { return features.cols(); }
};

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual int dim() const = 0;
    virtual FeatureVector extract(const Image& patch) const = 0;
};

/// Per-channel mean and standard deviation over a 4x4 block partition.
/// Layout: ((block_row * 4 + block_col) * channels + ch) * 2 + {0: mean, 1: std}.
class BlockStatsExtractor final : public FeatureExtractor {
public:
    static constexpr int kGrid = 4;
    static constexpr int kChannels = 3;

    std::string name() const override { return "toy"; }
    int dim() const override { return kGrid * kGrid * kChannels * 2; }

    FeatureVector extract(const Image& patch) const override {
        if (patch.channels != kChannels || patch.width < kGrid || patch.height < kGrid) {
            throw ValidationError("toy extractor expects an RGB patch of at least 4x4 pixels");
        }
        FeatureVector out(dim());
        for (int br = 0; br < kGrid; ++br) {
            const int r0 = br * patch.height / kGrid;
            const int r1 = (br + 1) * patch.height / kGrid;
            for (int bc = 0; bc < kGrid; ++bc) {
                const int c0 = bc * patch.width / kGrid;
                const int c1 = (bc + 1) * patch.width / kGrid;
                const double n = static_cast<double>(r1 - r0) * (c1 - c0);
                for (int ch = 0; ch < kChannels; ++ch) {
                    double sum = 0.0, sq = 0.0;
                    for (int r = r0; r < r1; ++r)
                        for (int c = c0; c < c1; ++c) {
                            const double v = patch.at(r, c, ch);
                            sum += v;
                            sq += v * v;
                        }
                    const double mean = sum / n;
                    const double var = std::max(0.0, sq / n - mean * mean);
                    const int base = ((br * kGrid + bc) * kChannels + ch) * 2;
                    out[base] = mean / 255.0;
                    out[base + 1] = std::sqrt(var) / 128.0;
                }
            }
        }
        return out;
    }
};

inline FeatureVector toy_extract(const Patch& patch) { return BlockStatsExtractor{}.extract(patch.pixels); }

inline FeatureSequence build_sequence(std::span<const Patch> patches, const FeatureExtractor& extractor, int label,
                                      std::string region_id = {}) {
    if (patches.empty()) throw ValidationError("cannot build a sequence from zero patches");
    FeatureSequence seq;
    seq.label = label;
    seq.region_id = std::move(region_id);
    seq.features.resize(extractor.dim(), static_cast<Eigen::Index>(patches.size()));
    for (std::size_t t = 0; t < patches.size(); ++t) {
        FeatureVector f = extractor.extract(patches[t].pixels);
        if (f.size() != extractor.dim()) {
            throw ValidationError("extractor '" + extractor.name() + "' returned dimension " +
                                  std::to_string(f.size()) + ", declared " + std::to_string(extractor.dim()));
        }
        seq.features.col(static_cast<Eigen::Index>(t)) = f;
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Manifest: { "dim": D, "regions": [ { "id", "label", "m", "file" } ] }
// Feature CSV: D rows, m comma-separated columns, 9 significant digits.

struct FeatureDataset {
    std::vector<FeatureSequence> sequences;
    std::vector<std::string> classes;
    nlohmann::json metadata = nlohmann::json::object();
};

inline void write_feature_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    char buf[32];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.9g", m(r, c));
            if (c) out << ',';
            out << buf;
        }
        out << '\n';
    }
}

inline Eigen::MatrixXd read_feature_csv(const std::filesystem::path& path, const std::string& region_id) {
    std::ifstream in(path);
    if (!in) throw DataError("feature file for region '" + region_id + "' not found: " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::vector<double> row;
        std::size_t start = 0;
        while (start <= line.size()) {
            std::size_t end = line.find(',', start);
            if (end == std::string::npos) end = line.size();
            const std::string cell = line.substr(start, end - start);
            char* stop = nullptr;
            const double v = std::strtod(cell.c_str(), &stop);
            if (stop == cell.c_str()) {
                throw DataError("region '" + region_id + "': unparsable value at (" + std::to_string(rows.size()) +
                                "," + std::to_string(row.size()) + ")");
            }
            if (!std::isfinite(v)) {
                throw DataError("region '" + region_id + "': non-finite value at (" + std::to_string(rows.size()) +
                                "," + std::to_string(row.size()) + ")");
            }
            row.push_back(v);
            start = end + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw DataError("region '" + region_id + "': ragged row " + std::to_string(rows.size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("region '" + region_id + "': empty feature file");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return m;
}

/// Writes `<dir>/<stem>.json` plus one CSV per region next to it.
inline std::filesystem::path write_feature_manifest(const std::filesystem::path& dir, const FeatureDataset& data,
                                                    const std::string& stem = "features") {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    const long long dim = data.sequences.empty() ? 0 : data.sequences.front().dim();
    manifest["dim"] = dim;
    if (!data.classes.empty()) manifest["classes"] = data.classes;
    if (!data.metadata.empty()) manifest["metadata"] = data.metadata;
    manifest["regions"] = nlohmann::json::array();
    for (std::size_t i = 0; i < data.sequences.size(); ++i) {
        const FeatureSequence& s = data.sequences[i];
        if (s.dim() != dim) throw ValidationError("sequences disagree on feature dimension");
        const std::string file = stem + "_" + std::to_string(i) + ".csv";
        write_feature_csv(dir / file, s.features);
        manifest["regions"].push_back({{"id", s.region_id}, {"label", s.label}, {"m", s.length()}, {"file", file}});
    }
    const auto path = dir / (stem + ".json");
    std::ofstream(path) << manifest.dump(2) << '\n';
    return path;
}

inline FeatureDataset load_feature_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("feature manifest not found: " + path.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("feature manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    FeatureDataset out;
    if (manifest.contains("classes")) out.classes = manifest["classes"].get<std::vector<std::string>>();
    if (manifest.contains("metadata")) out.metadata = manifest["metadata"];
    const long long declared = manifest.value("dim", 0LL);
    const auto base = path.parent_path();
    if (!manifest.contains("regions")) return out;
    for (const auto& entry : manifest["regions"]) {
        std::string id = entry.at("id").is_string() ? entry.at("id").get<std::string>() : entry.at("id").dump();
        FeatureSequence s;
        s.region_id = id;
        s.label = entry.at("label").get<int>();
        s.features = read_feature_csv(base / entry.at("file").get<std::string>(), id);
        if (entry.contains("m") && entry["m"].get<long long>() != s.length()) {
            throw DataError("region '" + id + "': manifest declares m=" + entry["m"].dump() + " but file has " +
                            std::to_string(s.length()) + " columns");
        }
        const long long expected = out.sequences.empty() ? declared : out.sequences.front().dim();
        if ((expected != 0 && s.dim() != expected) ||
            (declared != 0 && s.dim() != declared)) {
            throw DataError("dataset inconsistency: region '" + id + "' has D=" + std::to_string(s.dim()) +
                            ", expected D=" + std::to_string(expected != 0 ? expected : declared));
        }
        if (!out.classes.empty() && (s.label < 0 || s.label >= static_cast<int>(out.classes.size()))) {
            throw DataError("region '" + id + "': label index out of range");
        }
        out.sequences.push_back(std::move(s));
    }
    return out;
}

}  // namespace histoseq
