#pragma once

// Synthetic data for smoke runs and tests: class-centroid feature sequences and
// a painted slide with matching polygon annotations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "histoseq/annotation.hpp"
#include "histoseq/core.hpp"
#include "histoseq/features.hpp"

namespace histoseq::synthetic {

struct SequenceSpec {
    int classes = 3;
    int per_class = 30;
    int dim = 96;
    int min_length = 8;
    int max_length = 48;
    double noise = 0.15;
    /// 0: every column carries the class centroid. Otherwise only the first
    /// `signal_columns` do and the rest are drawn around a shared background.
    int signal_columns = 0;
    std::uint64_t seed = 1;
};

/// Each class has a centroid in [0,1]^D; columns are centroid + N(0, noise).
inline std::vector<FeatureSequence> centroid_sequences(const SequenceSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::uniform_int_distribution<int> length(spec.min_length, spec.max_length);

    std::vector<Eigen::VectorXd> centroids;
    for (int c = 0; c < spec.classes; ++c) {
        Eigen::VectorXd v(spec.dim);
        for (int d = 0; d < spec.dim; ++d) v(d) = unit(rng);
        centroids.push_back(v);
    }
    Eigen::VectorXd background(spec.dim);
    for (int d = 0; d < spec.dim; ++d) background(d) = unit(rng);

    std::vector<FeatureSequence> out;
    for (int i = 0; i < spec.per_class; ++i) {
        for (int c = 0; c < spec.classes; ++c) {
            FeatureSequence s;
            s.label = c;
            s.region_id = "syn_" + std::to_string(c) + "_" + std::to_string(i);
            const int m = length(rng);
            s.features.resize(spec.dim, m);
            for (int t = 0; t < m; ++t) {
                const bool signal = spec.signal_columns == 0 || t < spec.signal_columns;
                const Eigen::VectorXd& centre = signal ? centroids[static_cast<std::size_t>(c)] : background;
                for (int d = 0; d < spec.dim; ++d) s.features(d, t) = centre(d) + noise(rng);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

struct SlideSpec {
    int width = 1400;
    int height = 1000;
    std::vector<std::string> classes{"Benign", "InSitu", "Invasive"};
    int regions = 9;
    double min_radius = 90.0;
    double max_radius = 180.0;
    std::uint64_t seed = 7;
};

struct Slide {
    Image image;
    std::vector<RegionRecord> regions;
};

/// Elliptical regions with class-specific colour and stripe texture on a pale
/// background. Regions are laid out on a coarse lattice so they do not overlap.
inline Slide painted_slide(const SlideSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Slide slide;
    slide.image = Image(spec.width, spec.height, 3);
    for (int r = 0; r < spec.height; ++r)
        for (int c = 0; c < spec.width; ++c) {
            slide.image.at(r, c, 0) = 236;
            slide.image.at(r, c, 1) = 220;
            slide.image.at(r, c, 2) = 230;
        }

    static constexpr std::uint8_t palette[][3] = {{200, 90, 150}, {120, 60, 170}, {70, 40, 110}, {220, 150, 180}};
    const int cols = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.regions)))));
    const int rows = (spec.regions + cols - 1) / cols;
    const double cell_w = static_cast<double>(spec.width) / cols;
    const double cell_h = static_cast<double>(spec.height) / rows;

    for (int k = 0; k < spec.regions; ++k) {
        const int cls = k % static_cast<int>(spec.classes.size());
        const double cx = (k % cols + 0.5) * cell_w;
        const double cy = (k / cols + 0.5) * cell_h;
        const double limit = 0.45 * std::min(cell_w, cell_h);
        const double a = std::min(limit, spec.min_radius + unit(rng) * (spec.max_radius - spec.min_radius));
        const double b = a * (0.35 + 0.25 * unit(rng));
        const double phi = (unit(rng) - 0.5) * std::numbers::pi;

        RegionRecord rec;
        rec.region_id = k;
        rec.label = spec.classes[static_cast<std::size_t>(cls)];
        constexpr int kVertices = 32;
        for (int v = 0; v < kVertices; ++v) {
            const double t = 2.0 * std::numbers::pi * v / kVertices;
            const double x = cx + a * std::cos(t) * std::cos(phi) - b * std::sin(t) * std::sin(phi);
            const double y = cy + a * std::cos(t) * std::sin(phi) + b * std::sin(t) * std::cos(phi);
            rec.coordinates.push_back({std::round(x * 10.0) / 10.0, std::round(y * 10.0) / 10.0});
        }
        rec.area_px = polygon_area(rec.coordinates);
        rec.metadata["Type"] = "Polygon";

        const std::uint8_t* base = palette[cls % 4];
        const int stripe = 6 + 5 * cls;
        const BoundingBox box = region_bounding_box(rec);
        const RegionMask mask = rasterize_mask(rec, box);
        std::normal_distribution<double> jitter(0.0, 8.0);
        for (int r = 0; r < mask.height; ++r)
            for (int c = 0; c < mask.width; ++c) {
                if (!mask.at(r, c)) continue;
                const long long y = mask.origin_y + r, x = mask.origin_x + c;
                if (x < 0 || y < 0 || x >= spec.width || y >= spec.height) continue;
                const double shade = ((x + y) / stripe) % 2 == 0 ? 1.0 : 0.8;
                for (int ch = 0; ch < 3; ++ch) {
                    const double v = base[ch] * shade + jitter(rng);
                    slide.image.at(static_cast<int>(y), static_cast<int>(x), ch) =
                        static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
                }
            }
        slide.regions.push_back(std::move(rec));
    }
    return slide;
}

}  // namespace histoseq::synthetic
