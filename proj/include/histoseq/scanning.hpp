#pragma once

// Patch visit orders over a region grid and tiling in that order.

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "histoseq/core.hpp"

namespace histoseq {

struct GridDims {
    int rows = 1;
    int cols = 1;
    friend bool operator==(const GridDims&, const GridDims&) = default;
};

/// raster: row-major; serpentine: alternate row direction; block_serpentine:
/// 2x2 blocks, block rows alternating direction.
enum class ScanStrategy { raster, serpentine, block_serpentine };

inline std::string_view to_string(ScanStrategy s) {
    switch (s) {
        case ScanStrategy::raster: return "scan1";
        case ScanStrategy::serpentine: return "scan2";
        case ScanStrategy::block_serpentine: return "scan3";
    }
    return "?";
}

inline std::optional<ScanStrategy> parse_strategy(std::string_view s) {
    if (s == "scan1" || s == "Scan_1") return ScanStrategy::raster;
    if (s == "scan2" || s == "Scan_2") return ScanStrategy::serpentine;
    if (s == "scan3" || s == "Scan_3") return ScanStrategy::block_serpentine;
    return std::nullopt;
}

struct GridPos {
    int row = 0;
    int col = 0;
    friend bool operator==(const GridPos&, const GridPos&) = default;
};

struct ScanOrder {
    GridDims dims;
    ScanStrategy strategy = ScanStrategy::raster;
    std::vector<GridPos> visits;
};

struct Patch {
    Image pixels;
    GridPos grid_pos;
    int sequence_pos = 0;
};

inline GridDims grid_dims(long long height, long long width, int patch_side = kDefaultPatchSide) {
    if (height < 1 || width < 1) throw ValidationError("region extents must be at least 1x1");
    if (patch_side < 1) throw ValidationError("patch side must be positive");
    return GridDims{static_cast<int>((height + patch_side - 1) / patch_side),
                    static_cast<int>((width + patch_side - 1) / patch_side)};
}

inline ScanOrder scan_order(GridDims dims, ScanStrategy strategy) {
    if (dims.rows < 1 || dims.cols < 1) throw ValidationError("grid must have at least one row and column");
    ScanOrder order{dims, strategy, {}};
    auto& v = order.visits;
    v.reserve(static_cast<std::size_t>(dims.rows) * dims.cols);

    switch (strategy) {
        case ScanStrategy::raster:
            for (int r = 0; r < dims.rows; ++r)
                for (int c = 0; c < dims.cols; ++c) v.push_back({r, c});
            break;
        case ScanStrategy::serpentine:
            for (int r = 0; r < dims.rows; ++r) {
                if (r % 2 == 0) {
                    for (int c = 0; c < dims.cols; ++c) v.push_back({r, c});
                } else {
                    for (int c = dims.cols - 1; c >= 0; --c) v.push_back({r, c});
                }
            }
            break;
        case ScanStrategy::block_serpentine: {
            const int block_cols = (dims.cols + 1) / 2;
            for (int br = 0; br * 2 < dims.rows; ++br) {
                const bool leftward = br % 2 == 1;
                const int r_end = std::min(br * 2 + 2, dims.rows);
                for (int k = 0; k < block_cols; ++k) {
                    const int bc = leftward ? block_cols - 1 - k : k;
                    const int c0 = bc * 2;
                    const int c_last = std::min(c0 + 1, dims.cols - 1);
                    for (int r = br * 2; r < r_end; ++r) {
                        if (leftward) {
                            for (int c = c_last; c >= c0; --c) v.push_back({r, c});
                        } else {
                            for (int c = c0; c <= c_last; ++c) v.push_back({r, c});
                        }
                    }
                }
            }
            break;
        }
    }
    return order;
}

/// Mean Manhattan step between consecutive visits; 0 for a single cell.
inline double continuity_cost(const ScanOrder& order) {
    const auto& v = order.visits;
    if (v.size() < 2) return 0.0;
    long long total = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        total += std::abs(v[i].row - v[i - 1].row) + std::abs(v[i].col - v[i - 1].col);
    }
    return static_cast<double>(total) / static_cast<double>(v.size() - 1);
}

/// One patch per visit, emitted in visit order; cells past the image edge are
/// mirror-padded.
inline Patch cut_patch(const Image& image, GridPos pos, int sequence_pos, int patch_side = kDefaultPatchSide) {
    Patch p;
    p.grid_pos = pos;
    p.sequence_pos = sequence_pos;
    p.pixels = Image(patch_side, patch_side, image.channels);
    const long long y0 = static_cast<long long>(pos.row) * patch_side;
    const long long x0 = static_cast<long long>(pos.col) * patch_side;
    for (int r = 0; r < patch_side; ++r) {
        const int sr = reflect_index(y0 + r, image.height);
        for (int c = 0; c < patch_side; ++c) {
            const int sc = reflect_index(x0 + c, image.width);
            for (int ch = 0; ch < image.channels; ++ch) p.pixels.at(r, c, ch) = image.at(sr, sc, ch);
        }
    }
    return p;
}

inline std::vector<Patch> tile_region(const Image& image, const ScanOrder& order, int patch_side = kDefaultPatchSide) {
    if (image.empty()) throw ValidationError("cannot tile an empty image");
    if (grid_dims(image.height, image.width, patch_side) != order.dims) {
        throw ValidationError("scan order grid does not match the image extents");
    }
    std::vector<Patch> patches;
    patches.reserve(order.visits.size());
    for (std::size_t k = 0; k < order.visits.size(); ++k) {
        patches.push_back(cut_patch(image, order.visits[k], static_cast<int>(k), patch_side));
    }
    return patches;
}

}  // namespace histoseq
