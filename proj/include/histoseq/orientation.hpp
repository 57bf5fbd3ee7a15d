#pragma once

// Region orientation from second central moments and rotation normalization
// onto a patch-aligned canvas.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "histoseq/annotation.hpp"
#include "histoseq/core.hpp"

namespace histoseq {

/// Eigen-gap ratio below which a mask is considered isotropic.
inline constexpr double kIsotropyThreshold = 1e-3;

struct PrincipalAxis {
    double angle_deg = 0.0;  // (-90, 90], x right / y down raster frame
    double centroid_x = 0.0;
    double centroid_y = 0.0;
    double lambda_major = 0.0;
    double lambda_minor = 0.0;
    bool degenerate = false;
};

class DegenerateOrientation : public DataError {
public:
    DegenerateOrientation() : DataError("mask is isotropic; major axis undefined") {}
};

/// Moments are taken over pixel centres (col + 0.5, row + 0.5).
inline PrincipalAxis principal_axis(const RegionMask& mask) {
    double n = 0.0, sx = 0.0, sy = 0.0;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (mask.at(r, c)) {
                n += 1.0;
                sx += c + 0.5;
                sy += r + 0.5;
            }
    if (n == 0.0) throw DataError("orientation requested for an empty mask");
    PrincipalAxis out;
    out.centroid_x = sx / n;
    out.centroid_y = sy / n;

    double mu20 = 0.0, mu02 = 0.0, mu11 = 0.0;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (mask.at(r, c)) {
                const double dx = c + 0.5 - out.centroid_x;
                const double dy = r + 0.5 - out.centroid_y;
                mu20 += dx * dx;
                mu02 += dy * dy;
                mu11 += dx * dy;
            }
    mu20 /= n;
    mu02 /= n;
    mu11 /= n;

    const double mean = 0.5 * (mu20 + mu02);
    const double gap = std::sqrt(0.25 * (mu20 - mu02) * (mu20 - mu02) + mu11 * mu11);
    out.lambda_major = mean + gap;
    out.lambda_minor = mean - gap;
    const double total = out.lambda_major + out.lambda_minor;
    out.degenerate = total <= 0.0 || (out.lambda_major - out.lambda_minor) / total < kIsotropyThreshold;

    double angle = 0.5 * std::atan2(2.0 * mu11, mu20 - mu02) * 180.0 / std::numbers::pi;
    if (angle <= -90.0) angle += 180.0;
    out.angle_deg = angle;
    return out;
}

inline double major_axis_angle(const RegionMask& mask) {
    const PrincipalAxis axis = principal_axis(mask);
    if (axis.degenerate) throw DegenerateOrientation();
    return axis.angle_deg;
}

/// Distance between two axis directions, modulo 180 degrees.
inline double axis_distance_deg(double a, double b) {
    double d = std::fmod(std::abs(a - b), 180.0);
    return std::min(d, 180.0 - d);
}

struct NormalizedRegion {
    Image image;
    RegionMask mask;
    double rotation_deg = 0.0;
    /// Crop window in the input frame after rotation, inclusive.
    BoundingBox bbox;
    bool degenerate_orientation = false;
};

namespace detail {

inline std::uint8_t bilinear_reflect(const Image& img, double x, double y, int ch) {
    // (x, y) in index space: sample k sits at k.
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const double ax = x - fx;
    const double ay = y - fy;
    const auto x0 = static_cast<long long>(fx);
    const auto y0 = static_cast<long long>(fy);
    const int c0 = reflect_index(x0, img.width), c1 = reflect_index(x0 + 1, img.width);
    const int r0 = reflect_index(y0, img.height), r1 = reflect_index(y0 + 1, img.height);
    const double v = (1.0 - ay) * ((1.0 - ax) * img.at(r0, c0, ch) + ax * img.at(r0, c1, ch)) +
                     ay * ((1.0 - ax) * img.at(r1, c0, ch) + ax * img.at(r1, c1, ch));
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

inline long long round_up(long long v, long long multiple) { return (v + multiple - 1) / multiple * multiple; }

}  // namespace detail

/// Rotate region and mask by R = 90 - M about the mask centroid, then crop to
/// the rotated mask's bounding box grown to multiples of `patch_side`.
/// Image samples are bilinear with mirror padding; the mask is nearest-neighbour.
inline NormalizedRegion normalize_rotation(const Image& image, const RegionMask& mask,
                                           int patch_side = kDefaultPatchSide) {
    if (image.width != mask.width || image.height != mask.height) {
        throw ValidationError("image and mask extents differ");
    }
    if (patch_side < 1) throw ValidationError("patch side must be positive");
    const PrincipalAxis axis = principal_axis(mask);

    NormalizedRegion out;
    out.degenerate_orientation = axis.degenerate;
    double rot = axis.degenerate ? 0.0 : 90.0 - axis.angle_deg;
    if (rot > 90.0) rot -= 180.0;
    out.rotation_deg = rot;

    const double theta = rot * std::numbers::pi / 180.0;
    const double cs = rot == 0.0 ? 1.0 : std::cos(theta);
    const double sn = rot == 0.0 ? 0.0 : std::sin(theta);
    const double cx = axis.centroid_x;
    const double cy = axis.centroid_y;
    // Output point q maps back to p = Rot(-theta) (q - c) + c.
    auto source = [&](double qx, double qy, double& px, double& py) {
        const double dx = qx - cx;
        const double dy = qy - cy;
        px = cx + cs * dx + sn * dy;
        py = cy - sn * dx + cs * dy;
    };

    // Canvas covering the rotated mask extent.
    double lx = 1e300, ly = 1e300, hx = -1e300, hy = -1e300;
    for (const auto& [x, y] : {std::pair{0.0, 0.0}, std::pair{double(mask.width), 0.0},
                              std::pair{0.0, double(mask.height)}, std::pair{double(mask.width), double(mask.height)}}) {
        const double dx = x - cx, dy = y - cy;
        const double qx = cx + cs * dx - sn * dy;
        const double qy = cy + sn * dx + cs * dy;
        lx = std::min(lx, qx);
        hx = std::max(hx, qx);
        ly = std::min(ly, qy);
        hy = std::max(hy, qy);
    }
    const auto ox = static_cast<long long>(std::floor(lx)) - 1;
    const auto oy = static_cast<long long>(std::floor(ly)) - 1;
    const auto ex = static_cast<long long>(std::ceil(hx)) + 1;
    const auto ey = static_cast<long long>(std::ceil(hy)) + 1;

    auto mask_sample = [&](long long qx, long long qy) -> std::uint8_t {
        double px, py;
        source(qx + 0.5, qy + 0.5, px, py);
        const double fc = std::floor(px), fr = std::floor(py);
        if (fc < 0 || fr < 0 || fc >= mask.width || fr >= mask.height) return 0;
        return mask.at(static_cast<int>(fr), static_cast<int>(fc));
    };

    long long bx0 = ex, by0 = ey, bx1 = ox - 1, by1 = oy - 1;
    for (long long qy = oy; qy < ey; ++qy)
        for (long long qx = ox; qx < ex; ++qx)
            if (mask_sample(qx, qy)) {
                bx0 = std::min(bx0, qx);
                bx1 = std::max(bx1, qx);
                by0 = std::min(by0, qy);
                by1 = std::max(by1, qy);
            }
    if (bx1 < bx0) throw DataError("rotated mask is empty");

    const long long w = bx1 - bx0 + 1;
    const long long h = by1 - by0 + 1;
    const long long out_w = detail::round_up(w, patch_side);
    const long long out_h = detail::round_up(h, patch_side);
    const long long x_start = bx0 - (out_w - w) / 2;
    const long long y_start = by0 - (out_h - h) / 2;
    out.bbox = BoundingBox{x_start, y_start, x_start + out_w - 1, y_start + out_h - 1};

    out.image = Image(static_cast<int>(out_w), static_cast<int>(out_h), image.channels);
    out.mask = RegionMask(static_cast<int>(out_w), static_cast<int>(out_h));
    out.mask.origin_x = mask.origin_x + x_start;
    out.mask.origin_y = mask.origin_y + y_start;
    for (int r = 0; r < out.image.height; ++r) {
        for (int c = 0; c < out.image.width; ++c) {
            const long long qx = x_start + c;
            const long long qy = y_start + r;
            out.mask.at(r, c) = mask_sample(qx, qy);
            double px, py;
            source(qx + 0.5, qy + 0.5, px, py);
            for (int ch = 0; ch < image.channels; ++ch) {
                out.image.at(r, c, ch) = detail::bilinear_reflect(image, px - 0.5, py - 0.5, ch);
            }
        }
    }
    return out;
}

}  // namespace histoseq
