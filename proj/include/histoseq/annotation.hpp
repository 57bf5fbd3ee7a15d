#pragma once

// Slide annotation ingest: XML regions -> RegionRecord, bounding boxes and
// polygon rasterization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <expat.h>

#include "histoseq/core.hpp"

namespace histoseq {

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

struct RegionRecord {
    long long region_id = 0;
    std::string label;
    std::vector<Point> coordinates;
    double area_px = 0.0;
    std::map<std::string, std::string> metadata;
    /// false when `label` is outside the configured class set.
    bool known_label = true;

    friend bool operator==(const RegionRecord&, const RegionRecord&) = default;
};

/// Inclusive integer pixel extents.
struct BoundingBox {
    long long min_x = 0;
    long long min_y = 0;
    long long max_x = 0;
    long long max_y = 0;

    long long width() const noexcept { return max_x - min_x; }
    long long height() const noexcept { return max_y - min_y; }
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Binary raster; pixel (row, col) covers [origin_x + col, +1) x [origin_y + row, +1).
struct RegionMask {
    int width = 0;
    int height = 0;
    long long origin_x = 0;
    long long origin_y = 0;
    std::vector<std::uint8_t> bits;

    RegionMask() = default;
    RegionMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {}

    std::uint8_t& at(int row, int col) noexcept { return bits[static_cast<std::size_t>(row) * width + col]; }
    std::uint8_t at(int row, int col) const noexcept { return bits[static_cast<std::size_t>(row) * width + col]; }
    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
    }
};

/// Element and attribute names used to read an annotation file. The defaults
/// follow the ASAP layout; Aperio-style files work with e.g.
/// annotation="Region", label="Text", coordinate="Vertex", order="".
struct AnnotationSchema {
    std::string annotation_element = "Annotation";
    std::string coordinate_element = "Coordinate";
    std::string label_attribute = "PartOfGroup";
    std::string id_attribute = "Id";
    std::string x_attribute = "X";
    std::string y_attribute = "Y";
    /// Empty: vertices keep document order.
    std::string order_attribute = "Order";
    double coordinate_scale = 1.0;
    /// Empty: every label is accepted.
    std::vector<std::string> classes;
};

struct ValidationIssue {
    long long region_id = 0;
    std::string label;
    std::string message;
};

struct AnnotationSet {
    std::vector<RegionRecord> regions;
    std::vector<ValidationIssue> issues;
};

class XmlParseError : public DataError {
public:
    XmlParseError(const std::string& what, long long byte_offset)
        : DataError("malformed annotation XML at byte " + std::to_string(byte_offset) + ": " + what),
          byte_offset_(byte_offset) {}
    long long byte_offset() const noexcept { return byte_offset_; }

private:
    long long byte_offset_;
};

/// Shoelace area (absolute value).
inline double polygon_area(std::span<const Point> poly) {
    const std::size_t n = poly.size();
    if (n < 3) return 0.0;
    double twice = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Point& a = poly[i];
        const Point& b = poly[(i + 1) % n];
        twice += a.x * b.y - b.x * a.y;
    }
    return std::abs(twice) * 0.5;
}

namespace detail {

struct ParseState {
    const AnnotationSchema* schema = nullptr;
    AnnotationSet* out = nullptr;
    bool in_annotation = false;
    long long next_index = 0;
    RegionRecord current;
    std::vector<std::pair<double, Point>> ordered;
    std::vector<std::string> errors;
    bool bad_vertex = false;
};

inline std::optional<double> parse_number(const char* s) {
    if (s == nullptr) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(s, &end);
    if (end == s) return std::nullopt;
    while (*end == ' ' || *end == '\t') ++end;
    if (*end != '\0') return std::nullopt;
    return v;
}

inline void XMLCALL on_start(void* user, const XML_Char* name, const XML_Char** attrs) {
    auto& st = *static_cast<ParseState*>(user);
    const AnnotationSchema& sc = *st.schema;
    if (name == sc.annotation_element) {
        st.in_annotation = true;
        st.current = RegionRecord{};
        st.current.region_id = st.next_index;
        st.ordered.clear();
        st.bad_vertex = false;
        for (int i = 0; attrs[i] != nullptr; i += 2) {
            const std::string key = attrs[i];
            const std::string value = attrs[i + 1];
            if (key == sc.label_attribute) {
                st.current.label = value;
            } else if (!sc.id_attribute.empty() && key == sc.id_attribute) {
                if (auto id = parse_number(value.c_str()); id && std::floor(*id) == *id) {
                    st.current.region_id = static_cast<long long>(*id);
                } else {
                    st.current.metadata[key] = value;
                }
            } else {
                st.current.metadata[key] = value;
            }
        }
        ++st.next_index;
        return;
    }
    if (!st.in_annotation || name != sc.coordinate_element) return;

    const char* xs = nullptr;
    const char* ys = nullptr;
    const char* os = nullptr;
    for (int i = 0; attrs[i] != nullptr; i += 2) {
        if (attrs[i] == sc.x_attribute) xs = attrs[i + 1];
        if (attrs[i] == sc.y_attribute) ys = attrs[i + 1];
        if (!sc.order_attribute.empty() && attrs[i] == sc.order_attribute) os = attrs[i + 1];
    }
    const auto x = parse_number(xs);
    const auto y = parse_number(ys);
    if (!x || !y) {
        st.bad_vertex = true;
        return;
    }
    double order = static_cast<double>(st.ordered.size());
    if (os != nullptr) {
        if (auto o = parse_number(os)) order = *o;
    }
    st.ordered.emplace_back(order, Point{*x * sc.coordinate_scale, *y * sc.coordinate_scale});
}

inline void XMLCALL on_end(void* user, const XML_Char* name) {
    auto& st = *static_cast<ParseState*>(user);
    const AnnotationSchema& sc = *st.schema;
    if (!st.in_annotation || name != sc.annotation_element) return;
    st.in_annotation = false;

    std::stable_sort(st.ordered.begin(), st.ordered.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    RegionRecord rec = std::move(st.current);
    rec.coordinates.reserve(st.ordered.size());
    for (const auto& [order, p] : st.ordered) rec.coordinates.push_back(p);

    auto reject = [&](const std::string& msg) {
        st.out->issues.push_back(ValidationIssue{rec.region_id, rec.label, msg});
    };
    if (st.bad_vertex) {
        reject("vertex with missing or non-numeric coordinates");
        return;
    }
    if (rec.coordinates.size() < 3) {
        reject("region has " + std::to_string(rec.coordinates.size()) + " vertices; at least 3 required");
        return;
    }
    for (const Point& p : rec.coordinates) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0.0 || p.y < 0.0) {
            reject("vertex coordinates must be finite and non-negative");
            return;
        }
    }
    rec.area_px = polygon_area(rec.coordinates);
    if (!sc.classes.empty()) {
        rec.known_label = std::find(sc.classes.begin(), sc.classes.end(), rec.label) != sc.classes.end();
    }
    st.out->regions.push_back(std::move(rec));
}

inline std::string xml_escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string format_exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Parse an annotation document. Malformed XML throws XmlParseError; regions
/// failing validation are reported in `issues` and left out of `regions`.
inline AnnotationSet parse_annotations(std::string_view xml, const AnnotationSchema& schema = {}) {
    AnnotationSet result;
    detail::ParseState st;
    st.schema = &schema;
    st.out = &result;

    XML_Parser parser = XML_ParserCreate(nullptr);
    if (parser == nullptr) throw std::bad_alloc();
    XML_SetUserData(parser, &st);
    XML_SetElementHandler(parser, detail::on_start, detail::on_end);
    const auto status = XML_Parse(parser, xml.data(), static_cast<int>(xml.size()), XML_TRUE);
    if (status != XML_STATUS_OK) {
        const std::string msg = XML_ErrorString(XML_GetErrorCode(parser));
        const long long offset = XML_GetCurrentByteIndex(parser);
        XML_ParserFree(parser);
        throw XmlParseError(msg, offset);
    }
    XML_ParserFree(parser);
    return result;
}

/// Inverse of parse_annotations for the same schema.
inline std::string write_annotations(std::span<const RegionRecord> regions, const AnnotationSchema& schema = {}) {
    using detail::format_exact;
    using detail::xml_escape;
    std::ostringstream os;
    os << "<?xml version=\"1.0\"?>\n<ASAP_Annotations>\n  <Annotations>\n";
    for (const RegionRecord& r : regions) {
        os << "    <" << schema.annotation_element;
        if (!schema.id_attribute.empty()) os << ' ' << schema.id_attribute << "=\"" << r.region_id << '"';
        os << ' ' << schema.label_attribute << "=\"" << xml_escape(r.label) << '"';
        for (const auto& [k, v] : r.metadata) os << ' ' << k << "=\"" << xml_escape(v) << '"';
        os << ">\n      <Coordinates>\n";
        for (std::size_t i = 0; i < r.coordinates.size(); ++i) {
            os << "        <" << schema.coordinate_element;
            if (!schema.order_attribute.empty()) os << ' ' << schema.order_attribute << "=\"" << i << '"';
            os << ' ' << schema.x_attribute << "=\"" << format_exact(r.coordinates[i].x / schema.coordinate_scale)
               << "\" " << schema.y_attribute << "=\"" << format_exact(r.coordinates[i].y / schema.coordinate_scale)
               << "\" />\n";
        }
        os << "      </Coordinates>\n    </" << schema.annotation_element << ">\n";
    }
    os << "  </Annotations>\n</ASAP_Annotations>\n";
    return os.str();
}

/// Tight integer hull: floor of the minima, ceil of the maxima.
inline BoundingBox region_bounding_box(const RegionRecord& record) {
    if (record.coordinates.empty()) throw ValidationError("region has no vertices");
    double lx = std::numeric_limits<double>::infinity(), ly = lx;
    double hx = -lx, hy = -lx;
    for (const Point& p : record.coordinates) {
        lx = std::min(lx, p.x);
        ly = std::min(ly, p.y);
        hx = std::max(hx, p.x);
        hy = std::max(hy, p.y);
    }
    return BoundingBox{static_cast<long long>(std::floor(lx)), static_cast<long long>(std::floor(ly)),
                       static_cast<long long>(std::ceil(hx)), static_cast<long long>(std::ceil(hy))};
}

/// True when p lies on segment ab (inclusive of endpoints).
inline bool on_segment(Point p, Point a, Point b) noexcept {
    const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (cross != 0.0) return false;
    return p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) && p.y >= std::min(a.y, b.y) &&
           p.y <= std::max(a.y, b.y);
}

/// Even-odd fill, fill pixels whose centre is inside or exactly on an edge.
inline RegionMask rasterize_mask(const RegionRecord& record, const BoundingBox& bbox) {
    const auto& poly = record.coordinates;
    if (poly.size() < 3 || polygon_area(poly) == 0.0) {
        throw DataError("region " + std::to_string(record.region_id) + " has zero area; mask would be empty");
    }
    for (const Point& p : poly) {
        if (p.x < static_cast<double>(bbox.min_x) || p.x > static_cast<double>(bbox.max_x) ||
            p.y < static_cast<double>(bbox.min_y) || p.y > static_cast<double>(bbox.max_y)) {
            throw ValidationError("bounding box does not enclose every vertex");
        }
    }
    const long long w = bbox.width();
    const long long h = bbox.height();
    if (w <= 0 || h <= 0 || w > std::numeric_limits<int>::max() || h > std::numeric_limits<int>::max()) {
        throw DataError("region " + std::to_string(record.region_id) + " has a degenerate bounding box");
    }
    RegionMask mask(static_cast<int>(w), static_cast<int>(h));
    mask.origin_x = bbox.min_x;
    mask.origin_y = bbox.min_y;

    const std::size_t n = poly.size();
    std::vector<double> xs;
    for (int row = 0; row < mask.height; ++row) {
        const double yc = static_cast<double>(bbox.min_y) + row + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const Point a = poly[i];
            const Point b = poly[(i + 1) % n];
            if ((a.y <= yc) == (b.y <= yc)) continue;
            xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const double lo = xs[k] - static_cast<double>(bbox.min_x) - 0.5;
            const double hi = xs[k + 1] - static_cast<double>(bbox.min_x) - 0.5;
            const int c0 = std::max(0, static_cast<int>(std::ceil(lo)));
            const int c1 = std::min(mask.width - 1, static_cast<int>(std::floor(hi)));
            for (int c = c0; c <= c1; ++c) mask.at(row, c) = 1;
        }
    }

    // Centres lying exactly on an edge are inside; the span fill above misses
    // horizontal edges and tangent vertices.
    for (std::size_t i = 0; i < n; ++i) {
        const Point a = poly[i];
        const Point b = poly[(i + 1) % n];
        const int r0 = std::max(0, static_cast<int>(std::ceil(std::min(a.y, b.y) - bbox.min_y - 0.5)));
        const int r1 = std::min(mask.height - 1, static_cast<int>(std::floor(std::max(a.y, b.y) - bbox.min_y - 0.5)));
        for (int row = r0; row <= r1; ++row) {
            const double yc = static_cast<double>(bbox.min_y) + row + 0.5;
            double xlo, xhi;
            if (a.y == b.y) {
                xlo = std::min(a.x, b.x);
                xhi = std::max(a.x, b.x);
            } else {
                const double x = a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y);
                xlo = x - 1.0;
                xhi = x + 1.0;
            }
            const int c0 = std::max(0, static_cast<int>(std::ceil(xlo - bbox.min_x - 0.5)));
            const int c1 = std::min(mask.width - 1, static_cast<int>(std::floor(xhi - bbox.min_x - 0.5)));
            for (int c = c0; c <= c1; ++c) {
                const Point centre{static_cast<double>(bbox.min_x) + c + 0.5, yc};
                if (on_segment(centre, a, b)) mask.at(row, c) = 1;
            }
        }
    }
    if (mask.count() == 0) {
        throw DataError("region " + std::to_string(record.region_id) + " rasterizes to an empty mask");
    }
    return mask;
}

}  // namespace histoseq
