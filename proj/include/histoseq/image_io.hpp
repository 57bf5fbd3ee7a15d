#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <png.h>

#include "histoseq/annotation.hpp"
#include "histoseq/core.hpp"
#include "json.hpp"

namespace histoseq {

inline Image read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        throw DataError("cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    Image out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
    if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
        png_image_free(&img);
        throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    return out;
}

/// Writes 1-channel images as grayscale, 3-channel as RGB.
inline void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw ValidationError("PNG writer supports 1 or 3 channels");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.data.data(), 0, nullptr)) {
        throw DataError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

/// Raw interleaved RGB bytes with a `<file>.json` sidecar holding width/height.
inline Image read_raw_rgb(const std::filesystem::path& path) {
    std::ifstream meta(path.string() + ".json");
    if (!meta) throw DataError("missing sidecar header " + path.string() + ".json");
    nlohmann::json header;
    try {
        meta >> header;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad sidecar header for " + path.string() + ": " + e.what());
    }
    const int w = header.value("width", 0);
    const int h = header.value("height", 0);
    const int channels = header.value("channels", 3);
    if (w <= 0 || h <= 0 || channels != 3) throw DataError("sidecar for " + path.string() + " has invalid extents");
    Image out(w, h, 3);
    std::ifstream in(path, std::ios::binary);
    in.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(out.data.size()));
    if (in.gcount() != static_cast<std::streamsize>(out.data.size())) {
        throw DataError("raw raster " + path.string() + " is shorter than its header declares");
    }
    return out;
}

inline void write_raw_rgb(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
    std::ofstream meta(path.string() + ".json");
    meta << nlohmann::json{{"width", image.width}, {"height", image.height}, {"channels", image.channels}}.dump()
         << '\n';
}

/// Dispatch on extension: .png, otherwise raw RGB with sidecar.
inline Image read_raster(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("raster not found: " + path.string());
    auto ext = path.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return ext == ".png" ? read_png(path) : read_raw_rgb(path);
}

inline Image mask_to_image(const RegionMask& mask) {
    Image out(mask.width, mask.height, 1);
    for (std::size_t i = 0; i < mask.bits.size(); ++i) out.data[i] = mask.bits[i] ? 255 : 0;
    return out;
}

inline RegionMask image_to_mask(const Image& image) {
    RegionMask mask(image.width, image.height);
    for (int r = 0; r < image.height; ++r)
        for (int c = 0; c < image.width; ++c) mask.at(r, c) = image.at(r, c, 0) >= 128 ? 1 : 0;
    return mask;
}

}  // namespace histoseq
