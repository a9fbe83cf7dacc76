#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "lns/error.hpp"

// Raster ingestion and label-map persistence. Input images are 8-bit PNG
// (RGB/RGBA/gray/palette, alpha dropped, gray expanded) or binary PPM (P6).
// Label maps travel as 16-bit grayscale PNG, one label index per pixel.

namespace lns {

/// 8-bit RGB image, rows top to bottom, 3 bytes per pixel.
struct Raster {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;  // height * width * 3

    std::uint8_t at(int y, int x, int c) const {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_checked(const std::string& path, const char* mode) {
    std::FILE* f = std::fopen(path.c_str(), mode);
    if (!f) throw FileNotFound("cannot open '" + path + "'");
    return FilePtr(f);
}

inline int ppm_next_token(std::FILE* f, char* buf, int cap) {
    int c = std::fgetc(f);
    while (c != EOF) {
        if (c == '#') {  // comment runs to end of line
            while (c != EOF && c != '\n') c = std::fgetc(f);
        } else if (std::isspace(c)) {
            c = std::fgetc(f);
        } else {
            break;
        }
    }
    if (c == EOF) return 0;
    int n = 0;
    while (c != EOF && !std::isspace(c) && c != '#') {
        if (n + 1 >= cap) return 0;
        buf[n++] = static_cast<char>(c);
        c = std::fgetc(f);
    }
    if (c == '#') std::ungetc(c, f);
    buf[n] = '\0';
    return n;
}

inline long ppm_int_token(std::FILE* f, const std::string& path, const char* what) {
    char buf[32];
    if (!ppm_next_token(f, buf, sizeof buf)) {
        throw CorruptData("PPM '" + path + "': header ends before " + what);
    }
    char* end = nullptr;
    const long v = std::strtol(buf, &end, 10);
    if (end == buf || *end != '\0' || v < 0) {
        throw CorruptData("PPM '" + path + "': bad " + std::string(what) + " '" + buf + "'");
    }
    return v;
}

inline Raster decode_ppm(std::FILE* f, const std::string& path) {
    // "P6" was already consumed by the magic sniff.
    const long w = ppm_int_token(f, path, "width");
    const long h = ppm_int_token(f, path, "height");
    const long maxval = ppm_int_token(f, path, "maxval");
    if (w <= 0 || h <= 0) throw CorruptData("PPM '" + path + "': zero dimensions");
    if (maxval != 255) {
        throw UnsupportedFormat("PPM '" + path + "': only maxval 255 is supported, got " +
                                std::to_string(maxval));
    }
    Raster r;
    r.width = static_cast<int>(w);
    r.height = static_cast<int>(h);
    r.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    if (std::fread(r.rgb.data(), 1, r.rgb.size(), f) != r.rgb.size()) {
        throw CorruptData("PPM '" + path + "': pixel data truncated");
    }
    return r;
}

struct PngReadGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadGuard() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriteGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteGuard() { png_destroy_write_struct(&png, &info); }
};

}  // namespace detail

/// Decodes a PNG already identified by its signature; `f` is positioned just
/// past the 8 signature bytes. Output is always 8-bit RGB.
inline Raster decode_png(std::FILE* f, const std::string& path) {
    detail::PngReadGuard g;
    g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw Error("libpng initialization failed");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw Error("libpng initialization failed");

    Raster r;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(g.png))) {
        throw CorruptData("PNG '" + path + "': decode failed (damaged or truncated)");
    }
    png_init_io(g.png, f);
    png_set_sig_bytes(g.png, 8);
    png_read_info(g.png, g.info);

    // normalize every variant to 8-bit RGB
    png_set_palette_to_rgb(g.png);
    png_set_expand_gray_1_2_4_to_8(g.png);
    if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(g.png);
    png_set_strip_16(g.png);
    png_set_gray_to_rgb(g.png);
    png_set_strip_alpha(g.png);
    png_set_interlace_handling(g.png);
    png_read_update_info(g.png, g.info);

    r.width = static_cast<int>(png_get_image_width(g.png, g.info));
    r.height = static_cast<int>(png_get_image_height(g.png, g.info));
    if (png_get_rowbytes(g.png, g.info) != static_cast<std::size_t>(r.width) * 3) {
        throw UnsupportedFormat("PNG '" + path + "': could not normalize to 8-bit RGB");
    }
    r.rgb.resize(static_cast<std::size_t>(r.width) * r.height * 3);
    rows.resize(r.height);
    for (int y = 0; y < r.height; ++y) {
        rows[y] = r.rgb.data() + static_cast<std::size_t>(y) * r.width * 3;
    }
    png_read_image(g.png, rows.data());
    png_read_end(g.png, nullptr);
    return r;
}

/// Loads an 8-bit PNG or binary PPM (P6), sniffing the format from the magic
/// bytes. Errors are distinct kinds: FileNotFound, UnsupportedFormat,
/// CorruptData.
inline Raster load_image(const std::string& path) {
    auto f = detail::open_checked(path, "rb");
    unsigned char magic[8] = {0};
    const std::size_t got = std::fread(magic, 1, 8, f.get());
    static const unsigned char png_sig[8] = {137, 'P', 'N', 'G', '\r', '\n', 26, '\n'};
    if (got == 8 && std::memcmp(magic, png_sig, 8) == 0) {
        return decode_png(f.get(), path);
    }
    if (got >= 2 && magic[0] == 'P' && magic[1] == '6') {
        std::fseek(f.get(), 2, SEEK_SET);
        return detail::decode_ppm(f.get(), path);
    }
    throw UnsupportedFormat("'" + path + "' is neither PNG nor binary PPM (P6)");
}

inline void write_png_rgb8(const std::string& path, const Raster& r) {
    auto f = detail::open_checked(path, "wb");
    detail::PngWriteGuard g;
    g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw Error("libpng initialization failed");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw Error("libpng initialization failed");
    std::vector<png_const_bytep> rows(r.height);
    for (int y = 0; y < r.height; ++y) {
        rows[y] = r.rgb.data() + static_cast<std::size_t>(y) * r.width * 3;
    }
    if (setjmp(png_jmpbuf(g.png))) {
        throw Error("PNG '" + path + "': encode failed");
    }
    png_init_io(g.png, f.get());
    png_set_IHDR(g.png, g.info, r.width, r.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(g.png, g.info);
    for (int y = 0; y < r.height; ++y) {
        png_write_row(g.png, const_cast<png_bytep>(rows[y]));
    }
    png_write_end(g.png, g.info);
}

/// Writes a label map as 16-bit grayscale PNG (big-endian samples per the
/// PNG specification). Labels must fit in 16 bits.
inline void write_label_png16(const std::string& path, const std::vector<int>& labels, int height,
                              int width) {
    if (labels.size() != static_cast<std::size_t>(height) * width) {
        throw InvalidArgument("label buffer does not match dimensions");
    }
    std::vector<std::uint8_t> packed(labels.size() * 2);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int v = labels[i];
        if (v < 0 || v > 0xFFFF) {
            throw InvalidArgument("label " + std::to_string(v) + " does not fit 16-bit PNG");
        }
        packed[2 * i] = static_cast<std::uint8_t>(v >> 8);
        packed[2 * i + 1] = static_cast<std::uint8_t>(v & 0xFF);
    }
    auto f = detail::open_checked(path, "wb");
    detail::PngWriteGuard g;
    g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw Error("libpng initialization failed");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw Error("libpng initialization failed");
    if (setjmp(png_jmpbuf(g.png))) {
        throw Error("PNG '" + path + "': encode failed");
    }
    png_init_io(g.png, f.get());
    png_set_IHDR(g.png, g.info, width, height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(g.png, g.info);
    for (int y = 0; y < height; ++y) {
        png_write_row(g.png, packed.data() + static_cast<std::size_t>(y) * width * 2);
    }
    png_write_end(g.png, g.info);
}

/// Reads a label map from 8- or 16-bit grayscale PNG.
inline std::vector<int> read_label_png16(const std::string& path, int& height, int& width) {
    auto f = detail::open_checked(path, "rb");
    unsigned char magic[8] = {0};
    static const unsigned char png_sig[8] = {137, 'P', 'N', 'G', '\r', '\n', 26, '\n'};
    if (std::fread(magic, 1, 8, f.get()) != 8 || std::memcmp(magic, png_sig, 8) != 0) {
        throw UnsupportedFormat("'" + path + "' is not a PNG label map");
    }
    detail::PngReadGuard g;
    g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw Error("libpng initialization failed");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw Error("libpng initialization failed");
    std::vector<std::uint8_t> packed;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(g.png))) {
        throw CorruptData("PNG '" + path + "': decode failed (damaged or truncated)");
    }
    png_init_io(g.png, f.get());
    png_set_sig_bytes(g.png, 8);
    png_read_info(g.png, g.info);
    const int color = png_get_color_type(g.png, g.info);
    if (color != PNG_COLOR_TYPE_GRAY) {
        throw UnsupportedFormat("'" + path + "': label maps must be grayscale PNG");
    }
    png_set_expand_gray_1_2_4_to_8(g.png);
    png_set_interlace_handling(g.png);
    png_read_update_info(g.png, g.info);
    width = static_cast<int>(png_get_image_width(g.png, g.info));
    height = static_cast<int>(png_get_image_height(g.png, g.info));
    const int depth = png_get_bit_depth(g.png, g.info);
    const std::size_t rowbytes = png_get_rowbytes(g.png, g.info);
    packed.resize(rowbytes * height);
    rows.resize(height);
    for (int y = 0; y < height; ++y) rows[y] = packed.data() + rowbytes * y;
    png_read_image(g.png, rows.data());
    png_read_end(g.png, nullptr);

    std::vector<int> labels(static_cast<std::size_t>(height) * width);
    if (depth == 16) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            labels[i] = (packed[2 * i] << 8) | packed[2 * i + 1];
        }
    } else {
        for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = packed[i];
    }
    return labels;
}

}  // namespace lns
