#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "dropsplat/common.hpp"

namespace dropsplat {

// sRGB transfer functions. Images are linear in memory and 8-bit sRGB on
// disk, so one export/import round trip costs at most one quantization step
// in the encoded domain.
inline double srgb_encode(double linear) {
    double l = std::min(1.0, std::max(0.0, linear));
    return l <= 0.0031308 ? 12.92 * l : 1.055 * std::pow(l, 1.0 / 2.4) - 0.055;
}

inline double srgb_decode(double s) {
    return s <= 0.04045 ? s / 12.92 : std::pow((s + 0.055) / 1.055, 2.4);
}

namespace detail {

struct FileCloser {
    std::FILE* fp = nullptr;
    ~FileCloser() {
        if (fp) std::fclose(fp);
    }
};

}  // namespace detail

inline void save_png(const std::string& path, const Image& img) {
    if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("save_png: empty image");
    std::vector<unsigned char> bytes(img.pixel_count() * 3);
    for (size_t i = 0; i < img.data.size(); ++i) {
        long v = std::lrint(srgb_encode(img.data[i]) * 255.0);
        bytes[i] = static_cast<unsigned char>(std::min(255l, std::max(0l, v)));
    }
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = bytes.data() + static_cast<size_t>(y) * img.width * 3;

    detail::FileCloser file{std::fopen(path.c_str(), "wb")};
    if (!file.fp) throw std::runtime_error("save_png: cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, info ? &info : nullptr);
        throw std::runtime_error("save_png: libpng failure writing " + path);
    }
    png_init_io(png, file.fp);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Image load_png(const std::string& path) {
    detail::FileCloser file{std::fopen(path.c_str(), "rb")};
    if (!file.fp) throw std::runtime_error("load_png: image file not found: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    std::vector<unsigned char> bytes;
    std::vector<png_bytep> rows;
    int w = 0, h = 0;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        throw std::runtime_error("load_png: libpng failure reading " + path);
    }
    png_init_io(png, file.fp);
    png_read_info(png, info);
    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("load_png: unsupported pixel layout in " + path);
    }
    bytes.resize(static_cast<size_t>(w) * h * 3);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[y] = bytes.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(w, h);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = srgb_decode(bytes[i] / 255.0);
    return img;
}

}  // namespace dropsplat
