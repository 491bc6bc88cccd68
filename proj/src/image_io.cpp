#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "splatfit/image.hpp"

namespace splatfit {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t quantize(double v) {
    double s = std::lround(std::fmin(std::fmax(v, 0.0), 1.0) * 255.0);
    return static_cast<uint8_t>(s);
}

void write_png_impl(const std::string& path, const Image& rgb, const Image* alpha) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("png_create_write_struct failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng write error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, rgb.width, rgb.height, 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(static_cast<size_t>(rgb.width) * 4);
    for (int y = 0; y < rgb.height; ++y) {
        for (int x = 0; x < rgb.width; ++x) {
            row[4 * x + 0] = quantize(rgb.at(y, x, 0));
            row[4 * x + 1] = quantize(rgb.at(y, x, 1));
            row[4 * x + 2] = quantize(rgb.at(y, x, 2));
            row[4 * x + 3] = alpha ? quantize(alpha->at(y, x, 0)) : 255;
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_rgba(const std::string& path, const Image& rgb, const Image& alpha) {
    write_png_impl(path, rgb, &alpha);
}

void write_png_rgb(const std::string& path, const Image& rgb) { write_png_impl(path, rgb, nullptr); }

RgbaImage read_png_rgba(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open for reading: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("png_create_read_struct failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng read error: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_gray_to_rgb(png);
    png_set_add_alpha(png, 0xFF, PNG_FILLER_AFTER);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));

    RgbaImage out{Image(w, h, 3), Image(w, h, 1)};
    std::vector<uint8_t> row(static_cast<size_t>(w) * 4);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            out.rgb.at(y, x, 0) = row[4 * x + 0] / 255.0;
            out.rgb.at(y, x, 1) = row[4 * x + 1] / 255.0;
            out.rgb.at(y, x, 2) = row[4 * x + 2] / 255.0;
            out.alpha.at(y, x, 0) = row[4 * x + 3] / 255.0;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

namespace {
constexpr uint32_t kF64Magic = 0x53504c46;  // "FLPS"
}

void write_f64(const std::string& path, const Image& img) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);
    const uint32_t header[4] = {kF64Magic, static_cast<uint32_t>(img.width),
                                static_cast<uint32_t>(img.height),
                                static_cast<uint32_t>(img.channels)};
    if (std::fwrite(header, sizeof(header), 1, fp.get()) != 1 ||
        std::fwrite(img.data.data(), sizeof(double), img.data.size(), fp.get()) != img.data.size())
        throw std::runtime_error("short write: " + path);
}

Image read_f64(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open for reading: " + path);
    uint32_t header[4];
    if (std::fread(header, sizeof(header), 1, fp.get()) != 1 || header[0] != kF64Magic)
        throw std::runtime_error("bad float dump header: " + path);
    Image img(static_cast<int>(header[1]), static_cast<int>(header[2]),
              static_cast<int>(header[3]));
    if (std::fread(img.data.data(), sizeof(double), img.data.size(), fp.get()) != img.data.size())
        throw std::runtime_error("short read: " + path);
    return img;
}

}  // namespace splatfit
