#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatfit {

/// Row-major interleaved image of doubles, values nominally in [0, 1].
struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

inline void require_same_shape(const Image& a, const Image& b, const char* who) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

/// 8-bit RGBA PNG I/O.
void write_png_rgba(const std::string& path, const Image& rgb, const Image& alpha);
void write_png_rgb(const std::string& path, const Image& rgb);

struct RgbaImage {
    Image rgb;    // H x W x 3
    Image alpha;  // H x W x 1
};
RgbaImage read_png_rgba(const std::string& path);

/// Lossless double dump: little-endian header (magic, width, height, channels)
/// followed by raw float64 samples.
void write_f64(const std::string& path, const Image& img);
Image read_f64(const std::string& path);

}  // namespace splatfit
