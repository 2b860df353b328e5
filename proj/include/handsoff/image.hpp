#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace handsoff {

/// Interleaved RGB, row-major (y, x, channel), values nominally in [0, 1].
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    RgbImage() = default;
    RgbImage(int w, int h, float fill = 0.0f)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool operator==(const RgbImage&) const = default;
};

/// 8-bit interleaved RGB.
struct Rgb8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Rgb8Image() = default;
    Rgb8Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool operator==(const Rgb8Image&) const = default;
};

/// Round-to-nearest with clamping to [0, 255].
Rgb8Image quantize(const RgbImage& image);
RgbImage dequantize(const Rgb8Image& image);

void write_png(const std::filesystem::path& path, const Rgb8Image& image);
Rgb8Image read_png(const std::filesystem::path& path);

}  // namespace handsoff
