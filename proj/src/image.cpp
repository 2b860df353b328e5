#include "handsoff/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "handsoff/errors.hpp"

namespace handsoff {

Rgb8Image quantize(const RgbImage& image) {
    Rgb8Image out(image.width, image.height);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
        out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return out;
}

RgbImage dequantize(const Rgb8Image& image) {
    RgbImage out(image.width, image.height);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) out.pixels[i] = static_cast<float>(image.pixels[i]) / 255.0f;
    return out;
}

void write_png(const std::filesystem::path& path, const Rgb8Image& image) {
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + png.message);
    }
}

Rgb8Image read_png(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof png);
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    Rgb8Image out(static_cast<int>(png.width), static_cast<int>(png.height));
    if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&png);
        throw IoError("cannot decode PNG " + path.string() + ": " + png.message);
    }
    return out;
}

}  // namespace handsoff
