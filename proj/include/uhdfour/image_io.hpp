#pragma once

// 8-bit sRGB PNG files <-> (1,3,H,W) tensors with values byte/255.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "uhdfour/tensor.hpp"

namespace uhdfour {

class ImageIoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

namespace detail {

/// Byte from a unit value: clamp to [0,1], then round half to even.
inline png_byte to_byte(double v) {
    return static_cast<png_byte>(std::nearbyint(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct PngImage {
    png_image image{};
    PngImage() { image.version = PNG_IMAGE_VERSION; }
    ~PngImage() { png_image_free(&image); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

}  // namespace detail

/// Gray, palette and alpha variants are converted to RGB; alpha is dropped.
template <class T = float>
Tensor<T> load_png(const std::filesystem::path& path) {
    detail::PngImage png;
    if (!png_image_begin_read_from_file(&png.image, path.string().c_str())) {
        throw ImageIoError(path.string() + ": " + png.image.message);
    }
    png.image.format = PNG_FORMAT_RGB;
    const std::size_t w = png.image.width, h = png.image.height;
    std::vector<png_byte> pixels(PNG_IMAGE_SIZE(png.image));
    if (!png_image_finish_read(&png.image, nullptr, pixels.data(), 0, nullptr)) {
        throw ImageIoError(path.string() + ": " + png.image.message);
    }
    Tensor<T> out(Shape{1, 3, h, w});
    auto d = out.mutable_data();
    const std::size_t plane = w * h;
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            d[c * plane + i] = static_cast<T>(pixels[i * 3 + c] / 255.0);
    return out;
}

/// Writes batch item 0 of a 3-channel tensor.
template <class T>
void save_png(const Tensor<T>& t, const std::filesystem::path& path) {
    const Shape s = t.shape();
    if (s.c != 3 || s.h == 0 || s.w == 0) {
        throw DimensionError("save_png: expected 3 channels, got " + s.str());
    }
    const std::size_t plane = s.plane();
    const auto d = t.data();
    std::vector<png_byte> pixels(plane * 3);
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            pixels[i * 3 + c] = detail::to_byte(static_cast<double>(d[c * plane + i]));
    detail::PngImage png;
    png.image.width = static_cast<png_uint_32>(s.w);
    png.image.height = static_cast<png_uint_32>(s.h);
    png.image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png.image, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
        throw ImageIoError(path.string() + ": " + png.image.message);
    }
}

}  // namespace uhdfour
