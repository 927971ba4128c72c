#pragma once

#include "smalldet/tensor.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace smalldet {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit interleaved raster, 1 (gray) or 3 (RGB) channels.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int c = 3) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}

    std::uint8_t* px(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * channels]; }
    const std::uint8_t* px(int x, int y) const { return &pixels[(static_cast<std::size_t>(y) * width + x) * channels]; }

    bool operator==(const Image&) const = default;
};

using Rgb = std::array<std::uint8_t, 3>;

/// Binary PPM (P6) and PGM (P5) with maxval <= 255.
Image decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const Image& image);
Image read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Image& image);

/// [3,H,W] floats in [0,1]; gray input is replicated to three channels.
Tensor image_to_tensor(const Image& image);
/// Inverse of image_to_tensor for a [3,H,W] tensor, clamping to [0,1].
Image tensor_to_image(const Tensor& chw);

/// One-pixel-per-step rectangle outline, clipped to the image.
void draw_rect(Image& image, int x1, int y1, int x2, int y2, Rgb color, int thickness = 1);
/// Digits, '.', '-', ':' and space in a 3x5 bitmap font scaled by `scale`.
void draw_text(Image& image, int x, int y, const std::string& text, Rgb color, int scale = 1);

}  // namespace smalldet
