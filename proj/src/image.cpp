#include "smalldet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace smalldet {

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> b) : bytes_(b) {}

    int next_int()
    {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
            throw ImageError("pnm: malformed header");
        }
        long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_++] - '0');
            if (v > (1L << 24)) {
                throw ImageError("pnm: header value too large");
            }
        }
        return static_cast<int>(v);
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_start()
    {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
            throw ImageError("pnm: malformed header");
        }
        return pos_ + 1;
    }

private:
    void skip_space_and_comments()
    {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') {
                    ++pos_;
                }
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 2;
};

// 3x5 glyphs, one row per 3-bit group, top row first.
const std::array<std::uint16_t, 10> kDigits = {
    0b111'101'101'101'111, 0b010'110'010'010'111, 0b111'001'111'100'111, 0b111'001'111'001'111,
    0b101'101'111'001'001, 0b111'100'111'001'111, 0b111'100'111'101'111, 0b111'001'010'010'010,
    0b111'101'111'101'111, 0b111'101'111'001'111,
};

std::uint16_t glyph(char c)
{
    if (c >= '0' && c <= '9') {
        return kDigits[c - '0'];
    }
    switch (c) {
    case '.': return 0b000'000'000'000'010;
    case '-': return 0b000'000'111'000'000;
    case ':': return 0b000'010'000'010'000;
    default: return 0;
    }
}

void put(Image& image, int x, int y, Rgb color)
{
    if (x < 0 || y < 0 || x >= image.width || y >= image.height) {
        return;
    }
    std::uint8_t* p = image.px(x, y);
    if (image.channels == 1) {
        p[0] = static_cast<std::uint8_t>((color[0] + color[1] + color[2]) / 3);
    } else {
        p[0] = color[0];
        p[1] = color[1];
        p[2] = color[2];
    }
}

}  // namespace

Image decode_pnm(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
        throw ImageError("pnm: expected binary P6 or P5 magic");
    }
    HeaderReader hdr(bytes);
    const int w = hdr.next_int();
    const int h = hdr.next_int();
    const int maxval = hdr.next_int();
    if (w <= 0 || h <= 0) {
        throw ImageError("pnm: non-positive dimensions");
    }
    if (maxval <= 0 || maxval > 255) {
        throw ImageError("pnm: only 8-bit maxval (1..255) is supported");
    }
    const std::size_t start = hdr.raster_start();
    Image img(w, h, bytes[1] == '6' ? 3 : 1);
    if (bytes.size() - start < img.pixels.size()) {
        throw ImageError("pnm: truncated raster");
    }
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(start), img.pixels.size(), img.pixels.begin());
    if (maxval != 255) {
        for (auto& v : img.pixels) {
            v = static_cast<std::uint8_t>(std::min(255, (v * 255 + maxval / 2) / maxval));
        }
    }
    return img;
}

std::vector<std::uint8_t> encode_pnm(const Image& image)
{
    if (image.channels != 1 && image.channels != 3) {
        throw ImageError("pnm: channels must be 1 or 3");
    }
    const std::string header = std::string(image.channels == 3 ? "P6\n" : "P5\n") +
                               std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

Image read_pnm(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ImageError("cannot open image " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_pnm(bytes);
    } catch (const ImageError& e) {
        throw ImageError(path + ": " + e.what());
    }
}

void write_pnm(const std::string& path, const Image& image)
{
    const auto bytes = encode_pnm(image);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw ImageError("cannot write image " + path);
    }
}

Tensor image_to_tensor(const Image& image)
{
    Tensor t({3, image.height, image.width});
    const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
    for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            const int src = image.channels == 1 ? 0 : c;
            t[c * plane + i] = static_cast<float>(image.pixels[i * image.channels + src]) / 255.0f;
        }
    }
    return t;
}

Image tensor_to_image(const Tensor& chw)
{
    if (chw.rank() != 3 || chw.dim(0) != 3) {
        throw ImageError("tensor_to_image: expected [3,H,W], got " + shape_string(chw.shape()));
    }
    Image img(chw.dim(2), chw.dim(1), 3);
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            const float v = std::clamp(chw[c * plane + i], 0.0f, 1.0f);
            img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    }
    return img;
}

void draw_rect(Image& image, int x1, int y1, int x2, int y2, Rgb color, int thickness)
{
    for (int t = 0; t < thickness; ++t) {
        for (int x = x1; x <= x2; ++x) {
            put(image, x, y1 + t, color);
            put(image, x, y2 - t, color);
        }
        for (int y = y1; y <= y2; ++y) {
            put(image, x1 + t, y, color);
            put(image, x2 - t, y, color);
        }
    }
}

void draw_text(Image& image, int x, int y, const std::string& text, Rgb color, int scale)
{
    for (char ch : text) {
        const std::uint16_t g = glyph(ch);
        for (int row = 0; row < 5; ++row) {
            for (int col = 0; col < 3; ++col) {
                if (!((g >> ((4 - row) * 3 + (2 - col))) & 1u)) {
                    continue;
                }
                for (int dy = 0; dy < scale; ++dy) {
                    for (int dx = 0; dx < scale; ++dx) {
                        put(image, x + col * scale + dx, y + row * scale + dy, color);
                    }
                }
            }
        }
        x += 4 * scale;
    }
}

}  // namespace smalldet
