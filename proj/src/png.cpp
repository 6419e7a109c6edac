#include "msi/png.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "msi/errors.hpp"

namespace msi::png {

namespace {

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void write_chunk(std::ofstream& out, const char type[4], const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> head;
    put_u32be(head, static_cast<std::uint32_t>(data.size()));
    out.write(reinterpret_cast<const char*>(head.data()), 4);
    out.write(type, 4);
    if (!data.empty()) out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    std::vector<std::uint8_t> tail;
    put_u32be(tail, static_cast<std::uint32_t>(crc));
    out.write(reinterpret_cast<const char*>(tail.data()), 4);
}

std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void write_rgb(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& rgb) {
    if (width <= 0 || height <= 0 ||
        rgb.size() != static_cast<std::size_t>(width) * height * 3) {
        throw DimensionError("png buffer does not match width*height*3");
    }
    // Filter byte 0 in front of every scanline.
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(height) * (1 + static_cast<std::size_t>(width) * 3));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const std::uint8_t* row = rgb.data() + static_cast<std::size_t>(y) * width * 3;
        raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
        throw DataError("zlib compression failed while writing " + path);
    }
    compressed.resize(bound);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    put_u32be(ihdr, static_cast<std::uint32_t>(width));
    put_u32be(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", compressed);
    write_chunk(out, "IEND", {});
    if (!out) throw DataError("failed while writing " + path);
}

const std::array<std::array<std::uint8_t, 3>, 256>& colormap() {
    static const auto table = [] {
        std::array<std::array<std::uint8_t, 3>, 256> t{};
        for (int i = 0; i < 256; ++i) {
            const float x = static_cast<float>(i) / 255.0f;
            t[static_cast<std::size_t>(i)] = {to_byte(3.0f * x), to_byte(3.0f * x - 1.0f),
                                              to_byte(3.0f * x - 2.0f)};
        }
        return t;
    }();
    return table;
}

void render_panels(const std::string& path, const std::vector<float>& image,
                   const std::vector<float>& heat, int h, int w, double alpha_min) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    if (image.size() != hw || heat.size() != hw) {
        throw DimensionError("render: image/heatmap size does not match h*w");
    }
    const int gutter = 2;
    const int out_w = 4 * w + 3 * gutter;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(out_w) * h * 3, 255);
    auto put = [&](int panel, int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        const std::size_t off =
            (static_cast<std::size_t>(y) * out_w + panel * (w + gutter) + x) * 3;
        rgb[off] = r;
        rgb[off + 1] = g;
        rgb[off + 2] = b;
    };
    const auto& cmap = colormap();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const std::uint8_t gray = to_byte(image[i]);
            put(0, y, x, gray, gray, gray);
            const auto& c = cmap[to_byte(heat[i])];
            put(1, y, x, c[0], c[1], c[2]);
            const std::uint8_t above = heat[i] > alpha_min ? gray : 0;
            put(2, y, x, above, above, above);
            const std::uint8_t below = heat[i] <= alpha_min ? gray : 0;
            put(3, y, x, below, below, below);
        }
    }
    write_rgb(path, out_w, h, rgb);
}

}  // namespace msi::png
