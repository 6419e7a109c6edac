#include "msi/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "msi/errors.hpp"

namespace msi {

namespace {

// Background intensity ceiling; digit glyphs render at >= kDigitLo so the
// digit always clears the background by the required 0.2 margin.
constexpr float kBackgroundCap = 0.75f;
constexpr float kDigitLo = 0.95f;
constexpr int kMinGlyphPx = 6;

// Seven-segment layout. Segments: 0=top, 1=top-right, 2=bottom-right,
// 3=bottom, 4=bottom-left, 5=top-left, 6=middle.
constexpr std::uint8_t kSegments[10] = {
    0b0111111,  // 0
    0b0000110,  // 1
    0b1011011,  // 2
    0b1001111,  // 3
    0b1100110,  // 4
    0b1101101,  // 5
    0b1111101,  // 6
    0b0000111,  // 7
    0b1111111,  // 8
    0b1101111,  // 9
};

void fill_rect(std::vector<float>& img, int size, int x0, int y0, int x1, int y1, float v) {
    x0 = std::clamp(x0, 0, size - 1);
    y0 = std::clamp(y0, 0, size - 1);
    x1 = std::clamp(x1, 0, size - 1);
    y1 = std::clamp(y1, 0, size - 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) img[static_cast<std::size_t>(y) * size + x] = v;
}

std::uint32_t read_be_u32(std::ifstream& f, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
    }
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

std::vector<float> render_digit_glyph(int digit, int size) {
    if (digit < 0 || digit > 9) throw DataError("digit out of range");
    if (size < kMinGlyphPx) {
        throw ConfigError("digit glyph needs at least " + std::to_string(kMinGlyphPx) +
                          " pixels, requested " + std::to_string(size));
    }
    std::vector<float> img(static_cast<std::size_t>(size) * size, 0.0f);
    const int t = std::max(1, size / 5);
    const int lo = 0, hi = size - 1;
    const int mid0 = (size - t) / 2;
    const std::uint8_t seg = kSegments[digit];
    // horizontal bars
    if (seg & 0b0000001) fill_rect(img, size, lo, lo, hi, lo + t - 1, 1.0f);          // top
    if (seg & 0b1000000) fill_rect(img, size, lo, mid0, hi, mid0 + t - 1, 1.0f);      // middle
    if (seg & 0b0001000) fill_rect(img, size, lo, hi - t + 1, hi, hi, 1.0f);          // bottom
    // vertical bars
    if (seg & 0b0100000) fill_rect(img, size, lo, lo, lo + t - 1, mid0 + t - 1, 1.0f);  // top-left
    if (seg & 0b0000010) fill_rect(img, size, hi - t + 1, lo, hi, mid0 + t - 1, 1.0f);  // top-right
    if (seg & 0b0010000) fill_rect(img, size, lo, mid0, lo + t - 1, hi, 1.0f);          // bottom-left
    if (seg & 0b0000100) fill_rect(img, size, hi - t + 1, mid0, hi, hi, 1.0f);          // bottom-right
    return img;
}

LabeledImageBatch generate_synthetic(const DatasetSpec& spec) {
    if (spec.count <= 0) throw ConfigError("dataset count must be positive");
    if (spec.num_classes < 2 || spec.num_classes > 10) {
        throw ConfigError("num_classes must be in [2,10]");
    }
    if (spec.noise_amplitude < 0.0f || spec.noise_amplitude > 1.0f) {
        throw ConfigError("noise_amplitude must be in [0,1]");
    }
    if (spec.distractor_count_range.first > spec.distractor_count_range.second ||
        spec.distractor_count_range.first < 0) {
        throw ConfigError("invalid distractor_count_range");
    }
    if (!(spec.digit_scale_range.first > 0.0f) ||
        spec.digit_scale_range.first > spec.digit_scale_range.second ||
        spec.digit_scale_range.second > 1.0f) {
        throw ConfigError("invalid digit_scale_range");
    }
    const int size = spec.image_size;
    const int min_px =
        static_cast<int>(std::lround(spec.digit_scale_range.first * size));
    if (min_px < kMinGlyphPx) {
        throw ConfigError("digit cannot fit: scale " +
                          std::to_string(spec.digit_scale_range.first) + " of image size " +
                          std::to_string(size) + " gives a " + std::to_string(min_px) +
                          "px glyph (minimum " + std::to_string(kMinGlyphPx) + "px)");
    }

    const std::int64_t n = spec.count;
    std::vector<float> pixels(static_cast<std::size_t>(n) * size * size);
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::vector<BoundingBox> boxes(static_cast<std::size_t>(n));

    // Balanced class assignment: a seed-shuffled class permutation walked
    // round-robin, so frequencies are exact up to remainder.
    Rng label_rng = Rng(spec.seed).split(0x1ABE15);
    std::vector<int> perm(static_cast<std::size_t>(spec.num_classes));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) {
        std::swap(perm[i], perm[label_rng.next_below(i + 1)]);
    }

    const Rng base(spec.seed);
    for (std::int64_t s = 0; s < n; ++s) {
        Rng rng = base.split(static_cast<std::uint64_t>(s) + 1);
        float* img = pixels.data() + s * size * size;
        std::vector<float> work(static_cast<std::size_t>(size) * size, 0.0f);

        for (auto& v : work) v = rng.next_float() * spec.noise_amplitude;

        const int k_lo = spec.distractor_count_range.first;
        const int k_hi = spec.distractor_count_range.second;
        const int k = k_lo + static_cast<int>(rng.next_below(
                                 static_cast<std::uint64_t>(k_hi - k_lo + 1)));
        for (int d = 0; d < k; ++d) {
            const bool is_line = rng.next_float() < 0.5f;
            const float intensity = rng.uniform(0.15f, kBackgroundCap);
            const int x0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size)));
            const int y0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size)));
            if (is_line) {
                const int len = 3 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size / 2)));
                if (rng.next_float() < 0.5f) {
                    fill_rect(work, size, x0, y0, x0 + len, y0, intensity);
                } else {
                    fill_rect(work, size, x0, y0, x0, y0 + len, intensity);
                }
            } else {
                const int w = 2 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size / 4)));
                const int h = 2 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size / 4)));
                fill_rect(work, size, x0, y0, x0 + w, y0 + h, intensity);
            }
        }
        for (auto& v : work) v = std::min(v, kBackgroundCap);

        const int label = perm[static_cast<std::size_t>(s % spec.num_classes)];
        const float fscale = rng.uniform(spec.digit_scale_range.first, spec.digit_scale_range.second);
        int digit_px = static_cast<int>(std::lround(fscale * size));
        digit_px = std::clamp(digit_px, kMinGlyphPx, size);
        const int px = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size - digit_px + 1)));
        const int py = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size - digit_px + 1)));
        const float intensity = rng.uniform(kDigitLo, 1.0f);
        const std::vector<float> glyph = render_digit_glyph(label, digit_px);
        for (int y = 0; y < digit_px; ++y) {
            for (int x = 0; x < digit_px; ++x) {
                if (glyph[static_cast<std::size_t>(y) * digit_px + x] > 0.0f) {
                    work[static_cast<std::size_t>(py + y) * size + (px + x)] = intensity;
                }
            }
        }

        std::copy(work.begin(), work.end(), img);
        labels[static_cast<std::size_t>(s)] = label;
        boxes[static_cast<std::size_t>(s)] = {static_cast<std::uint16_t>(px),
                                              static_cast<std::uint16_t>(py),
                                              static_cast<std::uint16_t>(digit_px),
                                              static_cast<std::uint16_t>(digit_px)};
    }

    LabeledImageBatch batch;
    batch.images = Tensor::from_data({n, 1, size, size}, std::move(pixels));
    batch.labels = std::move(labels);
    batch.boxes = std::move(boxes);
    batch.num_classes = spec.num_classes;
    return batch;
}

LabeledImageBatch load_idx(const std::string& images_path, const std::string& labels_path,
                           int pad_to) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw FormatError(images_path + ": cannot open");
    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw FormatError(labels_path + ": cannot open");

    const std::uint32_t magic_i = read_be_u32(fi, images_path, 0);
    if (magic_i != 0x00000803u) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "bad image magic 0x%08x at byte offset 0", magic_i);
        throw FormatError(images_path + ": " + buf);
    }
    const std::uint32_t n = read_be_u32(fi, images_path, 4);
    const std::uint32_t h = read_be_u32(fi, images_path, 8);
    const std::uint32_t w = read_be_u32(fi, images_path, 12);

    const std::uint32_t magic_l = read_be_u32(fl, labels_path, 0);
    if (magic_l != 0x00000801u) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "bad label magic 0x%08x at byte offset 0", magic_l);
        throw FormatError(labels_path + ": " + buf);
    }
    const std::uint32_t nl = read_be_u32(fl, labels_path, 4);
    if (nl != n) {
        throw FormatError(labels_path + ": label count " + std::to_string(nl) +
                          " does not match image count " + std::to_string(n));
    }

    if (pad_to > 0 && (pad_to < static_cast<int>(h) || pad_to < static_cast<int>(w))) {
        throw ConfigError("pad_to smaller than native image size");
    }
    const int out_h = pad_to > 0 ? pad_to : static_cast<int>(h);
    const int out_w = pad_to > 0 ? pad_to : static_cast<int>(w);
    const int off_y = (out_h - static_cast<int>(h)) / 2;
    const int off_x = (out_w - static_cast<int>(w)) / 2;

    std::vector<float> pixels(static_cast<std::size_t>(n) * out_h * out_w, 0.0f);
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    for (std::uint32_t s = 0; s < n; ++s) {
        for (std::uint32_t y = 0; y < h; ++y) {
            if (!fi.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w))) {
                throw FormatError(images_path + ": truncated at byte offset " +
                                  std::to_string(16 + (static_cast<std::size_t>(s) * h + y) * w));
            }
            float* dst = pixels.data() +
                         (static_cast<std::size_t>(s) * out_h + (off_y + y)) * out_w + off_x;
            for (std::uint32_t x = 0; x < w; ++x) dst[x] = static_cast<float>(row[x]) / 255.0f;
        }
    }
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::vector<unsigned char> lab(static_cast<std::size_t>(n));
    if (!fl.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(n))) {
        throw FormatError(labels_path + ": truncated label payload at byte offset 8");
    }
    for (std::uint32_t s = 0; s < n; ++s) labels[s] = lab[s];

    LabeledImageBatch batch;
    batch.images =
        Tensor::from_data({static_cast<std::int64_t>(n), 1, out_h, out_w}, std::move(pixels));
    batch.labels = std::move(labels);
    batch.num_classes = 10;
    return batch;
}

LabeledImageBatch take(const LabeledImageBatch& batch, const std::vector<std::int64_t>& idx) {
    const std::int64_t hw = batch.height() * batch.width();
    std::vector<float> pixels(idx.size() * static_cast<std::size_t>(hw));
    std::vector<int> labels(idx.size());
    std::vector<BoundingBox> boxes;
    if (!batch.boxes.empty()) boxes.resize(idx.size());
    const float* src = batch.images.data().data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::int64_t s = idx[i];
        if (s < 0 || s >= batch.count()) throw DataError("take: index out of range");
        std::copy(src + s * hw, src + (s + 1) * hw, pixels.begin() + static_cast<std::int64_t>(i) * hw);
        labels[i] = batch.labels[static_cast<std::size_t>(s)];
        if (!batch.boxes.empty()) boxes[i] = batch.boxes[static_cast<std::size_t>(s)];
    }
    LabeledImageBatch out;
    out.images = Tensor::from_data(
        {static_cast<std::int64_t>(idx.size()), 1, batch.height(), batch.width()},
        std::move(pixels));
    out.labels = std::move(labels);
    out.boxes = std::move(boxes);
    out.num_classes = batch.num_classes;
    return out;
}

std::pair<LabeledImageBatch, LabeledImageBatch> split(const LabeledImageBatch& batch,
                                                      double train_fraction,
                                                      std::uint64_t seed) {
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
        throw ConfigError("train_fraction must be in (0,1)");
    }
    const std::int64_t n = batch.count();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = Rng(seed).split(0x5B117);
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
        std::swap(idx[i], idx[rng.next_below(i + 1)]);
    }
    const std::int64_t n_train = static_cast<std::int64_t>(train_fraction * static_cast<double>(n));
    std::vector<std::int64_t> train_idx(idx.begin(), idx.begin() + n_train);
    std::vector<std::int64_t> test_idx(idx.begin() + n_train, idx.end());
    return {take(batch, train_idx), take(batch, test_idx)};
}

}  // namespace msi
