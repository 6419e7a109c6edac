#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msi/tensor.hpp"

namespace msi {

struct BoundingBox {
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::uint16_t w = 0;
    std::uint16_t h = 0;
};

struct LabeledImageBatch {
    Tensor images;  // [N,1,H,W], values in [0,1]
    std::vector<int> labels;
    std::vector<BoundingBox> boxes;  // diagnostic digit bounds, may be empty for IDX data
    int num_classes = 10;

    std::int64_t count() const { return images.defined() ? images.shape()[0] : 0; }
    std::int64_t height() const { return images.shape()[2]; }
    std::int64_t width() const { return images.shape()[3]; }
};

struct DatasetSpec {
    std::uint64_t seed = 0;
    std::int64_t count = 1000;
    int image_size = 32;
    int num_classes = 10;
    float noise_amplitude = 0.3f;
    std::pair<int, int> distractor_count_range{1, 4};
    std::pair<float, float> digit_scale_range{0.4f, 0.7f};
};

// Noise background + rectangle/line distractors + one bright stroke-drawn
// digit glyph per sample. Pure in (spec, sample index); the digit is
// always the brightest structure so it stays the predictive region.
LabeledImageBatch generate_synthetic(const DatasetSpec& spec);

// Renders the glyph for one digit into a size x size patch (intensity 1),
// exposed for tests and fixtures.
std::vector<float> render_digit_glyph(int digit, int size);

// MNIST IDX ingestion. pad_to = 0 keeps the native resolution, otherwise
// images are zero-padded (centered) to pad_to x pad_to.
LabeledImageBatch load_idx(const std::string& images_path, const std::string& labels_path,
                           int pad_to = 0);

std::pair<LabeledImageBatch, LabeledImageBatch> split(const LabeledImageBatch& batch,
                                                      double train_fraction,
                                                      std::uint64_t seed);

// Row subset by index list (order preserved), used by split and the CLI.
LabeledImageBatch take(const LabeledImageBatch& batch, const std::vector<std::int64_t>& idx);

}  // namespace msi
