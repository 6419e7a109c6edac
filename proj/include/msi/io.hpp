#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msi/datagen.hpp"
#include "msi/tensor.hpp"

namespace msi::io {

// Dataset container: "MSIDATA1", u32 N,C,H,W,classes, N*C*H*W f32 LE
// pixels, N u8 labels, N*4 u16 LE bounding boxes.
void save_dataset(const std::string& path, const LabeledImageBatch& batch);
LabeledImageBatch load_dataset(const std::string& path);

// Heatmap container: "MSIHEAT1", u32 N,H,W, u32 tag length + method tag,
// N*H*W f32 LE values.
struct HeatmapFile {
    std::string method;
    std::int64_t n = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<float> values;  // [N,H,W] row-major
};

void save_heatmaps(const std::string& path, const HeatmapFile& maps);
HeatmapFile load_heatmaps(const std::string& path);

// Weights container: "MSIWGTS1", u32 manifest length, JSON manifest
// ({name, shape, byte_offset} per tensor plus architecture descriptor and
// config echo), then one little-endian f32 blob.
struct WeightsFile {
    nlohmann::json manifest;  // "architecture", "config", "frozen", "tensors"
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_weights(const std::string& path, const WeightsFile& file);
WeightsFile load_weights(const std::string& path);

// FNV-1a content hashes, used for freeze/determinism checks.
std::uint64_t fnv1a_hash(const void* data, std::size_t n);
std::string file_hash_hex(const std::string& path);

}  // namespace msi::io
