#include "msi/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "msi/errors.hpp"

namespace msi::io {

namespace {

void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
    f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& f, const std::string& path, void* p, std::size_t n) {
    if (!f.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n))) {
        throw FormatError(path + ": truncated (wanted " + std::to_string(n) + " bytes)");
    }
}

void write_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    write_bytes(f, b, 4);
}

std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    read_bytes(f, path, b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u16(std::ofstream& f, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    write_bytes(f, b, 2);
}

std::uint16_t read_u16(std::ifstream& f, const std::string& path) {
    unsigned char b[2];
    read_bytes(f, path, b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void check_magic(std::ifstream& f, const std::string& path, const char* magic) {
    char got[9] = {0};
    read_bytes(f, path, got, 8);
    if (std::memcmp(got, magic, 8) != 0) {
        throw FormatError(path + ": bad magic, expected " + std::string(magic, 8));
    }
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open");
    return f;
}

}  // namespace

void save_dataset(const std::string& path, const LabeledImageBatch& batch) {
    auto f = open_out(path);
    write_bytes(f, "MSIDATA1", 8);
    const std::int64_t n = batch.count();
    write_u32(f, static_cast<std::uint32_t>(n));
    write_u32(f, 1);
    write_u32(f, static_cast<std::uint32_t>(batch.height()));
    write_u32(f, static_cast<std::uint32_t>(batch.width()));
    write_u32(f, static_cast<std::uint32_t>(batch.num_classes));
    write_bytes(f, batch.images.data().data(), batch.images.data().size() * sizeof(float));
    for (int l : batch.labels) {
        const unsigned char b = static_cast<unsigned char>(l);
        write_bytes(f, &b, 1);
    }
    for (std::int64_t i = 0; i < n; ++i) {
        BoundingBox box;
        if (!batch.boxes.empty()) box = batch.boxes[static_cast<std::size_t>(i)];
        write_u16(f, box.x);
        write_u16(f, box.y);
        write_u16(f, box.w);
        write_u16(f, box.h);
    }
    if (!f) throw DataError(path + ": write failed");
}

LabeledImageBatch load_dataset(const std::string& path) {
    auto f = open_in(path);
    check_magic(f, path, "MSIDATA1");
    const std::int64_t n = read_u32(f, path);
    const std::int64_t c = read_u32(f, path);
    const std::int64_t h = read_u32(f, path);
    const std::int64_t w = read_u32(f, path);
    const int classes = static_cast<int>(read_u32(f, path));
    if (c != 1) throw FormatError(path + ": unsupported channel count " + std::to_string(c));
    std::vector<float> pixels(static_cast<std::size_t>(n * c * h * w));
    read_bytes(f, path, pixels.data(), pixels.size() * sizeof(float));
    std::vector<unsigned char> lab(static_cast<std::size_t>(n));
    read_bytes(f, path, lab.data(), lab.size());
    LabeledImageBatch batch;
    batch.images = Tensor::from_data({n, c, h, w}, std::move(pixels));
    batch.labels.assign(lab.begin(), lab.end());
    batch.boxes.resize(static_cast<std::size_t>(n));
    for (auto& box : batch.boxes) {
        box.x = read_u16(f, path);
        box.y = read_u16(f, path);
        box.w = read_u16(f, path);
        box.h = read_u16(f, path);
    }
    batch.num_classes = classes;
    return batch;
}

void save_heatmaps(const std::string& path, const HeatmapFile& maps) {
    if (static_cast<std::int64_t>(maps.values.size()) != maps.n * maps.h * maps.w) {
        throw UsageError("heatmap payload does not match header dimensions");
    }
    for (float v : maps.values) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw DataError("heatmap value " + std::to_string(v) + " outside [0,1]");
        }
    }
    auto f = open_out(path);
    write_bytes(f, "MSIHEAT1", 8);
    write_u32(f, static_cast<std::uint32_t>(maps.n));
    write_u32(f, static_cast<std::uint32_t>(maps.h));
    write_u32(f, static_cast<std::uint32_t>(maps.w));
    write_u32(f, static_cast<std::uint32_t>(maps.method.size()));
    write_bytes(f, maps.method.data(), maps.method.size());
    write_bytes(f, maps.values.data(), maps.values.size() * sizeof(float));
    if (!f) throw DataError(path + ": write failed");
}

HeatmapFile load_heatmaps(const std::string& path) {
    auto f = open_in(path);
    check_magic(f, path, "MSIHEAT1");
    HeatmapFile maps;
    maps.n = read_u32(f, path);
    maps.h = read_u32(f, path);
    maps.w = read_u32(f, path);
    const std::uint32_t tag_len = read_u32(f, path);
    if (tag_len > 4096) throw FormatError(path + ": implausible method tag length");
    maps.method.resize(tag_len);
    read_bytes(f, path, maps.method.data(), tag_len);
    maps.values.resize(static_cast<std::size_t>(maps.n * maps.h * maps.w));
    read_bytes(f, path, maps.values.data(), maps.values.size() * sizeof(float));
    return maps;
}

void save_weights(const std::string& path, const WeightsFile& file) {
    nlohmann::json manifest = file.manifest;
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : file.tensors) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["byte_offset"] = offset;
        tensors.push_back(entry);
        offset += t.data().size() * sizeof(float);
    }
    manifest["tensors"] = tensors;
    const std::string json_text = manifest.dump();
    auto f = open_out(path);
    write_bytes(f, "MSIWGTS1", 8);
    write_u32(f, static_cast<std::uint32_t>(json_text.size()));
    write_bytes(f, json_text.data(), json_text.size());
    for (const auto& [name, t] : file.tensors) {
        write_bytes(f, t.data().data(), t.data().size() * sizeof(float));
    }
    if (!f) throw DataError(path + ": write failed");
}

WeightsFile load_weights(const std::string& path) {
    auto f = open_in(path);
    check_magic(f, path, "MSIWGTS1");
    const std::uint32_t json_len = read_u32(f, path);
    std::string json_text(json_len, '\0');
    read_bytes(f, path, json_text.data(), json_len);
    WeightsFile file;
    try {
        file.manifest = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": manifest parse error: " + e.what());
    }
    if (!file.manifest.contains("tensors") || !file.manifest["tensors"].is_array()) {
        throw FormatError(path + ": manifest missing tensors array");
    }
    std::vector<char> blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    for (const auto& entry : file.manifest["tensors"]) {
        if (!entry.contains("name") || !entry.contains("shape") || !entry.contains("byte_offset")) {
            throw FormatError(path + ": malformed tensor manifest entry");
        }
        const std::string name = entry["name"].get<std::string>();
        const Shape shape = entry["shape"].get<Shape>();
        const std::size_t offset = entry["byte_offset"].get<std::size_t>();
        const std::size_t bytes = static_cast<std::size_t>(shape_size(shape)) * sizeof(float);
        if (offset + bytes > blob.size()) {
            throw FormatError(path + ": tensor '" + name + "' extends past end of blob");
        }
        std::vector<float> data(static_cast<std::size_t>(shape_size(shape)));
        std::memcpy(data.data(), blob.data() + offset, bytes);
        file.tensors.emplace_back(name, Tensor::from_data(shape, std::move(data)));
    }
    return file;
}

std::uint64_t fnv1a_hash(const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

std::string file_hash_hex(const std::string& path) {
    auto f = open_in(path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a_hash(bytes.data(), bytes.size())));
    return std::string(buf);
}

}  // namespace msi::io
