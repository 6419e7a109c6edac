#include "msi/explainers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msi/adam.hpp"
#include "msi/errors.hpp"
#include "msi/io.hpp"

namespace msi {

namespace {

Tensor fan_in_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
    const float limit = 1.0f / std::sqrt(static_cast<float>(fan_in));
    return Tensor::uniform(shape, rng, -limit, limit, /*requires_grad=*/true);
}

void minmax_normalize(std::vector<float>& v) {
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    const float lo = *mn, hi = *mx;
    if (hi - lo < 1e-12f) {
        std::fill(v.begin(), v.end(), 0.0f);
        return;
    }
    const float inv = 1.0f / (hi - lo);
    for (auto& x : v) x = (x - lo) * inv;
}

std::vector<int> adapter_channels(int feature_channels) {
    std::vector<int> c{feature_channels};
    for (int i = 0; i < 3; ++i) c.push_back(std::max(c.back() / 2, 1));
    c.push_back(1);
    return c;
}

Tensor image_slice(const Tensor& images, std::int64_t start, std::int64_t len) {
    const Shape& s = images.shape();
    const std::int64_t chw = s[1] * s[2] * s[3];
    const float* p = images.data().data();
    return Tensor::from_data({len, s[1], s[2], s[3]},
                             std::vector<float>(p + start * chw, p + (start + len) * chw));
}

}  // namespace

LaxAdapter LaxAdapter::init(int feature_channels, int feature_size, std::uint64_t seed) {
    if (feature_channels < 8) throw ConfigError("adapter needs at least 8 feature channels");
    LaxAdapter a;
    a.feature_channels_ = feature_channels;
    a.feature_size_ = feature_size;
    Rng rng = Rng(seed).split(0x1A8);
    const std::vector<int> chain = adapter_channels(feature_channels);
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
        const std::int64_t fan_in = static_cast<std::int64_t>(chain[i]) * 9;
        a.conv_w_.push_back(fan_in_uniform({chain[i + 1], chain[i], 3, 3}, fan_in, rng));
        a.conv_b_.push_back(fan_in_uniform({1, chain[i + 1], 1, 1}, fan_in, rng));
    }
    return a;
}

Tensor LaxAdapter::logits(const Tensor& features) const {
    Tensor x = features;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        x = add(conv2d(x, conv_w_[i], 1, 1), conv_b_[i]);
        if (i + 1 < conv_w_.size()) x = relu(x);
    }
    return x;
}

Tensor LaxAdapter::mask_low(const Tensor& features) const { return sigmoid(logits(features)); }

std::vector<Tensor> LaxAdapter::parameters() {
    std::vector<Tensor> out;
    for (auto& t : conv_w_) out.push_back(t);
    for (auto& t : conv_b_) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor>> LaxAdapter::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        out.emplace_back("lax" + std::to_string(i) + ".w", conv_w_[i]);
        out.emplace_back("lax" + std::to_string(i) + ".b", conv_b_[i]);
    }
    return out;
}

void LaxAdapter::save(const std::string& path, const std::string& config_echo) const {
    io::WeightsFile file;
    file.manifest["architecture"] = {{"type", "lax_adapter"},
                                     {"feature_channels", feature_channels_},
                                     {"feature_size", feature_size_}};
    file.manifest["config"] = config_echo;
    file.tensors = named_parameters();
    io::save_weights(path, file);
}

LaxAdapter LaxAdapter::load(const std::string& path) {
    io::WeightsFile file = io::load_weights(path);
    const auto& a = file.manifest.value("architecture", nlohmann::json::object());
    if (a.value("type", "") != "lax_adapter") {
        throw FormatError(path + ": not an adapter weights file");
    }
    LaxAdapter adapter;
    adapter.feature_channels_ = a.at("feature_channels").get<int>();
    adapter.feature_size_ = a.at("feature_size").get<int>();
    const std::vector<int> chain = adapter_channels(adapter.feature_channels_);
    auto find = [&](const std::string& name) -> Tensor {
        for (auto& [n, t] : file.tensors) {
            if (n == name) return t;
        }
        throw FormatError(path + ": manifest lists no tensor named '" + name + "'");
    };
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
        Tensor w = find("lax" + std::to_string(i) + ".w");
        Tensor b = find("lax" + std::to_string(i) + ".b");
        if (w.shape() != Shape{chain[i + 1], chain[i], 3, 3}) {
            throw FormatError(path + ": lax" + std::to_string(i) + " shape mismatch");
        }
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        adapter.conv_w_.push_back(w);
        adapter.conv_b_.push_back(b);
    }
    return adapter;
}

LaxForwardResult lax_forward(const Classifier& classifier, const LaxAdapter& adapter,
                             const Tensor& images) {
    if (!classifier.frozen()) {
        throw UsageError("lax_forward requires a frozen classifier");
    }
    LaxForwardResult r;
    Tensor features = classifier.features(images);
    r.orig_logits = classifier.head(features);
    r.mask_low = adapter.mask_low(features);
    r.mask = upsample_bilinear(r.mask_low, static_cast<int>(images.shape()[2]),
                               static_cast<int>(images.shape()[3]));
    r.masked_input = mul(images, r.mask);
    r.masked_logits = classifier.forward(r.masked_input);
    return r;
}

Tensor entropy_loss(const Tensor& masks, float temperature, float epsilon) {
    if (!(temperature > 0.0f)) throw ConfigError("temperature must be positive");
    const Shape& s = masks.shape();
    if (s.empty() || s.size() < 2) throw DimensionError("entropy_loss expects batched masks");
    const std::int64_t n = s[0];
    const std::int64_t cells = shape_size(s) / n;
    Tensor flat = reshape(masks, {n, cells});
    Tensor p = softmax(scale(max_scalar(flat, 0.0f), 1.0f / temperature), 1);
    Tensor plogp = mul(p, log_t(add_scalar(p, epsilon)));
    return scale(sum(plogp), -1.0f / static_cast<float>(n));
}

Tensor lax_loss(const std::vector<int>& labels, const Tensor& masked_logits,
                const Tensor& mask_low, const LaxConfig& cfg) {
    Tensor ce = cross_entropy(masked_logits, labels);
    if (cfg.lambda_entropy == 0.0f) return ce;
    Tensor ent = entropy_loss(mask_low, cfg.temperature, cfg.epsilon);
    return add(ce, scale(ent, cfg.lambda_entropy));
}

LaxAdapter train_lax(const Classifier& classifier, const LabeledImageBatch& data,
                     const LaxConfig& cfg, LaxTrainStats* stats) {
    if (!classifier.frozen()) throw UsageError("train_lax requires a frozen classifier");
    if (cfg.lr <= 0.0f || cfg.batch_size <= 0 || cfg.epochs < 0) {
        throw ConfigError("lax config values must be positive");
    }
    if (cfg.lambda_entropy < 0.0f || !(cfg.temperature > 0.0f) || !(cfg.epsilon > 0.0f)) {
        throw ConfigError("invalid lax loss hyperparameters");
    }
    const auto& arch = classifier.arch();
    LaxAdapter adapter = LaxAdapter::init(arch.feature_channels(), arch.feature_size(), cfg.seed);
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam opt(adapter.parameters(), acfg);

    const std::int64_t n = data.count();
    const std::int64_t hw = data.height() * data.width();
    const float* pixels = data.images.data().data();

    // The classifier is frozen, so per-sample features are constant
    // across epochs; compute them once.
    const std::int64_t fsz = static_cast<std::int64_t>(arch.feature_channels()) *
                             arch.feature_size() * arch.feature_size();
    std::vector<float> feature_cache(static_cast<std::size_t>(n * fsz));
    for (std::int64_t start = 0; start < n; start += 256) {
        const std::int64_t len = std::min<std::int64_t>(256, n - start);
        Tensor f = classifier.features(image_slice(data.images, start, len));
        std::copy(f.data().begin(), f.data().end(), feature_cache.begin() + start * fsz);
    }

    Rng rng = Rng(cfg.seed).split(0x7A1);
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    if (stats) *stats = {};

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = rng.split(static_cast<std::uint64_t>(epoch) + 1);
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);
        }
        double epoch_loss = 0.0, mask_sum = 0.0;
        std::int64_t steps = 0, correct = 0, mask_cells = 0;
        for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
            const std::int64_t len = std::min<std::int64_t>(cfg.batch_size, n - start);
            std::vector<float> img_chunk(static_cast<std::size_t>(len * hw));
            std::vector<float> feat_chunk(static_cast<std::size_t>(len * fsz));
            std::vector<int> labels(static_cast<std::size_t>(len));
            for (std::int64_t i = 0; i < len; ++i) {
                const std::int64_t s = order[static_cast<std::size_t>(start + i)];
                std::copy(pixels + s * hw, pixels + (s + 1) * hw, img_chunk.begin() + i * hw);
                std::copy(feature_cache.begin() + s * fsz, feature_cache.begin() + (s + 1) * fsz,
                          feat_chunk.begin() + i * fsz);
                labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(s)];
            }
            Tensor images = Tensor::from_data({len, 1, data.height(), data.width()},
                                              std::move(img_chunk));
            Tensor features = Tensor::from_data(
                {len, arch.feature_channels(), arch.feature_size(), arch.feature_size()},
                std::move(feat_chunk));
            Tensor mask_low = adapter.mask_low(features);
            Tensor mask = upsample_bilinear(mask_low, static_cast<int>(data.height()),
                                            static_cast<int>(data.width()));
            Tensor masked = mul(images, mask);
            Tensor logits = classifier.forward(masked);
            Tensor loss = lax_loss(labels, logits, mask_low, cfg);
            if (!std::isfinite(loss.item())) {
                throw TrainingError("lax loss diverged at epoch " + std::to_string(epoch) +
                                    ", step " + std::to_string(steps));
            }
            backward(loss);
            opt.step();

            epoch_loss += loss.item();
            ++steps;
            const float* lg = logits.data().data();
            const std::int64_t c = logits.shape()[1];
            for (std::int64_t i = 0; i < len; ++i) {
                const float* row = lg + i * c;
                if (std::max_element(row, row + c) - row == labels[static_cast<std::size_t>(i)])
                    ++correct;
            }
            for (float v : mask.data()) mask_sum += v;
            mask_cells += mask.size();
        }
        if (stats) {
            stats->epoch_loss.push_back(static_cast<float>(epoch_loss / std::max<std::int64_t>(1, steps)));
            stats->epoch_masked_accuracy.push_back(static_cast<float>(correct) /
                                                   static_cast<float>(n));
            stats->epoch_mean_mask.push_back(
                static_cast<float>(mask_sum / static_cast<double>(std::max<std::int64_t>(1, mask_cells))));
        }
    }
    return adapter;
}

std::vector<Heatmap> lax_explain(const Classifier& classifier, const LaxAdapter& adapter,
                                 const LabeledImageBatch& data, int batch_size) {
    const std::int64_t n = data.count();
    const int h = static_cast<int>(data.height());
    const int w = static_cast<int>(data.width());
    std::vector<Heatmap> maps;
    maps.reserve(static_cast<std::size_t>(n));
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t len = std::min<std::int64_t>(batch_size, n - start);
        LaxForwardResult r = lax_forward(classifier, adapter, image_slice(data.images, start, len));
        const float* pm = r.mask.data().data();
        for (std::int64_t i = 0; i < len; ++i) {
            Heatmap m;
            m.h = h;
            m.w = w;
            m.source_h = adapter.feature_size();
            m.source_w = adapter.feature_size();
            m.method = "lax";
            m.sample_id = start + i;
            m.values.assign(pm + i * h * w, pm + (i + 1) * h * w);
            maps.push_back(std::move(m));
        }
    }
    return maps;
}

Heatmap occlusion_explain(const Classifier& classifier, const Tensor& image,
                          const OcclusionConfig& cfg) {
    const Shape& s = image.shape();
    if (s.size() != 4 || s[0] != 1) throw DimensionError("occlusion expects a single [1,1,H,W] image");
    const int h = static_cast<int>(s[2]);
    const int w = static_cast<int>(s[3]);
    if (cfg.patch <= 0 || cfg.patch > std::min(h, w)) {
        throw ConfigError("occlusion patch must be in [1, image side]");
    }
    if (cfg.stride <= 0 || cfg.stride > cfg.patch) {
        throw ConfigError("occlusion stride must be in [1, patch] so every pixel is covered");
    }

    Prediction full = classifier.predict(image);
    const int target = full.argmax[0];
    const float p_full = full.probs.data()[static_cast<std::size_t>(target)];

    auto positions = [](int side, int patch, int stride) {
        std::vector<int> pos;
        for (int p = 0; p + patch <= side; p += stride) pos.push_back(p);
        if (pos.empty() || pos.back() != side - patch) pos.push_back(side - patch);
        return pos;
    };
    const std::vector<int> ys = positions(h, cfg.patch, cfg.stride);
    const std::vector<int> xs = positions(w, cfg.patch, cfg.stride);
    const std::int64_t windows = static_cast<std::int64_t>(ys.size()) * xs.size();

    std::vector<float> batch(static_cast<std::size_t>(windows) * h * w);
    const float* src = image.data().data();
    std::int64_t wi = 0;
    for (int y0 : ys) {
        for (int x0 : xs) {
            float* dst = batch.data() + wi * h * w;
            std::copy(src, src + h * w, dst);
            for (int y = y0; y < y0 + cfg.patch; ++y)
                for (int x = x0; x < x0 + cfg.patch; ++x) dst[y * w + x] = cfg.baseline;
            ++wi;
        }
    }
    Prediction occ = classifier.predict(
        Tensor::from_data({windows, 1, h, w}, std::move(batch)));
    const std::int64_t classes = occ.probs.shape()[1];
    const float* probs = occ.probs.data().data();

    std::vector<double> drop_sum(static_cast<std::size_t>(h) * w, 0.0);
    std::vector<int> cover(static_cast<std::size_t>(h) * w, 0);
    wi = 0;
    for (int y0 : ys) {
        for (int x0 : xs) {
            const double drop = static_cast<double>(p_full) - probs[wi * classes + target];
            for (int y = y0; y < y0 + cfg.patch; ++y)
                for (int x = x0; x < x0 + cfg.patch; ++x) {
                    drop_sum[static_cast<std::size_t>(y) * w + x] += drop;
                    cover[static_cast<std::size_t>(y) * w + x] += 1;
                }
            ++wi;
        }
    }

    Heatmap m;
    m.h = h;
    m.w = w;
    m.source_h = h;
    m.source_w = w;
    m.method = "occlusion";
    m.values.resize(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        m.values[i] = static_cast<float>(drop_sum[i] / std::max(1, cover[i]));
    }
    minmax_normalize(m.values);
    return m;
}

Heatmap rise_explain(const Classifier& classifier, const Tensor& image, const RiseConfig& cfg) {
    const Shape& s = image.shape();
    if (s.size() != 4 || s[0] != 1) throw DimensionError("rise expects a single [1,1,H,W] image");
    if (cfg.n_masks <= 0) throw ConfigError("rise n_masks must be positive");
    if (cfg.grid < 2) throw ConfigError("rise grid must be at least 2");
    if (!(cfg.keep_prob > 0.0f && cfg.keep_prob < 1.0f)) {
        throw ConfigError("rise keep_prob must be in (0,1)");
    }
    const int h = static_cast<int>(s[2]);
    const int w = static_cast<int>(s[3]);
    const int cell = (std::max(h, w) + cfg.grid - 1) / cfg.grid;
    const int up_h = (cfg.grid + 1) * cell;
    const int up_w = (cfg.grid + 1) * cell;

    Prediction full = classifier.predict(image);
    const int target = full.argmax[0];

    Rng rng = Rng(cfg.seed).split(0x415E);
    const float* src = image.data().data();
    std::vector<double> weighted(static_cast<std::size_t>(h) * w, 0.0);

    const int chunk = 64;
    std::vector<std::vector<float>> masks;
    masks.reserve(static_cast<std::size_t>(chunk));
    auto flush = [&](const std::vector<std::vector<float>>& ms) {
        if (ms.empty()) return;
        const std::int64_t len = static_cast<std::int64_t>(ms.size());
        std::vector<float> batch(static_cast<std::size_t>(len) * h * w);
        for (std::int64_t i = 0; i < len; ++i) {
            float* dst = batch.data() + i * h * w;
            const float* mk = ms[static_cast<std::size_t>(i)].data();
            for (int px = 0; px < h * w; ++px) dst[px] = src[px] * mk[px];
        }
        Prediction p = classifier.predict(Tensor::from_data({len, 1, h, w}, std::move(batch)));
        const std::int64_t classes = p.probs.shape()[1];
        const float* probs = p.probs.data().data();
        for (std::int64_t i = 0; i < len; ++i) {
            const double score = probs[i * classes + target];
            const float* mk = ms[static_cast<std::size_t>(i)].data();
            for (int px = 0; px < h * w; ++px) weighted[static_cast<std::size_t>(px)] += score * mk[px];
        }
    };

    for (int mi = 0; mi < cfg.n_masks; ++mi) {
        std::vector<float> grid(static_cast<std::size_t>(cfg.grid) * cfg.grid);
        for (auto& g : grid) g = rng.next_float() < cfg.keep_prob ? 1.0f : 0.0f;
        Tensor up = upsample_bilinear(
            Tensor::from_data({1, 1, cfg.grid, cfg.grid}, std::move(grid)), up_h, up_w);
        const int dy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cell)));
        const int dx = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cell)));
        std::vector<float> mask(static_cast<std::size_t>(h) * w);
        const float* pu = up.data().data();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                mask[static_cast<std::size_t>(y) * w + x] = pu[(y + dy) * up_w + (x + dx)];
        masks.push_back(std::move(mask));
        if (static_cast<int>(masks.size()) == chunk) {
            flush(masks);
            masks.clear();
        }
    }
    flush(masks);

    Heatmap m;
    m.h = h;
    m.w = w;
    m.source_h = cfg.grid;
    m.source_w = cfg.grid;
    m.method = "rise";
    m.values.resize(static_cast<std::size_t>(h) * w);
    const double norm = 1.0 / (static_cast<double>(cfg.n_masks) * cfg.keep_prob);
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        m.values[i] = static_cast<float>(weighted[i] * norm);
    }
    minmax_normalize(m.values);
    return m;
}

Heatmap random_explain(int h, int w, std::uint64_t seed) {
    Rng rng = Rng(seed).split(0xD1CE);
    Heatmap m;
    m.h = h;
    m.w = w;
    m.source_h = h;
    m.source_w = w;
    m.method = "random";
    m.values.resize(static_cast<std::size_t>(h) * w);
    for (auto& v : m.values) v = rng.next_float();
    return m;
}

}  // namespace msi
