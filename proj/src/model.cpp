#include "msi/model.hpp"

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

}  // namespace

Classifier Classifier::init(const ClassifierArch& arch, Rng& rng) {
    if (arch.channels.empty()) throw ConfigError("classifier needs at least one conv block");
    if (arch.input_size % (1 << arch.channels.size()) != 0) {
        throw ConfigError("input size must be divisible by 2^blocks");
    }
    if (arch.feature_size() < 4) {
        throw ConfigError("feature map would be smaller than 4x4");
    }
    Classifier m;
    m.arch_ = arch;
    int c_in = 1;
    for (std::size_t i = 0; i < arch.channels.size(); ++i) {
        const int c_out = arch.channels[i];
        m.conv_w_.push_back(fan_in_uniform({c_out, c_in, 3, 3}, static_cast<std::int64_t>(c_in) * 9, rng));
        m.conv_b_.push_back(fan_in_uniform({1, c_out, 1, 1}, static_cast<std::int64_t>(c_in) * 9, rng));
        c_in = c_out;
    }
    const std::int64_t feat = static_cast<std::int64_t>(arch.feature_channels()) *
                              arch.feature_size() * arch.feature_size();
    m.fc_w_ = fan_in_uniform({arch.classes, feat}, feat, rng);
    m.fc_b_ = fan_in_uniform({arch.classes}, feat, rng);
    return m;
}

Tensor Classifier::features(const Tensor& images) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != arch_.input_size || s[3] != arch_.input_size) {
        throw DimensionError("classifier expects [N,1," + std::to_string(arch_.input_size) +
                             "," + std::to_string(arch_.input_size) + "] input, got " +
                             shape_str(s));
    }
    Tensor x = images;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        x = conv2d(x, conv_w_[i], 1, 1);
        x = add(x, conv_b_[i]);
        x = relu(x);
        x = avgpool2x2(x);
    }
    return x;
}

Tensor Classifier::head(const Tensor& feats) const {
    const std::int64_t n = feats.shape()[0];
    Tensor flat = reshape(feats, {n, fc_w_.shape()[1]});
    return linear(flat, fc_w_, fc_b_);
}

Tensor Classifier::forward(const Tensor& images) const { return head(features(images)); }

Prediction Classifier::predict(const Tensor& images) const {
    Prediction p;
    p.logits = forward(images);
    p.probs = softmax(p.logits, 1);
    const std::int64_t n = p.logits.shape()[0];
    const std::int64_t c = p.logits.shape()[1];
    p.argmax.resize(static_cast<std::size_t>(n));
    const float* d = p.logits.data().data();
    for (std::int64_t i = 0; i < n; ++i) {
        const float* row = d + i * c;
        p.argmax[static_cast<std::size_t>(i)] =
            static_cast<int>(std::max_element(row, row + c) - row);
    }
    return p;
}

void Classifier::freeze() {
    frozen_ = true;
    for (auto& t : conv_w_) t.set_requires_grad(false);
    for (auto& t : conv_b_) t.set_requires_grad(false);
    fc_w_.set_requires_grad(false);
    fc_b_.set_requires_grad(false);
}

std::vector<Tensor> Classifier::parameters() {
    std::vector<Tensor> out;
    for (auto& t : conv_w_) out.push_back(t);
    for (auto& t : conv_b_) out.push_back(t);
    out.push_back(fc_w_);
    out.push_back(fc_b_);
    return out;
}

std::vector<std::pair<std::string, Tensor>> Classifier::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        out.emplace_back("conv" + std::to_string(i) + ".w", conv_w_[i]);
        out.emplace_back("conv" + std::to_string(i) + ".b", conv_b_[i]);
    }
    out.emplace_back("fc.w", fc_w_);
    out.emplace_back("fc.b", fc_b_);
    return out;
}

std::uint64_t Classifier::parameter_hash() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& [name, t] : named_parameters()) {
        h ^= io::fnv1a_hash(t.data().data(), t.data().size() * sizeof(float));
        h *= 0x100000001B3ull;
    }
    return h;
}

void Classifier::save(const std::string& path, const std::string& config_echo) const {
    io::WeightsFile file;
    file.manifest["architecture"] = {{"type", "conv_classifier"},
                                     {"input_size", arch_.input_size},
                                     {"classes", arch_.classes},
                                     {"channels", arch_.channels}};
    file.manifest["frozen"] = frozen_;
    file.manifest["config"] = config_echo;
    file.tensors = named_parameters();
    io::save_weights(path, file);
}

Classifier Classifier::load(const std::string& path) {
    io::WeightsFile file = io::load_weights(path);
    if (!file.manifest.contains("architecture")) {
        throw FormatError(path + ": manifest missing architecture descriptor");
    }
    const auto& a = file.manifest["architecture"];
    if (a.value("type", "") != "conv_classifier") {
        throw FormatError(path + ": not a classifier weights file");
    }
    ClassifierArch arch;
    arch.input_size = a.at("input_size").get<int>();
    arch.classes = a.at("classes").get<int>();
    arch.channels = a.at("channels").get<std::vector<int>>();

    Classifier m;
    m.arch_ = arch;
    auto find = [&](const std::string& name) -> Tensor {
        for (auto& [n, t] : file.tensors) {
            if (n == name) return t;
        }
        throw FormatError(path + ": manifest lists no tensor named '" + name + "'");
    };
    int c_in = 1;
    for (std::size_t i = 0; i < arch.channels.size(); ++i) {
        Tensor w = find("conv" + std::to_string(i) + ".w");
        Tensor b = find("conv" + std::to_string(i) + ".b");
        const Shape want_w{arch.channels[i], c_in, 3, 3};
        const Shape want_b{1, arch.channels[i], 1, 1};
        if (w.shape() != want_w || b.shape() != want_b) {
            throw FormatError(path + ": conv" + std::to_string(i) + " shape mismatch");
        }
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        m.conv_w_.push_back(w);
        m.conv_b_.push_back(b);
        c_in = arch.channels[i];
    }
    m.fc_w_ = find("fc.w");
    m.fc_b_ = find("fc.b");
    const std::int64_t feat = static_cast<std::int64_t>(arch.feature_channels()) *
                              arch.feature_size() * arch.feature_size();
    if (m.fc_w_.shape() != Shape{arch.classes, feat} || m.fc_b_.shape() != Shape{arch.classes}) {
        throw FormatError(path + ": head shape mismatch");
    }
    m.fc_w_.set_requires_grad(true);
    m.fc_b_.set_requires_grad(true);
    if (file.manifest.value("frozen", false)) m.freeze();
    return m;
}

float accuracy(const Classifier& model, const LabeledImageBatch& batch, int batch_size) {
    const std::int64_t n = batch.count();
    const std::int64_t hw = batch.height() * batch.width();
    const float* pixels = batch.images.data().data();
    std::int64_t correct = 0;
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t len = std::min<std::int64_t>(batch_size, n - start);
        std::vector<float> chunk(pixels + start * hw, pixels + (start + len) * hw);
        Tensor images = Tensor::from_data({len, 1, batch.height(), batch.width()},
                                          std::move(chunk));
        Prediction p = model.predict(images);
        for (std::int64_t i = 0; i < len; ++i) {
            if (p.argmax[static_cast<std::size_t>(i)] ==
                batch.labels[static_cast<std::size_t>(start + i)])
                ++correct;
        }
    }
    return static_cast<float>(correct) / static_cast<float>(n);
}

Classifier train_classifier(const LabeledImageBatch& train, const TrainConfig& config,
                            const LabeledImageBatch* test, TrainStats* stats) {
    if (train.count() == 0) throw DataError("training set is empty");
    if (config.lr <= 0.0f || config.epochs < 0 || config.batch_size <= 0) {
        throw ConfigError("train config values must be positive");
    }
    ClassifierArch arch;
    arch.input_size = static_cast<int>(train.height());
    arch.classes = train.num_classes;
    Rng rng = Rng(config.seed).split(0xBA5E);
    Classifier model = Classifier::init(arch, rng);

    AdamConfig acfg;
    acfg.lr = config.lr;
    acfg.weight_decay = config.weight_decay;
    Adam opt(model.parameters(), acfg);

    const std::int64_t n = train.count();
    const std::int64_t hw = train.height() * train.width();
    const float* pixels = train.images.data().data();
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    if (stats) stats->epoch_loss.clear();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng = rng.split(static_cast<std::uint64_t>(epoch) + 1);
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);
        }
        double epoch_loss = 0.0;
        std::int64_t steps = 0;
        for (std::int64_t start = 0; start < n; start += config.batch_size) {
            const std::int64_t len = std::min<std::int64_t>(config.batch_size, n - start);
            std::vector<float> chunk(static_cast<std::size_t>(len * hw));
            std::vector<int> labels(static_cast<std::size_t>(len));
            for (std::int64_t i = 0; i < len; ++i) {
                const std::int64_t s = order[static_cast<std::size_t>(start + i)];
                std::copy(pixels + s * hw, pixels + (s + 1) * hw, chunk.begin() + i * hw);
                labels[static_cast<std::size_t>(i)] = train.labels[static_cast<std::size_t>(s)];
            }
            Tensor images = Tensor::from_data({len, 1, train.height(), train.width()},
                                              std::move(chunk));
            Tensor loss = cross_entropy(model.forward(images), labels);
            if (!std::isfinite(loss.item())) {
                throw TrainingError("loss diverged at epoch " + std::to_string(epoch) +
                                    ", step " + std::to_string(steps));
            }
            backward(loss);
            opt.step();
            epoch_loss += loss.item();
            ++steps;
        }
        if (stats) stats->epoch_loss.push_back(static_cast<float>(epoch_loss / std::max<std::int64_t>(1, steps)));
    }

    if (stats) {
        stats->train_accuracy = accuracy(model, train);
        if (test) stats->test_accuracy = accuracy(model, *test);
    }
    return model;
}

}  // namespace msi
