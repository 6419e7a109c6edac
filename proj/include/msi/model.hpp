#pragma once

#include <string>
#include <vector>

#include "msi/datagen.hpp"
#include "msi/tensor.hpp"

namespace msi {

struct ClassifierArch {
    int input_size = 32;
    int classes = 10;
    std::vector<int> channels{16, 32, 64};  // one conv block (3x3, pad 1, 2x downsample) each

    int feature_channels() const { return channels.back(); }
    int feature_size() const { return input_size >> static_cast<int>(channels.size()); }
};

struct Prediction {
    Tensor logits;  // [N,classes]
    Tensor probs;   // softmax rows
    std::vector<int> argmax;
};

// f = f_MLP . f_feat: conv feature extractor plus linear head. Frozen
// models refuse gradient participation; freezing is required before any
// explanation training.
class Classifier {
  public:
    Classifier() = default;
    static Classifier init(const ClassifierArch& arch, Rng& rng);

    Tensor features(const Tensor& images) const;  // [N,C_f,h,w]
    Tensor head(const Tensor& features) const;    // logits
    Tensor forward(const Tensor& images) const;
    Prediction predict(const Tensor& images) const;

    void freeze();
    bool frozen() const { return frozen_; }
    const ClassifierArch& arch() const { return arch_; }

    std::vector<Tensor> parameters();
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::uint64_t parameter_hash() const;

    void save(const std::string& path, const std::string& config_echo = "") const;
    static Classifier load(const std::string& path);

  private:
    ClassifierArch arch_;
    std::vector<Tensor> conv_w_;
    std::vector<Tensor> conv_b_;  // stored as [1,C,1,1] for broadcast
    Tensor fc_w_;
    Tensor fc_b_;
    bool frozen_ = false;
};

struct TrainConfig {
    float lr = 1e-3f;
    int epochs = 30;
    int batch_size = 64;
    std::uint64_t seed = 0;
    float weight_decay = 0.0f;
};

struct TrainStats {
    std::vector<float> epoch_loss;
    float train_accuracy = 0.0f;
    float test_accuracy = -1.0f;  // -1 when no test set was given
};

Classifier train_classifier(const LabeledImageBatch& train, const TrainConfig& config,
                            const LabeledImageBatch* test = nullptr,
                            TrainStats* stats = nullptr);

float accuracy(const Classifier& model, const LabeledImageBatch& batch, int batch_size = 256);

}  // namespace msi
