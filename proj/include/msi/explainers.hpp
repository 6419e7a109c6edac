#pragma once

#include <string>
#include <vector>

#include "msi/datagen.hpp"
#include "msi/model.hpp"
#include "msi/tensor.hpp"

namespace msi {

// Per-sample relevance grid in [0,1] at input resolution.
struct Heatmap {
    std::vector<float> values;  // H*W row-major
    int h = 0;
    int w = 0;
    int source_h = 0;  // pre-upsample grid, equals h/w for native-res methods
    int source_w = 0;
    std::string method;
    std::int64_t sample_id = -1;
};

struct LaxConfig {
    float lambda_entropy = 5.0f;
    float temperature = 0.5f;
    float epsilon = 1e-8f;
    float lr = 1e-3f;
    int epochs = 60;
    int batch_size = 64;
    std::uint64_t seed = 0;
};

// Learnable explanation head over the frozen classifier's features:
// 3x3 conv stack halving channels down to a single logit map, sigmoid,
// then bilinear upsampling to input resolution.
class LaxAdapter {
  public:
    LaxAdapter() = default;
    static LaxAdapter init(int feature_channels, int feature_size, std::uint64_t seed);

    // Low-resolution sigmoid mask [N,1,h,w].
    Tensor mask_low(const Tensor& features) const;
    // Pre-sigmoid logits, exposed for tests.
    Tensor logits(const Tensor& features) const;

    std::vector<Tensor> parameters();
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    int feature_channels() const { return feature_channels_; }
    int feature_size() const { return feature_size_; }

    void save(const std::string& path, const std::string& config_echo = "") const;
    static LaxAdapter load(const std::string& path);

  private:
    std::vector<Tensor> conv_w_;
    std::vector<Tensor> conv_b_;
    int feature_channels_ = 0;
    int feature_size_ = 0;
};

struct LaxForwardResult {
    Tensor orig_logits;    // f_MLP(F)
    Tensor mask_low;       // [N,1,h,w] sigmoid mask
    Tensor mask;           // [N,1,H,W] upsampled heatmap
    Tensor masked_input;   // T = X . M
    Tensor masked_logits;  // f(T)
};

// Full forward pass of the explanation framework; classifier must be
// frozen. Gradients reach adapter parameters only.
LaxForwardResult lax_forward(const Classifier& classifier, const LaxAdapter& adapter,
                             const Tensor& images);

// Batch-mean entropy of the temperature softmax over each flattened
// rectified mask. Applied to the low-resolution mask.
Tensor entropy_loss(const Tensor& masks, float temperature, float epsilon);

Tensor lax_loss(const std::vector<int>& labels, const Tensor& masked_logits,
                const Tensor& mask_low, const LaxConfig& cfg);

struct LaxTrainStats {
    std::vector<float> epoch_loss;
    std::vector<float> epoch_masked_accuracy;
    std::vector<float> epoch_mean_mask;
};

LaxAdapter train_lax(const Classifier& classifier, const LabeledImageBatch& data,
                     const LaxConfig& cfg, LaxTrainStats* stats = nullptr);

// --- heatmap producers -------------------------------------------------

std::vector<Heatmap> lax_explain(const Classifier& classifier, const LaxAdapter& adapter,
                                 const LabeledImageBatch& data, int batch_size = 256);

struct OcclusionConfig {
    int patch = 12;
    int stride = 6;
    float baseline = 0.0f;
};

Heatmap occlusion_explain(const Classifier& classifier, const Tensor& image,
                          const OcclusionConfig& cfg);

struct RiseConfig {
    int n_masks = 100;
    int grid = 7;
    float keep_prob = 0.3f;
    std::uint64_t seed = 0;
};

Heatmap rise_explain(const Classifier& classifier, const Tensor& image, const RiseConfig& cfg);

Heatmap random_explain(int h, int w, std::uint64_t seed);

}  // namespace msi
