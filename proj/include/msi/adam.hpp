#pragma once

#include <vector>

#include "msi/tensor.hpp"

namespace msi {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
};

// Adam with bias correction over a fixed parameter list. Moment buffers
// are kept per parameter slot; step() applies the update and zeroes the
// gradients. Parameters without a populated gradient are a usage error.
class Adam {
  public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    void step();
    int step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    AdamConfig cfg_;
    int step_ = 0;
};

}  // namespace msi
