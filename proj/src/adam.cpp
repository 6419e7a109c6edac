#include "msi/adam.hpp"

#include <cmath>

#include "msi/errors.hpp"

namespace msi {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<std::size_t>(p.size()), 0.0f);
        v_.emplace_back(static_cast<std::size_t>(p.size()), 0.0f);
    }
}

void Adam::step() {
    ++step_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        if (!p.has_grad()) {
            throw UsageError("adam step with missing gradient on parameter " +
                             std::to_string(pi));
        }
        const std::vector<float>& g = p.grad();
        std::vector<float>& w = p.mutable_data();
        std::vector<float>& m = m_[pi];
        std::vector<float>& v = v_[pi];
        for (std::size_t i = 0; i < w.size(); ++i) {
            float gi = g[i] + cfg_.weight_decay * w[i];
            m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * gi * gi;
            const float mhat = m[i] / bc1;
            const float vhat = v[i] / bc2;
            w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        p.zero_grad();
    }
}

}  // namespace msi
