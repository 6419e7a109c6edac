#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "msi/rng.hpp"

namespace msi {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct Node;
}

// Dense row-major float tensor participating in a per-forward-pass
// autodiff graph. Values are written once by the producing op; the
// optimizer mutates leaf parameters between passes. backward(loss)
// consumes the recorded graph and drops it.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor uniform(const Shape& shape, Rng& rng, float lo, float hi,
                          bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::int64_t size() const;
    const std::vector<float>& data() const;
    std::vector<float>& mutable_data();
    bool requires_grad() const;
    void set_requires_grad(bool rg);
    bool has_grad() const;
    const std::vector<float>& grad() const;
    void zero_grad();

    float item() const;  // scalar tensors only

    bool all_finite() const;

    detail::Node* node() const { return node_.get(); }
    std::shared_ptr<detail::Node> node_ptr() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> n);

  private:
    std::shared_ptr<detail::Node> node_;
};

// --- ops ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// input [N,C,H,W], kernel [K,C,kh,kw]; zero padding, cross-correlation.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

// x [N,K], w [C,K], b [C] -> [N,C]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log_t(const Tensor& x);
Tensor max_scalar(const Tensor& x, float c);
Tensor add_scalar(const Tensor& x, float c);
Tensor scale(const Tensor& x, float a);

// Elementwise with broadcasting limited to size-1 dimensions; operands
// must have equal rank (<= 4).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

Tensor sum(const Tensor& x);  // scalar
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor avgpool2x2(const Tensor& x);
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);

void backward(const Tensor& loss);

namespace detail {

struct Node {
    Shape shape;
    std::int64_t size = 0;
    std::vector<float> data;
    std::vector<float> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad();
};

}  // namespace detail

}  // namespace msi
