#include "msi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "msi/errors.hpp"
#include "msi/kernels.hpp"

namespace msi {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_leaf(const Shape& shape, std::vector<float> data, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->size = shape_size(shape);
    if (static_cast<std::int64_t>(data.size()) != n->size) {
        throw DimensionError("tensor data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return n;
}

NodePtr make_result(const Shape& shape, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->size = shape_size(shape);
    n->data.assign(static_cast<std::size_t>(n->size), 0.0f);
    for (const auto& p : parents) {
        if (p->requires_grad) n->requires_grad = true;
    }
    if (n->requires_grad) n->parents = std::move(parents);
    return n;
}

// Sigmoid kept strictly inside (0,1): float rounding would otherwise
// saturate for |x| beyond ~17.
float stable_sigmoid(float x) {
    float v;
    if (x >= 0.0f) {
        v = 1.0f / (1.0f + std::exp(-x));
    } else {
        float e = std::exp(x);
        v = e / (1.0f + e);
    }
    return std::min(std::max(v, 1e-12f), 1.0f - 6e-8f);
}

struct BroadcastPlan {
    Shape out;
    std::int64_t dims[4];
    std::int64_t sa[4];  // strides with 0 on broadcast dims
    std::int64_t sb[4];
};

BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
    if (a.size() != b.size() || a.empty() || a.size() > 4) {
        throw DimensionError("broadcast requires equal ranks 1..4, got " +
                             shape_str(a) + " vs " + shape_str(b));
    }
    Shape pa(4, 1), pb(4, 1);
    std::copy(a.begin(), a.end(), pa.begin() + (4 - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + (4 - b.size()));
    BroadcastPlan plan;
    Shape out4(4, 1);
    for (int d = 0; d < 4; ++d) {
        if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
            throw DimensionError("shapes not broadcastable: " + shape_str(a) +
                                 " vs " + shape_str(b));
        }
        out4[d] = std::max(pa[d], pb[d]);
        plan.dims[d] = out4[d];
    }
    std::int64_t stra = 1, strb = 1;
    for (int d = 3; d >= 0; --d) {
        plan.sa[d] = (pa[d] == 1) ? 0 : stra;
        plan.sb[d] = (pb[d] == 1) ? 0 : strb;
        stra *= pa[d];
        strb *= pb[d];
    }
    plan.out.assign(out4.begin() + (4 - a.size()), out4.end());
    return plan;
}

template <typename F>
void broadcast_apply(const BroadcastPlan& p, F&& f) {
    for (std::int64_t i0 = 0; i0 < p.dims[0]; ++i0)
        for (std::int64_t i1 = 0; i1 < p.dims[1]; ++i1)
            for (std::int64_t i2 = 0; i2 < p.dims[2]; ++i2) {
                std::int64_t ia = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2];
                std::int64_t ib = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2];
                for (std::int64_t i3 = 0; i3 < p.dims[3]; ++i3) {
                    f(ia + i3 * p.sa[3], ib + i3 * p.sb[3]);
                }
            }
}

// Axis normalization and [outer, axis, inner] factorization.
struct AxisPlan {
    std::int64_t outer, len, inner;
};

AxisPlan axis_plan(const Shape& s, int axis) {
    int rank = static_cast<int>(s.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw DimensionError("axis out of range for shape " + shape_str(s));
    }
    AxisPlan p{1, s[axis], 1};
    for (int d = 0; d < axis; ++d) p.outer *= s[d];
    for (int d = axis + 1; d < rank; ++d) p.inner *= s[d];
    return p;
}

}  // namespace

namespace detail {
void Node::ensure_grad() {
    if (grad.empty()) grad.assign(static_cast<std::size_t>(size), 0.0f);
}
}  // namespace detail

std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// --- Tensor ------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return wrap(make_leaf(shape,
                          std::vector<float>(static_cast<std::size_t>(shape_size(shape)), 0.0f),
                          requires_grad));
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
    return wrap(make_leaf(shape,
                          std::vector<float>(static_cast<std::size_t>(shape_size(shape)), value),
                          requires_grad));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> data, bool requires_grad) {
    return wrap(make_leaf(shape, std::move(data), requires_grad));
}

Tensor Tensor::uniform(const Shape& shape, Rng& rng, float lo, float hi, bool requires_grad) {
    std::vector<float> data(static_cast<std::size_t>(shape_size(shape)));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return wrap(make_leaf(shape, std::move(data), requires_grad));
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::int64_t Tensor::size() const { return node_->size; }
const std::vector<float>& Tensor::data() const { return node_->data; }
std::vector<float>& Tensor::mutable_data() { return node_->data; }
bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    if (!rg) node_->grad.clear();
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<float>& Tensor::grad() const {
    if (node_->grad.empty()) throw UsageError("tensor has no gradient");
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

float Tensor::item() const {
    if (node_->size != 1) {
        throw UsageError("item() on non-scalar tensor of shape " + shape_str(node_->shape));
    }
    return node_->data[0];
}

bool Tensor::all_finite() const {
    for (float v : node_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// --- basic ops ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        throw DimensionError("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
    }
    const std::int64_t m = sa[0], k = sa[1], n = sb[1];
    auto out = make_result({m, n}, {a.node_ptr(), b.node_ptr()});
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out->data.data();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t kk = 0; kk < k; ++kk) {
            kernels::axpy(static_cast<std::size_t>(n), pa[i * k + kk], pb + kk * n, po + i * n);
        }
    }
    if (out->requires_grad) {
        auto an = a.node_ptr();
        auto bn = b.node_ptr();
        out->backward_fn = [an, bn, m, k, n](Node& self) {
            const float* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA[i,k] = dot(g[i,:], B[k,:])
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t kk = 0; kk < k; ++kk)
                        an->grad[i * k + kk] += kernels::dot(
                            static_cast<std::size_t>(n), g + i * n, bn->data.data() + kk * n);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB[k,:] += A[i,k] * g[i,:]
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t kk = 0; kk < k; ++kk)
                        kernels::axpy(static_cast<std::size_t>(n), an->data[i * k + kk],
                                      g + i * n, bn->grad.data() + kk * n);
            }
        };
    }
    return Tensor::wrap(out);
}

namespace {

// im2col: [C*kh*kw, OH*OW] for one sample.
void im2col(const float* img, std::int64_t c_in, std::int64_t h, std::int64_t w,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
            std::int64_t oh, std::int64_t ow, float* cols) {
    const std::int64_t span = oh * ow;
    for (std::int64_t c = 0; c < c_in; ++c) {
        for (std::int64_t ki = 0; ki < kh; ++ki) {
            for (std::int64_t kj = 0; kj < kw; ++kj) {
                float* row = cols + ((c * kh + ki) * kw + kj) * span;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) {
                        std::memset(row + oy * ow, 0, static_cast<std::size_t>(ow) * sizeof(float));
                        continue;
                    }
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kj;
                        row[oy * ow + ox] =
                            (ix < 0 || ix >= w) ? 0.0f : img[(c * h + iy) * w + ix];
                    }
                }
            }
        }
    }
}

void col2im_acc(const float* cols, std::int64_t c_in, std::int64_t h, std::int64_t w,
                std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                std::int64_t oh, std::int64_t ow, float* img_grad) {
    const std::int64_t span = oh * ow;
    for (std::int64_t c = 0; c < c_in; ++c) {
        for (std::int64_t ki = 0; ki < kh; ++ki) {
            for (std::int64_t kj = 0; kj < kw; ++kj) {
                const float* row = cols + ((c * kh + ki) * kw + kj) * span;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kj;
                        if (ix < 0 || ix >= w) continue;
                        img_grad[(c * h + iy) * w + ix] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    const Shape& si = input.shape();
    const Shape& sk = kernel.shape();
    if (si.size() != 4 || sk.size() != 4) {
        throw DimensionError("conv2d expects 4-D input and kernel, got " + shape_str(si) +
                             " and " + shape_str(sk));
    }
    if (stride <= 0) throw ConfigError("conv2d stride must be positive");
    if (padding < 0) throw ConfigError("conv2d padding must be non-negative");
    const std::int64_t n = si[0], c_in = si[1], h = si[2], w = si[3];
    const std::int64_t k_out = sk[0], kh = sk[2], kw = sk[3];
    if (sk[1] != c_in) {
        throw DimensionError("conv2d channel mismatch: input " + shape_str(si) +
                             ", kernel " + shape_str(sk));
    }
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw DimensionError("conv2d kernel larger than padded input");
    }
    const std::int64_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::int64_t ow = (w + 2 * padding - kw) / stride + 1;
    const std::int64_t ckk = c_in * kh * kw;
    const std::int64_t span = oh * ow;

    auto out = make_result({n, k_out, oh, ow}, {input.node_ptr(), kernel.node_ptr()});
    auto cols = std::make_shared<std::vector<float>>(
        static_cast<std::size_t>(n * ckk * span));
    const float* pin = input.data().data();
    const float* pk = kernel.data().data();
    float* po = out->data.data();
    for (std::int64_t s = 0; s < n; ++s) {
        float* cs = cols->data() + s * ckk * span;
        im2col(pin + s * c_in * h * w, c_in, h, w, kh, kw, stride, padding, oh, ow, cs);
        float* os = po + s * k_out * span;
        for (std::int64_t k = 0; k < k_out; ++k) {
            for (std::int64_t q = 0; q < ckk; ++q) {
                kernels::axpy(static_cast<std::size_t>(span), pk[k * ckk + q],
                              cs + q * span, os + k * span);
            }
        }
    }

    if (out->requires_grad) {
        auto in_node = input.node_ptr();
        auto k_node = kernel.node_ptr();
        const std::int64_t st = stride, pd = padding;
        out->backward_fn = [in_node, k_node, cols, n, c_in, h, w, k_out, kh, kw, st, pd,
                            oh, ow, ckk, span](Node& self) {
            const float* g = self.grad.data();
            if (k_node->requires_grad) {
                k_node->ensure_grad();
                for (std::int64_t s = 0; s < n; ++s) {
                    const float* cs = cols->data() + s * ckk * span;
                    const float* gs = g + s * k_out * span;
                    for (std::int64_t k = 0; k < k_out; ++k)
                        for (std::int64_t q = 0; q < ckk; ++q)
                            k_node->grad[k * ckk + q] += kernels::dot(
                                static_cast<std::size_t>(span), gs + k * span, cs + q * span);
                }
            }
            if (in_node->requires_grad) {
                in_node->ensure_grad();
                std::vector<float> dcols(static_cast<std::size_t>(ckk * span));
                for (std::int64_t s = 0; s < n; ++s) {
                    std::fill(dcols.begin(), dcols.end(), 0.0f);
                    const float* gs = g + s * k_out * span;
                    for (std::int64_t k = 0; k < k_out; ++k)
                        for (std::int64_t q = 0; q < ckk; ++q)
                            kernels::axpy(static_cast<std::size_t>(span),
                                          k_node->data[k * ckk + q], gs + k * span,
                                          dcols.data() + q * span);
                    col2im_acc(dcols.data(), c_in, h, w, kh, kw, st, pd, oh, ow,
                               in_node->grad.data() + s * c_in * h * w);
                }
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    const Shape& sb = b.shape();
    if (sx.size() != 2 || sw.size() != 2 || sb.size() != 1 || sx[1] != sw[1] ||
        sb[0] != sw[0]) {
        throw DimensionError("linear shape mismatch: x " + shape_str(sx) + ", w " +
                             shape_str(sw) + ", b " + shape_str(sb));
    }
    const std::int64_t n = sx[0], k = sx[1], c = sw[0];
    auto out = make_result({n, c}, {x.node_ptr(), w.node_ptr(), b.node_ptr()});
    const float* px = x.data().data();
    const float* pw = w.data().data();
    const float* pb = b.data().data();
    float* po = out->data.data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
            po[i * c + j] =
                pb[j] + kernels::dot(static_cast<std::size_t>(k), px + i * k, pw + j * k);
        }
    }
    if (out->requires_grad) {
        auto xn = x.node_ptr();
        auto wn = w.node_ptr();
        auto bn = b.node_ptr();
        out->backward_fn = [xn, wn, bn, n, k, c](Node& self) {
            const float* g = self.grad.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < c; ++j)
                        kernels::axpy(static_cast<std::size_t>(k), g[i * c + j],
                                      wn->data.data() + j * k, xn->grad.data() + i * k);
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < c; ++j)
                        kernels::axpy(static_cast<std::size_t>(k), g[i * c + j],
                                      xn->data.data() + i * k, wn->grad.data() + j * k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < c; ++j) bn->grad[j] += g[i * c + j];
            }
        };
    }
    return Tensor::wrap(out);
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd) {
    auto out = make_result(x.shape(), {x.node_ptr()});
    fwd(x.data().data(), out->data.data(), static_cast<std::size_t>(out->size));
    if (out->requires_grad) {
        auto xn = x.node_ptr();
        auto on = out.get();
        out->backward_fn = [xn, bwd](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            bwd(xn->data.data(), self.data.data(), self.grad.data(), xn->grad.data(),
                static_cast<std::size_t>(self.size));
        };
        (void)on;
    }
    return Tensor::wrap(out);
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unary_op(
        x,
        [](const float* in, float* out, std::size_t n) { kernels::clamp_min(n, in, 0.0f, out); },
        [](const float* in, const float*, const float* g, float* gx, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i)
                if (in[i] > 0.0f) gx[i] += g[i];
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x,
        [](const float* in, float* out, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) out[i] = stable_sigmoid(in[i]);
        },
        [](const float*, const float* y, const float* g, float* gx, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0f - y[i]);
        });
}

Tensor log_t(const Tensor& x) {
    return unary_op(
        x,
        [](const float* in, float* out, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) out[i] = std::log(in[i]);
        },
        [](const float* in, const float*, const float* g, float* gx, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / in[i];
        });
}

Tensor max_scalar(const Tensor& x, float c) {
    return unary_op(
        x,
        [c](const float* in, float* out, std::size_t n) { kernels::clamp_min(n, in, c, out); },
        [c](const float* in, const float*, const float* g, float* gx, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i)
                if (in[i] > c) gx[i] += g[i];
        });
}

Tensor add_scalar(const Tensor& x, float c) {
    return unary_op(
        x,
        [c](const float* in, float* out, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) out[i] = in[i] + c;
        },
        [](const float*, const float*, const float* g, float* gx, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
        });
}

Tensor scale(const Tensor& x, float a) {
    return unary_op(
        x,
        [a](const float* in, float* out, std::size_t n) { kernels::scale(n, a, in, out); },
        [a](const float*, const float*, const float* g, float* gx, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) gx[i] += a * g[i];
        });
}

namespace {

enum class EwKind { add, mul };

Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind) {
    const bool same = a.shape() == b.shape();
    if (same) {
        auto out = make_result(a.shape(), {a.node_ptr(), b.node_ptr()});
        const std::size_t n = static_cast<std::size_t>(out->size);
        if (kind == EwKind::add) {
            kernels::add(n, a.data().data(), b.data().data(), out->data.data());
        } else {
            kernels::mul(n, a.data().data(), b.data().data(), out->data.data());
        }
        if (out->requires_grad) {
            auto an = a.node_ptr();
            auto bn = b.node_ptr();
            out->backward_fn = [an, bn, kind, n](Node& self) {
                const float* g = self.grad.data();
                if (an->requires_grad) {
                    an->ensure_grad();
                    if (kind == EwKind::add) {
                        kernels::axpy(n, 1.0f, g, an->grad.data());
                    } else {
                        for (std::size_t i = 0; i < n; ++i)
                            an->grad[i] += g[i] * bn->data[i];
                    }
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    if (kind == EwKind::add) {
                        kernels::axpy(n, 1.0f, g, bn->grad.data());
                    } else {
                        for (std::size_t i = 0; i < n; ++i)
                            bn->grad[i] += g[i] * an->data[i];
                    }
                }
            };
        }
        return Tensor::wrap(out);
    }

    BroadcastPlan plan = broadcast_plan(a.shape(), b.shape());
    auto out = make_result(plan.out, {a.node_ptr(), b.node_ptr()});
    float* po = out->data.data();
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    std::int64_t idx = 0;
    if (kind == EwKind::add) {
        broadcast_apply(plan, [&](std::int64_t ia, std::int64_t ib) {
            po[idx++] = pa[ia] + pb[ib];
        });
    } else {
        broadcast_apply(plan, [&](std::int64_t ia, std::int64_t ib) {
            po[idx++] = pa[ia] * pb[ib];
        });
    }
    if (out->requires_grad) {
        auto an = a.node_ptr();
        auto bn = b.node_ptr();
        out->backward_fn = [an, bn, plan, kind](Node& self) {
            const float* g = self.grad.data();
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            std::int64_t idx2 = 0;
            broadcast_apply(plan, [&](std::int64_t ia, std::int64_t ib) {
                const float gv = g[idx2++];
                if (kind == EwKind::add) {
                    if (an->requires_grad) an->grad[ia] += gv;
                    if (bn->requires_grad) bn->grad[ib] += gv;
                } else {
                    if (an->requires_grad) an->grad[ia] += gv * bn->data[ib];
                    if (bn->requires_grad) bn->grad[ib] += gv * an->data[ia];
                }
            });
        };
    }
    return Tensor::wrap(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::add); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::mul); }

Tensor softmax(const Tensor& x, int axis) {
    AxisPlan p = axis_plan(x.shape(), axis);
    auto out = make_result(x.shape(), {x.node_ptr()});
    const float* px = x.data().data();
    float* po = out->data.data();
    for (std::int64_t o = 0; o < p.outer; ++o) {
        for (std::int64_t in = 0; in < p.inner; ++in) {
            const std::int64_t base = o * p.len * p.inner + in;
            float mx = px[base];
            for (std::int64_t j = 1; j < p.len; ++j)
                mx = std::max(mx, px[base + j * p.inner]);
            double denom = 0.0;
            for (std::int64_t j = 0; j < p.len; ++j) {
                const float e = std::exp(px[base + j * p.inner] - mx);
                po[base + j * p.inner] = e;
                denom += e;
            }
            const float inv = static_cast<float>(1.0 / denom);
            for (std::int64_t j = 0; j < p.len; ++j) po[base + j * p.inner] *= inv;
        }
    }
    if (out->requires_grad) {
        auto xn = x.node_ptr();
        out->backward_fn = [xn, p](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const float* y = self.data.data();
            const float* g = self.grad.data();
            for (std::int64_t o = 0; o < p.outer; ++o) {
                for (std::int64_t in = 0; in < p.inner; ++in) {
                    const std::int64_t base = o * p.len * p.inner + in;
                    double dotv = 0.0;
                    for (std::int64_t j = 0; j < p.len; ++j)
                        dotv += static_cast<double>(g[base + j * p.inner]) *
                                y[base + j * p.inner];
                    for (std::int64_t j = 0; j < p.len; ++j) {
                        const std::int64_t ix = base + j * p.inner;
                        xn->grad[ix] += y[ix] * (g[ix] - static_cast<float>(dotv));
                    }
                }
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw DimensionError("cross_entropy expects [N,classes] logits");
    const std::int64_t n = s[0], c = s[1];
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw DataError("cross_entropy label count mismatch");
    }
    for (int l : labels) {
        if (l < 0 || l >= c) {
            throw DataError("cross_entropy label " + std::to_string(l) + " out of range [0," +
                            std::to_string(c) + ")");
        }
    }
    auto out = make_result({1}, {logits.node_ptr()});
    const float* px = logits.data().data();
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const float* row = px + i * c;
        float mx = row[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::int64_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
        total += mx + std::log(denom) - row[labels[static_cast<std::size_t>(i)]];
    }
    out->data[0] = static_cast<float>(total / static_cast<double>(n));
    if (out->requires_grad) {
        auto xn = logits.node_ptr();
        auto lbl = labels;
        out->backward_fn = [xn, lbl, n, c](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const float g = self.grad[0] / static_cast<float>(n);
            for (std::int64_t i = 0; i < n; ++i) {
                const float* row = xn->data.data() + i * c;
                float mx = row[0];
                for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (std::int64_t j = 0; j < c; ++j)
                    denom += std::exp(static_cast<double>(row[j] - mx));
                for (std::int64_t j = 0; j < c; ++j) {
                    float p = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / denom);
                    if (j == lbl[static_cast<std::size_t>(i)]) p -= 1.0f;
                    xn->grad[i * c + j] += g * p;
                }
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor sum(const Tensor& x) {
    auto out = make_result({1}, {x.node_ptr()});
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    out->data[0] = static_cast<float>(acc);
    if (out->requires_grad) {
        auto xn = x.node_ptr();
        out->backward_fn = [xn](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const float g = self.grad[0];
            for (auto& gv : xn->grad) gv += g;
        };
    }
    return Tensor::wrap(out);
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_size(shape) != x.size()) {
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                             " changes element count");
    }
    auto out = make_result(shape, {x.node_ptr()});
    out->data = x.data();
    if (out->requires_grad) {
        auto xn = x.node_ptr();
        out->backward_fn = [xn](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            kernels::axpy(static_cast<std::size_t>(self.size), 1.0f, self.grad.data(),
                          xn->grad.data());
        };
    }
    return Tensor::wrap(out);
}

Tensor avgpool2x2(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0) {
        throw DimensionError("avgpool2x2 expects [N,C,H,W] with even H,W, got " + shape_str(s));
    }
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    const std::int64_t oh = h / 2, ow = w / 2;
    auto out = make_result({n, c, oh, ow}, {x.node_ptr()});
    const float* px = x.data().data();
    float* po = out->data.data();
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const float* in = px + nc * h * w;
        float* o = po + nc * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t xx = 0; xx < ow; ++xx)
                o[y * ow + xx] = 0.25f * (in[(2 * y) * w + 2 * xx] + in[(2 * y) * w + 2 * xx + 1] +
                                          in[(2 * y + 1) * w + 2 * xx] +
                                          in[(2 * y + 1) * w + 2 * xx + 1]);
    }
    if (out->requires_grad) {
        auto xn = x.node_ptr();
        out->backward_fn = [xn, n, c, h, w, oh, ow](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const float* g = self.grad.data();
            for (std::int64_t nc = 0; nc < n * c; ++nc) {
                float* gi = xn->grad.data() + nc * h * w;
                const float* go = g + nc * oh * ow;
                for (std::int64_t y = 0; y < oh; ++y)
                    for (std::int64_t xx = 0; xx < ow; ++xx) {
                        const float gv = 0.25f * go[y * ow + xx];
                        gi[(2 * y) * w + 2 * xx] += gv;
                        gi[(2 * y) * w + 2 * xx + 1] += gv;
                        gi[(2 * y + 1) * w + 2 * xx] += gv;
                        gi[(2 * y + 1) * w + 2 * xx + 1] += gv;
                    }
            }
        };
    }
    return Tensor::wrap(out);
}

// Top-left-aligned bilinear interpolation: output pixel (y,x) samples the
// source at (y*h/H, x*w/W). For integer upscale factors every source cell
// value reappears exactly in the output, so the output range equals the
// source range.
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw DimensionError("upsample_bilinear expects [N,C,h,w]");
    if (out_h <= 0 || out_w <= 0) throw ConfigError("upsample target must be positive");
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    struct Lerp {
        std::int64_t i0, i1;
        float f;
    };
    auto build = [](std::int64_t src, std::int64_t dst) {
        std::vector<Lerp> m(static_cast<std::size_t>(dst));
        for (std::int64_t i = 0; i < dst; ++i) {
            const double pos = static_cast<double>(i) * src / dst;
            std::int64_t i0 = static_cast<std::int64_t>(pos);
            if (i0 > src - 1) i0 = src - 1;
            const std::int64_t i1 = std::min(i0 + 1, src - 1);
            m[static_cast<std::size_t>(i)] = {i0, i1, static_cast<float>(pos - static_cast<double>(i0))};
        }
        return m;
    };
    const auto ym = build(h, out_h);
    const auto xm = build(w, out_w);
    auto out = make_result({n, c, out_h, out_w}, {x.node_ptr()});
    const float* px = x.data().data();
    float* po = out->data.data();
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const float* in = px + nc * h * w;
        float* o = po + nc * out_h * out_w;
        for (std::int64_t y = 0; y < out_h; ++y) {
            const auto& my = ym[static_cast<std::size_t>(y)];
            for (std::int64_t xx = 0; xx < out_w; ++xx) {
                const auto& mx = xm[static_cast<std::size_t>(xx)];
                const float top = in[my.i0 * w + mx.i0] * (1.0f - mx.f) + in[my.i0 * w + mx.i1] * mx.f;
                const float bot = in[my.i1 * w + mx.i0] * (1.0f - mx.f) + in[my.i1 * w + mx.i1] * mx.f;
                o[y * out_w + xx] = top * (1.0f - my.f) + bot * my.f;
            }
        }
    }
    if (out->requires_grad) {
        auto xn = x.node_ptr();
        const std::int64_t oh = out_h, ow = out_w;
        out->backward_fn = [xn, ym, xm, n, c, h, w, oh, ow](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const float* g = self.grad.data();
            for (std::int64_t nc = 0; nc < n * c; ++nc) {
                float* gi = xn->grad.data() + nc * h * w;
                const float* go = g + nc * oh * ow;
                for (std::int64_t y = 0; y < oh; ++y) {
                    const auto& my = ym[static_cast<std::size_t>(y)];
                    for (std::int64_t xx = 0; xx < ow; ++xx) {
                        const auto& mx = xm[static_cast<std::size_t>(xx)];
                        const float gv = go[y * ow + xx];
                        gi[my.i0 * w + mx.i0] += gv * (1.0f - my.f) * (1.0f - mx.f);
                        gi[my.i0 * w + mx.i1] += gv * (1.0f - my.f) * mx.f;
                        gi[my.i1 * w + mx.i0] += gv * my.f * (1.0f - mx.f);
                        gi[my.i1 * w + mx.i1] += gv * my.f * mx.f;
                    }
                }
            }
        };
    }
    return Tensor::wrap(out);
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw UsageError("backward requires a scalar loss tensor");
    }
    Node* root = loss.node();
    if (!root->requires_grad) {
        throw UsageError("backward on a tensor that does not require grad");
    }

    // Iterative post-order topological sort over the recorded graph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            Node* p = node->parents[child].get();
            ++child;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // Drop the tape: intermediate results release parents and rules, leaf
    // gradients stay behind for the optimizer.
    for (Node* n : order) {
        if (!n->parents.empty()) {
            n->parents.clear();
            n->backward_fn = nullptr;
            n->grad.clear();
        }
    }
}

}  // namespace msi
