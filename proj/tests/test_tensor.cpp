#include <doctest.h>

#include <cmath>
#include <vector>

#include "msi/errors.hpp"
#include "msi/rng.hpp"
#include "msi/tensor.hpp"

using namespace msi;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool rg = false) {
    std::vector<float> v(static_cast<std::size_t>(shape_size(shape)));
    for (auto& x : v) x = rng.uniform(-1.0f, 1.0f);
    return Tensor::from_data(shape, std::move(v), rg);
}

// Independent triple-loop matmul used as the oracle.
std::vector<float> matmul_oracle(const std::vector<float>& a, const std::vector<float>& b,
                                 int n, int k, int m) {
    std::vector<float> c(static_cast<std::size_t>(n) * m, 0.0f);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += static_cast<double>(a[i * k + t]) * b[t * m + j];
            c[static_cast<std::size_t>(i) * m + j] = static_cast<float>(acc);
        }
    return c;
}

// Direct six-loop cross-correlation oracle.
std::vector<float> conv_oracle(const std::vector<float>& x, const std::vector<float>& k,
                               int n, int c, int h, int w, int kn, int kh, int kw, int stride,
                               int pad) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<float> out(static_cast<std::size_t>(n) * kn * oh * ow, 0.0f);
    for (int ni = 0; ni < n; ++ni)
        for (int ko = 0; ko < kn; ++ko)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int ci = 0; ci < c; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += static_cast<double>(
                                           x[((ni * c + ci) * h + iy) * w + ix]) *
                                       k[((ko * c + ci) * kh + ky) * kw + kx];
                            }
                    out[((static_cast<std::size_t>(ni) * kn + ko) * oh + oy) * ow + ox] =
                        static_cast<float>(acc);
                }
    return out;
}

}  // namespace

TEST_CASE("matmul matches the triple-loop oracle") {
    Rng rng(1);
    for (auto [n, k, m] : {std::array<int, 3>{1, 1, 1}, {2, 3, 4}, {5, 17, 9}, {8, 64, 10}}) {
        Tensor a = random_tensor({n, k}, rng);
        Tensor b = random_tensor({k, m}, rng);
        Tensor c = matmul(a, b);
        REQUIRE(c.shape() == Shape{n, m});
        const auto want = matmul_oracle(a.data(), b.data(), n, k, m);
        for (std::size_t i = 0; i < want.size(); ++i) {
            CHECK(c.data()[i] == doctest::Approx(want[i]).epsilon(1e-4));
        }
    }
    CHECK_THROWS_AS(matmul(random_tensor({2, 3}, rng), random_tensor({4, 2}, rng)),
                    DimensionError);
}

TEST_CASE("conv2d matches the six-loop oracle across strides and padding") {
    Rng rng(2);
    struct Case {
        int n, c, h, w, kn, kh, kw, stride, pad;
    };
    for (const Case& t : {Case{1, 1, 5, 5, 1, 3, 3, 1, 0}, Case{2, 3, 6, 6, 4, 3, 3, 1, 1},
                          Case{1, 2, 7, 5, 3, 3, 3, 2, 1}, Case{1, 1, 4, 4, 1, 1, 1, 1, 0}}) {
        Tensor x = random_tensor({t.n, t.c, t.h, t.w}, rng);
        Tensor k = random_tensor({t.kn, t.c, t.kh, t.kw}, rng);
        Tensor y = conv2d(x, k, t.stride, t.pad);
        const auto want = conv_oracle(x.data(), k.data(), t.n, t.c, t.h, t.w, t.kn, t.kh, t.kw,
                                      t.stride, t.pad);
        REQUIRE(static_cast<std::size_t>(y.size()) == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) {
            CHECK(y.data()[i] == doctest::Approx(want[i]).epsilon(1e-4));
        }
    }
}

TEST_CASE("elementwise ops and scalar helpers") {
    Tensor x = Tensor::from_data({4}, {-1.0f, 0.0f, 0.5f, 2.0f});
    CHECK(relu(x).data() == std::vector<float>{0.0f, 0.0f, 0.5f, 2.0f});
    CHECK(max_scalar(x, 0.25f).data() == std::vector<float>{0.25f, 0.25f, 0.5f, 2.0f});
    CHECK(add_scalar(x, 1.0f).data() == std::vector<float>{0.0f, 1.0f, 1.5f, 3.0f});
    CHECK(scale(x, -2.0f).data() == std::vector<float>{2.0f, 0.0f, -1.0f, -4.0f});
    CHECK(sigmoid(Tensor::from_data({1}, {0.0f})).item() == doctest::Approx(0.5));
    CHECK(sigmoid(Tensor::from_data({1}, {2.0f})).item() ==
          doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
    CHECK(log_t(Tensor::from_data({1}, {std::exp(1.0f)})).item() == doctest::Approx(1.0));
    CHECK(sum(x).item() == doctest::Approx(1.5));
}

TEST_CASE("add and mul broadcast size-1 dimensions") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({1, 2}, {10, 100});
    CHECK(add(a, b).data() == std::vector<float>{11, 102, 13, 104});
    CHECK(mul(a, b).data() == std::vector<float>{10, 200, 30, 400});
    Tensor bias = Tensor::from_data({1, 2, 1, 1}, {1, -1});
    Tensor x = Tensor::from_data({1, 2, 2, 2}, {0, 0, 0, 0, 0, 0, 0, 0});
    CHECK(add(x, bias).data() == std::vector<float>{1, 1, 1, 1, -1, -1, -1, -1});
    CHECK_THROWS_AS(add(a, Tensor::from_data({3, 2}, {0, 0, 0, 0, 0, 0})), DimensionError);
}

TEST_CASE("softmax rows are normalized and match hand values") {
    Tensor x = Tensor::from_data({2, 3}, {0, 0, 0, 1, 2, 3});
    Tensor p = softmax(x, 1);
    for (int i = 0; i < 3; ++i) CHECK(p.data()[static_cast<std::size_t>(i)] == doctest::Approx(1.0 / 3));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(p.data()[3] == doctest::Approx(std::exp(1.0) / z));
    CHECK(p.data()[5] == doctest::Approx(std::exp(3.0) / z));
    // axis 0 on a [2,3]: columns normalize instead.
    Tensor q = softmax(x, 0);
    CHECK(q.data()[0] + q.data()[3] == doctest::Approx(1.0));
}

TEST_CASE("cross entropy matches hand-computed values") {
    Tensor logits = Tensor::from_data({1, 2}, {0.0f, 0.0f});
    CHECK(cross_entropy(logits, {0}).item() == doctest::Approx(std::log(2.0)));
    Tensor skew = Tensor::from_data({2, 2}, {5.0f, 0.0f, 0.0f, 5.0f});
    // Both samples assign p ~ sigmoid(5) to the true class.
    const double want = -std::log(std::exp(5.0) / (std::exp(5.0) + 1.0));
    CHECK(cross_entropy(skew, {0, 1}).item() == doctest::Approx(want));
    CHECK_THROWS_AS(cross_entropy(skew, {0, 7}), DataError);
}

TEST_CASE("reshape, avgpool and upsample") {
    Rng rng(3);
    Tensor x = random_tensor({2, 6}, rng);
    Tensor r = reshape(x, {3, 4});
    CHECK(r.data() == x.data());
    CHECK_THROWS_AS(reshape(x, {5, 5}), DimensionError);

    Tensor p = avgpool2x2(Tensor::from_data({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
    CHECK(p.shape() == Shape{1, 1, 1, 2});
    CHECK(p.data() == std::vector<float>{3.5f, 5.5f});

    Tensor up = upsample_bilinear(Tensor::from_data({1, 1, 2, 2}, {0, 1, 2, 3}), 4, 4);
    const std::vector<float> want{0, 0.5f, 1, 1, 1, 1.5f, 2, 2, 2, 2.5f, 3, 3, 2, 2.5f, 3, 3};
    REQUIRE(up.size() == 16);
    for (int i = 0; i < 16; ++i) {
        CHECK(up.data()[static_cast<std::size_t>(i)] == doctest::Approx(want[static_cast<std::size_t>(i)]));
    }
}

TEST_CASE("upsampled values stay inside the source range") {
    Rng rng(4);
    Tensor low = random_tensor({2, 1, 4, 4}, rng);
    float lo = low.data()[0], hi = low.data()[0];
    for (float v : low.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor up = upsample_bilinear(low, 32, 32);
    for (float v : up.data()) {
        CHECK(v >= lo - 1e-6f);
        CHECK(v <= hi + 1e-6f);
    }
}

TEST_CASE("linear matches matmul plus bias") {
    Rng rng(5);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({2, 4}, rng);
    Tensor b = Tensor::from_data({2}, {0.5f, -0.5f});
    Tensor y = linear(x, w, b);
    REQUIRE(y.shape() == Shape{3, 2});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = b.data()[static_cast<std::size_t>(j)];
            for (int t = 0; t < 4; ++t) acc += static_cast<double>(x.data()[i * 4 + t]) * w.data()[j * 4 + t];
            CHECK(y.data()[static_cast<std::size_t>(i * 2 + j)] == doctest::Approx(acc).epsilon(1e-4));
        }
}
