#include <doctest.h>

#include <cmath>
#include <vector>

#include "msi/kernels.hpp"
#include "msi/rng.hpp"

using namespace msi;

namespace {

bool have_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = rng.uniform(-2.0f, 2.0f);
    return v;
}

}  // namespace

TEST_CASE("scalar kernels match hand-computed values") {
    const float x[4] = {1, 2, 3, 4};
    const float y0[4] = {10, 20, 30, 40};
    float y[4] = {10, 20, 30, 40};
    kernels::detail::axpy_scalar(4, 2.0f, x, y);
    for (int i = 0; i < 4; ++i) CHECK(y[i] == y0[i] + 2.0f * x[i]);

    CHECK(kernels::detail::dot_scalar(4, x, y0) == doctest::Approx(1 * 10 + 2 * 20 + 3 * 30 + 4 * 40));

    float out[4];
    kernels::detail::add_scalar(4, x, y0, out);
    CHECK(out[2] == 33.0f);
    kernels::detail::mul_scalar(4, x, y0, out);
    CHECK(out[3] == 160.0f);
    kernels::detail::clamp_min_scalar(4, x, 2.5f, out);
    CHECK(out[0] == 2.5f);
    CHECK(out[3] == 4.0f);
    kernels::detail::scale_scalar(4, -0.5f, x, out);
    CHECK(out[1] == -1.0f);
}

TEST_CASE("avx2 variants are bit-identical to scalar for elementwise kernels") {
    if (!have_avx2()) return;  // nothing to compare on this host
#if defined(__x86_64__) || defined(_M_X64)
    Rng rng(42);
    // Sizes straddling the 8-lane width, including remainders.
    for (std::size_t n : {1u, 7u, 8u, 9u, 64u, 250u, 1023u}) {
        std::vector<float> a = random_vec(n, rng);
        std::vector<float> b = random_vec(n, rng);
        std::vector<float> s(n), v(n);

        std::vector<float> ys = b, yv = b;
        kernels::detail::axpy_scalar(n, 1.7f, a.data(), ys.data());
        kernels::detail::axpy_avx2(n, 1.7f, a.data(), yv.data());
        CHECK(ys == yv);

        kernels::detail::add_scalar(n, a.data(), b.data(), s.data());
        kernels::detail::add_avx2(n, a.data(), b.data(), v.data());
        CHECK(s == v);

        kernels::detail::mul_scalar(n, a.data(), b.data(), s.data());
        kernels::detail::mul_avx2(n, a.data(), b.data(), v.data());
        CHECK(s == v);

        kernels::detail::clamp_min_scalar(n, a.data(), 0.25f, s.data());
        kernels::detail::clamp_min_avx2(n, a.data(), 0.25f, v.data());
        CHECK(s == v);

        kernels::detail::scale_scalar(n, -2.5f, a.data(), s.data());
        kernels::detail::scale_avx2(n, -2.5f, a.data(), v.data());
        CHECK(s == v);
    }
#endif
}

TEST_CASE("dot agrees across backends within accumulation tolerance") {
    if (!have_avx2()) return;
#if defined(__x86_64__) || defined(_M_X64)
    Rng rng(7);
    for (std::size_t n : {1u, 9u, 100u, 4096u}) {
        std::vector<float> a = random_vec(n, rng);
        std::vector<float> b = random_vec(n, rng);
        const double ds = kernels::detail::dot_scalar(n, a.data(), b.data());
        const double dv = kernels::detail::dot_avx2(n, a.data(), b.data());
        CHECK(std::abs(ds - dv) <= 1e-4 * std::max(1.0, std::abs(ds)));
    }
#endif
}

TEST_CASE("backend selection is switchable and dispatch routes through it") {
    const kernels::Backend original = kernels::active_backend();
    kernels::set_backend(kernels::Backend::scalar);
    CHECK(kernels::active_backend() == kernels::Backend::scalar);
    const float x[3] = {1, 2, 3};
    float out[3];
    kernels::scale(3, 2.0f, x, out);
    CHECK(out[2] == 6.0f);
    if (have_avx2()) {
        kernels::set_backend(kernels::Backend::avx2);
        kernels::scale(3, 2.0f, x, out);
        CHECK(out[2] == 6.0f);
    }
    kernels::set_backend(original);
    CHECK(std::string(kernels::backend_name(kernels::Backend::scalar)) == "scalar");
}
