#include "msi/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>

namespace msi::kernels {

namespace detail {

void axpy_scalar(std::size_t n, float a, const float* x, float* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

float dot_scalar(std::size_t n, const float* x, const float* y) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void add_scalar(std::size_t n, const float* a, const float* b, float* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_scalar(std::size_t n, const float* a, const float* b, float* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void clamp_min_scalar(std::size_t n, const float* x, float c, float* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::max(x[i], c);
}

void scale_scalar(std::size_t n, float a, const float* x, float* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

}  // namespace detail

namespace {

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

Backend detect_backend() {
    if (const char* env = std::getenv("MSI_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return Backend::avx2;
    }
    return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

Backend g_backend = detect_backend();

}  // namespace

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
    if (b == Backend::avx2 && !avx2_supported()) b = Backend::scalar;
    g_backend = b;
}

const char* backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

#if defined(__x86_64__) || defined(_M_X64)
#define MSI_DISPATCH(fn, ...)                              \
    if (g_backend == Backend::avx2)                        \
        return detail::fn##_avx2(__VA_ARGS__);             \
    return detail::fn##_scalar(__VA_ARGS__)
#else
#define MSI_DISPATCH(fn, ...) return detail::fn##_scalar(__VA_ARGS__)
#endif

void axpy(std::size_t n, float a, const float* x, float* y) {
    MSI_DISPATCH(axpy, n, a, x, y);
}

float dot(std::size_t n, const float* x, const float* y) {
    MSI_DISPATCH(dot, n, x, y);
}

void add(std::size_t n, const float* a, const float* b, float* out) {
    MSI_DISPATCH(add, n, a, b, out);
}

void mul(std::size_t n, const float* a, const float* b, float* out) {
    MSI_DISPATCH(mul, n, a, b, out);
}

void clamp_min(std::size_t n, const float* x, float c, float* out) {
    MSI_DISPATCH(clamp_min, n, x, c, out);
}

void scale(std::size_t n, float a, const float* x, float* out) {
    MSI_DISPATCH(scale, n, a, x, out);
}

}  // namespace msi::kernels
