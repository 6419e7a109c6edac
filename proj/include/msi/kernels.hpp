#pragma once

#include <cstddef>
#include <string>

// Data-parallel float kernels used by the tensor engine's inner loops.
// Each kernel has a scalar reference implementation and, on x86-64 with
// AVX2, a vectorized variant selected at runtime. The vector variants
// perform the same per-element operations in the same order as the
// scalar reference (no FMA contraction), so axpy/add/mul/relu/clamp_min
// are bit-identical across backends; dot accumulates in a fixed lane
// order and is equivalence-tested against scalar within tolerance.

namespace msi::kernels {

enum class Backend { scalar, avx2 };

// Active backend. Defaults to the best supported one; the MSI_KERNELS
// environment variable ("scalar" or "avx2") overrides detection.
Backend active_backend();
void set_backend(Backend b);
const char* backend_name(Backend b);

// y[i] += a * x[i]
void axpy(std::size_t n, float a, const float* x, float* y);

// sum_i x[i] * y[i], accumulated in float
float dot(std::size_t n, const float* x, const float* y);

// out[i] = a[i] + b[i] / a[i] * b[i]
void add(std::size_t n, const float* a, const float* b, float* out);
void mul(std::size_t n, const float* a, const float* b, float* out);

// out[i] = max(x[i], c)
void clamp_min(std::size_t n, const float* x, float c, float* out);

// out[i] = a * x[i]
void scale(std::size_t n, float a, const float* x, float* out);

namespace detail {
void axpy_scalar(std::size_t n, float a, const float* x, float* y);
float dot_scalar(std::size_t n, const float* x, const float* y);
void add_scalar(std::size_t n, const float* a, const float* b, float* out);
void mul_scalar(std::size_t n, const float* a, const float* b, float* out);
void clamp_min_scalar(std::size_t n, const float* x, float c, float* out);
void scale_scalar(std::size_t n, float a, const float* x, float* out);

#if defined(__x86_64__) || defined(_M_X64)
void axpy_avx2(std::size_t n, float a, const float* x, float* y);
float dot_avx2(std::size_t n, const float* x, const float* y);
void add_avx2(std::size_t n, const float* a, const float* b, float* out);
void mul_avx2(std::size_t n, const float* a, const float* b, float* out);
void clamp_min_avx2(std::size_t n, const float* x, float c, float* out);
void scale_avx2(std::size_t n, float a, const float* x, float* out);
#endif
}  // namespace detail

}  // namespace msi::kernels
