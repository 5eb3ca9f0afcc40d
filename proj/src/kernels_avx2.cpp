// AVX2 kernel variants. Vectorization runs across the output/element
// dimension so every lane performs the same operation sequence as the scalar
// reference; with -ffp-contract=off the results are bitwise identical.

#include "hinet/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cstring>

namespace hinet::kernels {

namespace {

void affine_batch_avx2(const float* x, const float* wt, const float* bias, float* y,
                       std::size_t n, std::size_t in_dim, std::size_t out_dim) {
    const std::size_t o8 = out_dim & ~std::size_t(7);
    for (std::size_t row = 0; row < n; ++row) {
        const float* xr = x + row * in_dim;
        float* yr = y + row * out_dim;
        std::memcpy(yr, bias, out_dim * sizeof(float));
        for (std::size_t i = 0; i < in_dim; ++i) {
            const float a = xr[i];
            const float* w = wt + i * out_dim;
            const __m256 va = _mm256_set1_ps(a);
            std::size_t o = 0;
            for (; o < o8; o += 8) {
                __m256 acc = _mm256_loadu_ps(yr + o);
                acc = _mm256_add_ps(acc, _mm256_mul_ps(va, _mm256_loadu_ps(w + o)));
                _mm256_storeu_ps(yr + o, acc);
            }
            for (; o < out_dim; ++o) yr[o] += a * w[o];
        }
    }
}

void matmul_acc_avx2(const float* dy, const float* x, float* dw,
                     std::size_t n, std::size_t out_dim, std::size_t in_dim) {
    const std::size_t i8 = in_dim & ~std::size_t(7);
    for (std::size_t row = 0; row < n; ++row) {
        const float* dyr = dy + row * out_dim;
        const float* xr = x + row * in_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
            const float a = dyr[o];
            float* w = dw + o * in_dim;
            const __m256 va = _mm256_set1_ps(a);
            std::size_t i = 0;
            for (; i < i8; i += 8) {
                __m256 acc = _mm256_loadu_ps(w + i);
                acc = _mm256_add_ps(acc, _mm256_mul_ps(va, _mm256_loadu_ps(xr + i)));
                _mm256_storeu_ps(w + i, acc);
            }
            for (; i < in_dim; ++i) w[i] += a * xr[i];
        }
    }
}

void leaky_relu_avx2(float* x, std::size_t n, float slope) {
    const __m256 vs = _mm256_set1_ps(slope);
    const std::size_t n8 = n & ~std::size_t(7);
    std::size_t k = 0;
    for (; k < n8; k += 8) {
        const __m256 v = _mm256_loadu_ps(x + k);
        _mm256_storeu_ps(x + k, _mm256_max_ps(v, _mm256_mul_ps(vs, v)));
    }
    for (; k < n; ++k) x[k] = std::max(x[k], slope * x[k]);
}

void leaky_relu_bwd_avx2(const float* pre, float* g, std::size_t n, float slope) {
    const __m256 vs = _mm256_set1_ps(slope);
    const __m256 zero = _mm256_setzero_ps();
    const std::size_t n8 = n & ~std::size_t(7);
    std::size_t k = 0;
    for (; k < n8; k += 8) {
        const __m256 p = _mm256_loadu_ps(pre + k);
        const __m256 v = _mm256_loadu_ps(g + k);
        const __m256 pos = _mm256_cmp_ps(p, zero, _CMP_GT_OQ);
        _mm256_storeu_ps(g + k, _mm256_blendv_ps(_mm256_mul_ps(v, vs), v, pos));
    }
    for (; k < n; ++k) {
        if (!(pre[k] > 0.f)) g[k] *= slope;
    }
}

void hadamard_avx2(const float* a, const float* b, float* out, std::size_t n) {
    const std::size_t n8 = n & ~std::size_t(7);
    std::size_t k = 0;
    for (; k < n8; k += 8)
        _mm256_storeu_ps(out + k, _mm256_mul_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k)));
    for (; k < n; ++k) out[k] = a[k] * b[k];
}

void axpy_avx2(float a, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    const std::size_t n8 = n & ~std::size_t(7);
    std::size_t k = 0;
    for (; k < n8; k += 8) {
        __m256 acc = _mm256_loadu_ps(y + k);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(va, _mm256_loadu_ps(x + k)));
        _mm256_storeu_ps(y + k, acc);
    }
    for (; k < n; ++k) y[k] += a * x[k];
}

void lerp_avx2(const float* a, const float* b, float t, float* out, std::size_t n) {
    const __m256 vt = _mm256_set1_ps(t);
    const std::size_t n8 = n & ~std::size_t(7);
    std::size_t k = 0;
    for (; k < n8; k += 8) {
        const __m256 va = _mm256_loadu_ps(a + k);
        const __m256 vb = _mm256_loadu_ps(b + k);
        _mm256_storeu_ps(out + k, _mm256_add_ps(va, _mm256_mul_ps(_mm256_sub_ps(vb, va), vt)));
    }
    for (; k < n; ++k) out[k] = a[k] + (b[k] - a[k]) * t;
}

}  // namespace

const Ops& avx2_ops() {
    static const Ops table{
        affine_batch_avx2, matmul_acc_avx2, leaky_relu_avx2, leaky_relu_bwd_avx2,
        hadamard_avx2,     axpy_avx2,       lerp_avx2,
    };
    return table;
}

}  // namespace hinet::kernels

#else  // non-x86: AVX2 table falls back to the scalar reference

namespace hinet::kernels {
const Ops& avx2_ops() { return scalar_ops(); }
}  // namespace hinet::kernels

#endif
