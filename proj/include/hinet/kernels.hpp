#pragma once

#include <cstddef>
#include <string>

namespace hinet::kernels {

// Data-parallel inner loops behind the decoder, encoder and training path.
// Each kernel has a scalar reference implementation and (on x86-64) an AVX2
// variant. Both follow the exact same per-element operation order, and the
// project builds with -ffp-contract=off, so the variants are bitwise
// equivalent; tests assert exact equality.
//
// Kernel contracts (all row-major, sizes in elements):
//
//   affine_batch:  y[n,o] = bias[o] + sum_i x[n,i] * wt[i,o]
//                  (wt is the weight matrix stored input-major, i.e. W^T)
//                  accumulation order: o-row initialised with bias, then
//                  i ascending.
//   matmul_acc:    dw[o,i] += sum_n dy[n,o] * x[n,i], n then o ascending.
//   leaky_relu:    x = max(x, slope * x), elementwise (0 <= slope <= 1).
//   leaky_relu_bwd:g[k] *= (pre[k] > 0) ? 1 : slope.
//   hadamard:      out[k] = a[k] * b[k].
//   axpy:          y[k] += a * x[k].
//   lerp:          out[k] = a[k] + (b[k] - a[k]) * t.

enum class Backend { kScalar, kAvx2 };

bool avx2_supported();
// Active backend: resolved once from CPU features and the HINET_SIMD
// environment variable (auto|scalar|avx2).
Backend active_backend();
void set_backend(Backend b);  // test hook
std::string backend_name(Backend b);

struct Ops {
    void (*affine_batch)(const float* x, const float* wt, const float* bias, float* y,
                         std::size_t n, std::size_t in_dim, std::size_t out_dim);
    void (*matmul_acc)(const float* dy, const float* x, float* dw,
                       std::size_t n, std::size_t out_dim, std::size_t in_dim);
    void (*leaky_relu)(float* x, std::size_t n, float slope);
    void (*leaky_relu_bwd)(const float* pre, float* g, std::size_t n, float slope);
    void (*hadamard)(const float* a, const float* b, float* out, std::size_t n);
    void (*axpy)(float a, const float* x, float* y, std::size_t n);
    void (*lerp)(const float* a, const float* b, float t, float* out, std::size_t n);
};

const Ops& scalar_ops();
const Ops& avx2_ops();  // valid only if avx2_supported()
const Ops& ops();       // active backend

// Scalar double-precision kernels (training/gradcheck path).
void affine_batch(const double* x, const double* wt, const double* bias, double* y,
                  std::size_t n, std::size_t in_dim, std::size_t out_dim);
void matmul_acc(const double* dy, const double* x, double* dw,
                std::size_t n, std::size_t out_dim, std::size_t in_dim);
void leaky_relu(double* x, std::size_t n, double slope);
void leaky_relu_bwd(const double* pre, double* g, std::size_t n, double slope);
void hadamard(const double* a, const double* b, double* out, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void lerp(const double* a, const double* b, double t, double* out, std::size_t n);

// Dispatched float entry points.
inline void affine_batch(const float* x, const float* wt, const float* bias, float* y,
                         std::size_t n, std::size_t in_dim, std::size_t out_dim) {
    ops().affine_batch(x, wt, bias, y, n, in_dim, out_dim);
}
inline void matmul_acc(const float* dy, const float* x, float* dw,
                       std::size_t n, std::size_t out_dim, std::size_t in_dim) {
    ops().matmul_acc(dy, x, dw, n, out_dim, in_dim);
}
inline void leaky_relu(float* x, std::size_t n, float slope) { ops().leaky_relu(x, n, slope); }
inline void leaky_relu_bwd(const float* pre, float* g, std::size_t n, float slope) {
    ops().leaky_relu_bwd(pre, g, n, slope);
}
inline void hadamard(const float* a, const float* b, float* out, std::size_t n) {
    ops().hadamard(a, b, out, n);
}
inline void axpy(float a, const float* x, float* y, std::size_t n) { ops().axpy(a, x, y, n); }
inline void lerp(const float* a, const float* b, float t, float* out, std::size_t n) {
    ops().lerp(a, b, t, out, n);
}

}  // namespace hinet::kernels
