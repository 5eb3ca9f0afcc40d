#include "hinet/kernels.hpp"

#include <algorithm>
#include <cstring>

namespace hinet::kernels {

namespace {

template <typename T>
void affine_batch_impl(const T* x, const T* wt, const T* bias, T* y,
                       std::size_t n, std::size_t in_dim, std::size_t out_dim) {
    for (std::size_t row = 0; row < n; ++row) {
        const T* xr = x + row * in_dim;
        T* yr = y + row * out_dim;
        std::memcpy(yr, bias, out_dim * sizeof(T));
        for (std::size_t i = 0; i < in_dim; ++i) {
            const T a = xr[i];
            const T* w = wt + i * out_dim;
            for (std::size_t o = 0; o < out_dim; ++o) yr[o] += a * w[o];
        }
    }
}

template <typename T>
void matmul_acc_impl(const T* dy, const T* x, T* dw,
                     std::size_t n, std::size_t out_dim, std::size_t in_dim) {
    for (std::size_t row = 0; row < n; ++row) {
        const T* dyr = dy + row * out_dim;
        const T* xr = x + row * in_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
            const T a = dyr[o];
            T* w = dw + o * in_dim;
            for (std::size_t i = 0; i < in_dim; ++i) w[i] += a * xr[i];
        }
    }
}

template <typename T>
void leaky_relu_impl(T* x, std::size_t n, T slope) {
    for (std::size_t k = 0; k < n; ++k) x[k] = std::max(x[k], slope * x[k]);
}

template <typename T>
void leaky_relu_bwd_impl(const T* pre, T* g, std::size_t n, T slope) {
    for (std::size_t k = 0; k < n; ++k) {
        if (!(pre[k] > T(0))) g[k] *= slope;
    }
}

template <typename T>
void hadamard_impl(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * b[k];
}

template <typename T>
void axpy_impl(T a, const T* x, T* y, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) y[k] += a * x[k];
}

template <typename T>
void lerp_impl(const T* a, const T* b, T t, T* out, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = a[k] + (b[k] - a[k]) * t;
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops table{
        affine_batch_impl<float>, matmul_acc_impl<float>,  leaky_relu_impl<float>,
        leaky_relu_bwd_impl<float>, hadamard_impl<float>,  axpy_impl<float>,
        lerp_impl<float>,
    };
    return table;
}

void affine_batch(const double* x, const double* wt, const double* bias, double* y,
                  std::size_t n, std::size_t in_dim, std::size_t out_dim) {
    affine_batch_impl(x, wt, bias, y, n, in_dim, out_dim);
}
void matmul_acc(const double* dy, const double* x, double* dw,
                std::size_t n, std::size_t out_dim, std::size_t in_dim) {
    matmul_acc_impl(dy, x, dw, n, out_dim, in_dim);
}
void leaky_relu(double* x, std::size_t n, double slope) { leaky_relu_impl(x, n, slope); }
void leaky_relu_bwd(const double* pre, double* g, std::size_t n, double slope) {
    leaky_relu_bwd_impl(pre, g, n, slope);
}
void hadamard(const double* a, const double* b, double* out, std::size_t n) {
    hadamard_impl(a, b, out, n);
}
void axpy(double a, const double* x, double* y, std::size_t n) { axpy_impl(a, x, y, n); }
void lerp(const double* a, const double* b, double t, double* out, std::size_t n) {
    lerp_impl(a, b, t, out, n);
}

}  // namespace hinet::kernels
