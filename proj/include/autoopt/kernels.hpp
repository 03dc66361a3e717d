#pragma once

#include <cstdint>

#include "autoopt/tensor.hpp"

// OpenMP-parallel compute kernels. Every parallel loop assigns each output
// element (or per-sample slot) to exactly one iteration and keeps the
// accumulation order inside an iteration fixed, so results are bit-identical
// across thread counts. Serial twins live in autoopt::ref (kernels_ref.hpp).
namespace autoopt::kernels {

// C[m x n] = A[m x k] * B[k x n], row-major
template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

// Z[N x out] = X[N x in] W^T + bias, with W[out x in]
template <typename T>
void dense_forward(const T* x, const T* w, const T* bias, T* z, int64_t n, int64_t in,
                   int64_t out);

// dX[N x in] = dZ[N x out] W
template <typename T>
void dense_backward_input(const T* dz, const T* w, T* dx, int64_t n, int64_t in, int64_t out);

// gW[o,k] = (1/N) sum_i dz[i,o] x[i,k];  gb[o] = (1/N) sum_i dz[i,o]
template <typename T>
void dense_grad(const T* dz, const T* x, T* gw, T* gb, int64_t n, int64_t in, int64_t out);

// sum_i g_i^T Hinv g_i for the rank-1 per-sample dense gradients g_i = dz_i x_i^T,
// without materializing them. hinv_w[out x in] / hinv_b[out] hold the elementwise
// reciprocal of the preconditioner diagonal; nullptr = identity. Outputs are for
// the weight and bias blocks separately; pass nullptr to skip one.
template <typename T>
void dense_per_sample_sumsq(const T* dz, const T* x, const T* hinv_w, const T* hinv_b,
                            int64_t n, int64_t in, int64_t out, double* sumsq_w,
                            double* sumsq_b);

struct ConvDims {
    int64_t n, cin, h, w;  // input batch
    int64_t cout, k;       // square kernel, stride 1, valid padding
    int64_t ho() const { return h - k + 1; }
    int64_t wo() const { return w - k + 1; }
    int64_t weight_count() const { return cout * cin * k * k; }
};

// Z[N,Cout,Ho,Wo] = conv(X[N,Cin,H,W], W[Cout,Cin,k,k]) + bias
template <typename T>
void conv2d_forward(const T* x, const T* wgt, const T* bias, T* z, const ConvDims& d);

template <typename T>
void conv2d_backward_input(const T* dz, const T* wgt, T* dx, const ConvDims& d);

// batch-mean gradients
template <typename T>
void conv2d_grad(const T* dz, const T* x, T* gw, T* gb, const ConvDims& d);

// unreduced gradient of one sample; gw[cout*cin*k*k], gb[cout] (gb may be nullptr)
template <typename T>
void conv2d_sample_grad(const T* dz, const T* x, T* gw, T* gb, const ConvDims& d,
                        int64_t sample);

// sum_i g_i^T Hinv g_i for per-sample conv gradients, accumulated one sample at a
// time through a caller-provided scratch buffer of weight_count() elements.
template <typename T>
void conv2d_per_sample_sumsq(const T* dz, const T* x, const T* hinv_w, const T* hinv_b,
                             const ConvDims& d, T* scratch, double* sumsq_w,
                             double* sumsq_b);

template <typename T>
void relu_forward(const T* x, T* y, int64_t n);

template <typename T>
void relu_backward(const T* dy, const T* x, T* dx, int64_t n);

// non-overlapping k x k max pooling (stride k, floor semantics); ties resolve to
// the lowest linear index. argmax stores the input offset within each (n,c) plane.
template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, int64_t n, int64_t c, int64_t h,
                     int64_t w, int64_t k);

template <typename T>
void maxpool_backward(const T* dy, const int32_t* argmax, T* dx, int64_t n, int64_t c,
                      int64_t h, int64_t w, int64_t k);

// rowwise log softmax over C classes, max-shifted
template <typename T>
void logsoftmax_forward(const T* x, T* y, int64_t n, int64_t c);

// dX = dY - exp(Y) * rowsum(dY), with Y the forward output (log probabilities)
template <typename T>
void logsoftmax_backward(const T* dy, const T* y, T* dx, int64_t n, int64_t c);

}  // namespace autoopt::kernels

namespace autoopt {

// C = A B for 2-D tensors (row-major), shape-checked
template <typename T>
Tens<T> matmul(const Tens<T>& a, const Tens<T>& b);

}  // namespace autoopt
