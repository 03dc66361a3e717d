#pragma once

#include <cstdint>

#include "autoopt/kernels.hpp"  // ConvDims

// Naive serial reference kernels. Deliberately written as plain nested loops
// with no blocking, no pragmas and no shared code with autoopt::kernels; they
// are the comparison oracle in tests and the baseline in the kernel benchmark.
namespace autoopt::ref {

using kernels::ConvDims;

template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

template <typename T>
void dense_forward(const T* x, const T* w, const T* bias, T* z, int64_t n, int64_t in,
                   int64_t out);

template <typename T>
void dense_backward_input(const T* dz, const T* w, T* dx, int64_t n, int64_t in, int64_t out);

template <typename T>
void dense_grad(const T* dz, const T* x, T* gw, T* gb, int64_t n, int64_t in, int64_t out);

template <typename T>
void conv2d_forward(const T* x, const T* wgt, const T* bias, T* z, const ConvDims& d);

template <typename T>
void conv2d_backward_input(const T* dz, const T* wgt, T* dx, const ConvDims& d);

template <typename T>
void conv2d_grad(const T* dz, const T* x, T* gw, T* gb, const ConvDims& d);

template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, int64_t n, int64_t c, int64_t h,
                     int64_t w, int64_t k);

template <typename T>
void logsoftmax_forward(const T* x, T* y, int64_t n, int64_t c);

}  // namespace autoopt::ref
