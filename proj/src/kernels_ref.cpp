#include "autoopt/kernels_ref.hpp"

#include <cmath>

namespace autoopt::ref {

template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            T s = T(0);
            for (int64_t l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
            c[i * n + j] = s;
        }
}

template <typename T>
void dense_forward(const T* x, const T* w, const T* bias, T* z, int64_t n, int64_t in,
                   int64_t out) {
    for (int64_t i = 0; i < n; ++i)
        for (int64_t o = 0; o < out; ++o) {
            T s = bias ? bias[o] : T(0);
            for (int64_t j = 0; j < in; ++j) s += w[o * in + j] * x[i * in + j];
            z[i * out + o] = s;
        }
}

template <typename T>
void dense_backward_input(const T* dz, const T* w, T* dx, int64_t n, int64_t in,
                          int64_t out) {
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < in; ++j) {
            T s = T(0);
            for (int64_t o = 0; o < out; ++o) s += dz[i * out + o] * w[o * in + j];
            dx[i * in + j] = s;
        }
}

template <typename T>
void dense_grad(const T* dz, const T* x, T* gw, T* gb, int64_t n, int64_t in, int64_t out) {
    for (int64_t o = 0; o < out; ++o) {
        for (int64_t j = 0; j < in; ++j) {
            T s = T(0);
            for (int64_t i = 0; i < n; ++i) s += dz[i * out + o] * x[i * in + j];
            gw[o * in + j] = s / T(n);
        }
        T s = T(0);
        for (int64_t i = 0; i < n; ++i) s += dz[i * out + o];
        gb[o] = s / T(n);
    }
}

template <typename T>
void conv2d_forward(const T* x, const T* wgt, const T* bias, T* z, const ConvDims& d) {
    const int64_t ho = d.ho(), wo = d.wo();
    for (int64_t i = 0; i < d.n; ++i)
        for (int64_t co = 0; co < d.cout; ++co)
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t px = 0; px < wo; ++px) {
                    T s = bias ? bias[co] : T(0);
                    for (int64_t ci = 0; ci < d.cin; ++ci)
                        for (int64_t kh = 0; kh < d.k; ++kh)
                            for (int64_t kw = 0; kw < d.k; ++kw)
                                s += wgt[((co * d.cin + ci) * d.k + kh) * d.k + kw] *
                                     x[((i * d.cin + ci) * d.h + y + kh) * d.w + px + kw];
                    z[((i * d.cout + co) * ho + y) * wo + px] = s;
                }
}

template <typename T>
void conv2d_backward_input(const T* dz, const T* wgt, T* dx, const ConvDims& d) {
    const int64_t ho = d.ho(), wo = d.wo();
    for (int64_t i = 0; i < d.n; ++i)
        for (int64_t ci = 0; ci < d.cin; ++ci)
            for (int64_t y = 0; y < d.h; ++y)
                for (int64_t px = 0; px < d.w; ++px) {
                    T s = T(0);
                    for (int64_t co = 0; co < d.cout; ++co)
                        for (int64_t kh = 0; kh < d.k; ++kh)
                            for (int64_t kw = 0; kw < d.k; ++kw) {
                                const int64_t oy = y - kh, ox = px - kw;
                                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                                s += wgt[((co * d.cin + ci) * d.k + kh) * d.k + kw] *
                                     dz[((i * d.cout + co) * ho + oy) * wo + ox];
                            }
                    dx[((i * d.cin + ci) * d.h + y) * d.w + px] = s;
                }
}

template <typename T>
void conv2d_grad(const T* dz, const T* x, T* gw, T* gb, const ConvDims& d) {
    const int64_t ho = d.ho(), wo = d.wo();
    for (int64_t co = 0; co < d.cout; ++co) {
        for (int64_t ci = 0; ci < d.cin; ++ci)
            for (int64_t kh = 0; kh < d.k; ++kh)
                for (int64_t kw = 0; kw < d.k; ++kw) {
                    T s = T(0);
                    for (int64_t i = 0; i < d.n; ++i)
                        for (int64_t y = 0; y < ho; ++y)
                            for (int64_t px = 0; px < wo; ++px)
                                s += dz[((i * d.cout + co) * ho + y) * wo + px] *
                                     x[((i * d.cin + ci) * d.h + y + kh) * d.w + px + kw];
                    gw[((co * d.cin + ci) * d.k + kh) * d.k + kw] = s / T(d.n);
                }
        T s = T(0);
        for (int64_t i = 0; i < d.n; ++i)
            for (int64_t e = 0; e < ho * wo; ++e) s += dz[(i * d.cout + co) * ho * wo + e];
        gb[co] = s / T(d.n);
    }
}

template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, int64_t n, int64_t c, int64_t h,
                     int64_t w, int64_t k) {
    const int64_t ho = h / k, wo = w / k;
    for (int64_t p = 0; p < n * c; ++p)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                int64_t best = -1;
                T bv = T(0);
                for (int64_t dy = 0; dy < k; ++dy)
                    for (int64_t dx = 0; dx < k; ++dx) {
                        const int64_t off = (oy * k + dy) * w + ox * k + dx;
                        if (best < 0 || x[p * h * w + off] > bv) {
                            bv = x[p * h * w + off];
                            best = off;
                        }
                    }
                y[p * ho * wo + oy * wo + ox] = bv;
                argmax[p * ho * wo + oy * wo + ox] = static_cast<int32_t>(best);
            }
}

template <typename T>
void logsoftmax_forward(const T* x, T* y, int64_t n, int64_t c) {
    for (int64_t i = 0; i < n; ++i) {
        T mx = x[i * c];
        for (int64_t j = 1; j < c; ++j)
            if (x[i * c + j] > mx) mx = x[i * c + j];
        double s = 0;
        for (int64_t j = 0; j < c; ++j) s += std::exp(double(x[i * c + j] - mx));
        for (int64_t j = 0; j < c; ++j)
            y[i * c + j] = x[i * c + j] - (mx + T(std::log(s)));
    }
}

#define AUTOOPT_INSTANTIATE_REF(T)                                                          \
    template void matmul(const T*, const T*, T*, int64_t, int64_t, int64_t);                \
    template void dense_forward(const T*, const T*, const T*, T*, int64_t, int64_t,         \
                                int64_t);                                                   \
    template void dense_backward_input(const T*, const T*, T*, int64_t, int64_t, int64_t);  \
    template void dense_grad(const T*, const T*, T*, T*, int64_t, int64_t, int64_t);        \
    template void conv2d_forward(const T*, const T*, const T*, T*, const ConvDims&);        \
    template void conv2d_backward_input(const T*, const T*, T*, const ConvDims&);           \
    template void conv2d_grad(const T*, const T*, T*, T*, const ConvDims&);                 \
    template void maxpool_forward(const T*, T*, int32_t*, int64_t, int64_t, int64_t,        \
                                  int64_t, int64_t);                                        \
    template void logsoftmax_forward(const T*, T*, int64_t, int64_t);

AUTOOPT_INSTANTIATE_REF(float)
AUTOOPT_INSTANTIATE_REF(double)

}  // namespace autoopt::ref
