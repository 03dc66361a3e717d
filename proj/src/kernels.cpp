#include "autoopt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace autoopt::kernels {

// below this many output elements a parallel region is not worth spawning
static constexpr int64_t kParThreshold = 4096;

template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (m * n > kParThreshold)
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = a + i * k;
        for (int64_t l = 0; l < k; ++l) {
            const T av = arow[l];
            const T* brow = b + l * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void dense_forward(const T* x, const T* w, const T* bias, T* z, int64_t n, int64_t in,
                   int64_t out) {
#pragma omp parallel for schedule(static) if (n * out > kParThreshold)
    for (int64_t i = 0; i < n; ++i) {
        const T* xi = x + i * in;
        T* zi = z + i * out;
        for (int64_t o = 0; o < out; ++o) {
            const T* wo = w + o * in;
            T s = bias ? bias[o] : T(0);
            for (int64_t j = 0; j < in; ++j) s += wo[j] * xi[j];
            zi[o] = s;
        }
    }
}

template <typename T>
void dense_backward_input(const T* dz, const T* w, T* dx, int64_t n, int64_t in,
                          int64_t out) {
#pragma omp parallel for schedule(static) if (n * in > kParThreshold)
    for (int64_t i = 0; i < n; ++i) {
        const T* dzi = dz + i * out;
        T* dxi = dx + i * in;
        for (int64_t j = 0; j < in; ++j) dxi[j] = T(0);
        for (int64_t o = 0; o < out; ++o) {
            const T d = dzi[o];
            const T* wo = w + o * in;
            for (int64_t j = 0; j < in; ++j) dxi[j] += d * wo[j];
        }
    }
}

template <typename T>
void dense_grad(const T* dz, const T* x, T* gw, T* gb, int64_t n, int64_t in, int64_t out) {
    const T invn = T(1) / T(n);
#pragma omp parallel for schedule(static) if (out * in > kParThreshold)
    for (int64_t o = 0; o < out; ++o) {
        T* grow = gw + o * in;
        for (int64_t j = 0; j < in; ++j) grow[j] = T(0);
        T bs = T(0);
        for (int64_t i = 0; i < n; ++i) {
            const T d = dz[i * out + o];
            bs += d;
            const T* xi = x + i * in;
            for (int64_t j = 0; j < in; ++j) grow[j] += d * xi[j];
        }
        for (int64_t j = 0; j < in; ++j) grow[j] *= invn;
        gb[o] = bs * invn;
    }
}

template <typename T>
void dense_per_sample_sumsq(const T* dz, const T* x, const T* hinv_w, const T* hinv_b,
                            int64_t n, int64_t in, int64_t out, double* sumsq_w,
                            double* sumsq_b) {
    std::vector<double> per_w(sumsq_w ? n : 0), per_b(sumsq_b ? n : 0);
#pragma omp parallel if (sumsq_w && n * out * in > kParThreshold)
    {
        std::vector<T> xsq(static_cast<size_t>(sumsq_w ? in : 0));
#pragma omp for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            const T* dzi = dz + i * out;
            if (sumsq_w) {
                const T* xi = x + i * in;
                double acc = 0;
                if (hinv_w) {
                    for (int64_t j = 0; j < in; ++j) xsq[j] = xi[j] * xi[j];
                    for (int64_t o = 0; o < out; ++o) {
                        const T* hrow = hinv_w + o * in;
                        T rs = T(0);
                        for (int64_t j = 0; j < in; ++j) rs += hrow[j] * xsq[j];
                        acc += double(dzi[o]) * double(dzi[o]) * double(rs);
                    }
                } else {
                    // identity preconditioner: ||g_i||^2 = ||dz_i||^2 ||x_i||^2
                    double dzs = 0, xs = 0;
                    for (int64_t o = 0; o < out; ++o) dzs += double(dzi[o]) * double(dzi[o]);
                    for (int64_t j = 0; j < in; ++j) xs += double(xi[j]) * double(xi[j]);
                    acc = dzs * xs;
                }
                per_w[i] = acc;
            }
            if (sumsq_b) {
                double acc = 0;
                for (int64_t o = 0; o < out; ++o) {
                    const double d = double(dzi[o]);
                    acc += hinv_b ? d * d * double(hinv_b[o]) : d * d;
                }
                per_b[i] = acc;
            }
        }
    }
    // fixed-order final reduction keeps the result independent of thread count
    if (sumsq_w) {
        double s = 0;
        for (int64_t i = 0; i < n; ++i) s += per_w[i];
        *sumsq_w = s;
    }
    if (sumsq_b) {
        double s = 0;
        for (int64_t i = 0; i < n; ++i) s += per_b[i];
        *sumsq_b = s;
    }
}

template <typename T>
void conv2d_forward(const T* x, const T* wgt, const T* bias, T* z, const ConvDims& d) {
    const int64_t ho = d.ho(), wo = d.wo();
    const int64_t xplane = d.h * d.w, zplane = ho * wo;
#pragma omp parallel for schedule(static) if (d.n > 1)
    for (int64_t i = 0; i < d.n; ++i) {
        const T* xi = x + i * d.cin * xplane;
        T* zi = z + i * d.cout * zplane;
        for (int64_t co = 0; co < d.cout; ++co) {
            T* zp = zi + co * zplane;
            const T bv = bias ? bias[co] : T(0);
            for (int64_t e = 0; e < zplane; ++e) zp[e] = bv;
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                const T* xp = xi + ci * xplane;
                const T* wp = wgt + (co * d.cin + ci) * d.k * d.k;
                for (int64_t kh = 0; kh < d.k; ++kh)
                    for (int64_t kw = 0; kw < d.k; ++kw) {
                        const T wv = wp[kh * d.k + kw];
                        for (int64_t y = 0; y < ho; ++y) {
                            const T* xrow = xp + (y + kh) * d.w + kw;
                            T* zrow = zp + y * wo;
                            for (int64_t px = 0; px < wo; ++px) zrow[px] += wv * xrow[px];
                        }
                    }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const T* dz, const T* wgt, T* dx, const ConvDims& d) {
    const int64_t ho = d.ho(), wo = d.wo();
    const int64_t xplane = d.h * d.w, zplane = ho * wo;
#pragma omp parallel for schedule(static) if (d.n > 1)
    for (int64_t i = 0; i < d.n; ++i) {
        const T* dzi = dz + i * d.cout * zplane;
        T* dxi = dx + i * d.cin * xplane;
        for (int64_t e = 0; e < d.cin * xplane; ++e) dxi[e] = T(0);
        for (int64_t co = 0; co < d.cout; ++co) {
            const T* dzp = dzi + co * zplane;
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                T* dxp = dxi + ci * xplane;
                const T* wp = wgt + (co * d.cin + ci) * d.k * d.k;
                for (int64_t kh = 0; kh < d.k; ++kh)
                    for (int64_t kw = 0; kw < d.k; ++kw) {
                        const T wv = wp[kh * d.k + kw];
                        for (int64_t y = 0; y < ho; ++y) {
                            const T* dzrow = dzp + y * wo;
                            T* dxrow = dxp + (y + kh) * d.w + kw;
                            for (int64_t px = 0; px < wo; ++px) dxrow[px] += wv * dzrow[px];
                        }
                    }
            }
        }
    }
}

// shared inner body: unreduced weight/bias gradient of one sample; either
// output may be null to skip that block
template <typename T>
static void conv_sample_grad_body(const T* dzi, const T* xi, T* gw, T* gb,
                                  const ConvDims& d) {
    const int64_t ho = d.ho(), wo = d.wo();
    const int64_t xplane = d.h * d.w, zplane = ho * wo;
    for (int64_t co = 0; co < d.cout; ++co) {
        const T* dzp = dzi + co * zplane;
        if (gb) {
            T s = T(0);
            for (int64_t e = 0; e < zplane; ++e) s += dzp[e];
            gb[co] = s;
        }
        if (!gw) continue;
        for (int64_t ci = 0; ci < d.cin; ++ci) {
            const T* xp = xi + ci * xplane;
            T* gp = gw + (co * d.cin + ci) * d.k * d.k;
            for (int64_t kh = 0; kh < d.k; ++kh)
                for (int64_t kw = 0; kw < d.k; ++kw) {
                    T s = T(0);
                    for (int64_t y = 0; y < ho; ++y) {
                        const T* dzrow = dzp + y * wo;
                        const T* xrow = xp + (y + kh) * d.w + kw;
                        for (int64_t px = 0; px < wo; ++px) s += dzrow[px] * xrow[px];
                    }
                    gp[kh * d.k + kw] = s;
                }
        }
    }
}

template <typename T>
void conv2d_sample_grad(const T* dz, const T* x, T* gw, T* gb, const ConvDims& d,
                        int64_t sample) {
    const int64_t zstride = d.cout * d.ho() * d.wo();
    const int64_t xstride = d.cin * d.h * d.w;
    conv_sample_grad_body(dz + sample * zstride, x + sample * xstride, gw, gb, d);
}

template <typename T>
void conv2d_grad(const T* dz, const T* x, T* gw, T* gb, const ConvDims& d) {
    const int64_t ho = d.ho(), wo = d.wo();
    const int64_t xplane = d.h * d.w, zplane = ho * wo;
    const T invn = T(1) / T(d.n);
#pragma omp parallel for schedule(static) if (d.cout > 1 && d.n * zplane > kParThreshold)
    for (int64_t co = 0; co < d.cout; ++co) {
        T bs = T(0);
        for (int64_t ci = 0; ci < d.cin; ++ci) {
            T* gp = gw + (co * d.cin + ci) * d.k * d.k;
            for (int64_t e = 0; e < d.k * d.k; ++e) gp[e] = T(0);
        }
        for (int64_t i = 0; i < d.n; ++i) {
            const T* dzp = dz + (i * d.cout + co) * zplane;
            for (int64_t e = 0; e < zplane; ++e) bs += dzp[e];
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                const T* xp = x + (i * d.cin + ci) * xplane;
                T* gp = gw + (co * d.cin + ci) * d.k * d.k;
                for (int64_t kh = 0; kh < d.k; ++kh)
                    for (int64_t kw = 0; kw < d.k; ++kw) {
                        T s = T(0);
                        for (int64_t y = 0; y < ho; ++y) {
                            const T* dzrow = dzp + y * wo;
                            const T* xrow = xp + (y + kh) * d.w + kw;
                            for (int64_t px = 0; px < wo; ++px) s += dzrow[px] * xrow[px];
                        }
                        gp[kh * d.k + kw] += s;
                    }
            }
        }
        for (int64_t ci = 0; ci < d.cin; ++ci) {
            T* gp = gw + (co * d.cin + ci) * d.k * d.k;
            for (int64_t e = 0; e < d.k * d.k; ++e) gp[e] *= invn;
        }
        gb[co] = bs * invn;
    }
}

template <typename T>
void conv2d_per_sample_sumsq(const T* dz, const T* x, const T* hinv_w, const T* hinv_b,
                             const ConvDims& d, T* scratch, double* sumsq_w,
                             double* sumsq_b) {
    const int64_t pw = d.weight_count();
    const int64_t zstride = d.cout * d.ho() * d.wo();
    const int64_t xstride = d.cin * d.h * d.w;
    std::vector<double> per_w(sumsq_w ? d.n : 0), per_b(sumsq_b ? d.n : 0);
#pragma omp parallel if (d.n > 1 && sumsq_w)
    {
        std::vector<T> gb_loc(static_cast<size_t>(sumsq_b ? d.cout : 0));
        T* gw = sumsq_w ? scratch : nullptr;
#ifdef _OPENMP
        // each thread needs its own weight-gradient scratch
        std::vector<T> gw_loc(static_cast<size_t>(sumsq_w ? pw : 0));
        if (sumsq_w) gw = gw_loc.data();
#endif
#pragma omp for schedule(static)
        for (int64_t i = 0; i < d.n; ++i) {
            conv_sample_grad_body(dz + i * zstride, x + i * xstride, gw,
                                  sumsq_b ? gb_loc.data() : nullptr, d);
            if (sumsq_w) {
                double acc = 0;
                if (hinv_w)
                    for (int64_t e = 0; e < pw; ++e)
                        acc += double(gw[e]) * double(gw[e]) * double(hinv_w[e]);
                else
                    for (int64_t e = 0; e < pw; ++e) acc += double(gw[e]) * double(gw[e]);
                per_w[i] = acc;
            }
            if (sumsq_b) {
                double acc = 0;
                for (int64_t co = 0; co < d.cout; ++co) {
                    const double g = double(gb_loc[co]);
                    acc += hinv_b ? g * g * double(hinv_b[co]) : g * g;
                }
                per_b[i] = acc;
            }
        }
    }
    if (sumsq_w) {
        double s = 0;
        for (int64_t i = 0; i < d.n; ++i) s += per_w[i];
        *sumsq_w = s;
    }
    if (sumsq_b) {
        double s = 0;
        for (int64_t i = 0; i < d.n; ++i) s += per_b[i];
        *sumsq_b = s;
    }
}

template <typename T>
void relu_forward(const T* x, T* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParThreshold)
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* dy, const T* x, T* dx, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParThreshold)
    for (int64_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void maxpool_forward(const T* x, T* y, int32_t* argmax, int64_t n, int64_t c, int64_t h,
                     int64_t w, int64_t k) {
    const int64_t ho = h / k, wo = w / k;
    const int64_t planes = n * c;
#pragma omp parallel for schedule(static) if (planes * ho * wo > kParThreshold)
    for (int64_t p = 0; p < planes; ++p) {
        const T* xp = x + p * h * w;
        T* yp = y + p * ho * wo;
        int32_t* ap = argmax + p * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                int64_t best = oy * k * w + ox * k;
                T bv = xp[best];
                for (int64_t dy = 0; dy < k; ++dy)
                    for (int64_t dx_ = 0; dx_ < k; ++dx_) {
                        const int64_t off = (oy * k + dy) * w + ox * k + dx_;
                        if (xp[off] > bv) {  // strict: ties keep the lowest index
                            bv = xp[off];
                            best = off;
                        }
                    }
                yp[oy * wo + ox] = bv;
                ap[oy * wo + ox] = static_cast<int32_t>(best);
            }
    }
}

template <typename T>
void maxpool_backward(const T* dy, const int32_t* argmax, T* dx, int64_t n, int64_t c,
                      int64_t h, int64_t w, int64_t k) {
    const int64_t ho = h / k, wo = w / k;
    const int64_t planes = n * c;
#pragma omp parallel for schedule(static) if (planes * ho * wo > kParThreshold)
    for (int64_t p = 0; p < planes; ++p) {
        T* dxp = dx + p * h * w;
        for (int64_t e = 0; e < h * w; ++e) dxp[e] = T(0);
        const T* dyp = dy + p * ho * wo;
        const int32_t* ap = argmax + p * ho * wo;
        for (int64_t e = 0; e < ho * wo; ++e) dxp[ap[e]] += dyp[e];
    }
}

template <typename T>
void logsoftmax_forward(const T* x, T* y, int64_t n, int64_t c) {
#pragma omp parallel for schedule(static) if (n * c > kParThreshold)
    for (int64_t i = 0; i < n; ++i) {
        const T* xi = x + i * c;
        T* yi = y + i * c;
        T mx = xi[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
        double s = 0;
        for (int64_t j = 0; j < c; ++j) s += std::exp(double(xi[j] - mx));
        const T lse = mx + T(std::log(s));
        for (int64_t j = 0; j < c; ++j) yi[j] = xi[j] - lse;
    }
}

template <typename T>
void logsoftmax_backward(const T* dy, const T* y, T* dx, int64_t n, int64_t c) {
#pragma omp parallel for schedule(static) if (n * c > kParThreshold)
    for (int64_t i = 0; i < n; ++i) {
        const T* dyi = dy + i * c;
        const T* yi = y + i * c;
        T* dxi = dx + i * c;
        double s = 0;
        for (int64_t j = 0; j < c; ++j) s += double(dyi[j]);
        for (int64_t j = 0; j < c; ++j) dxi[j] = dyi[j] - T(std::exp(double(yi[j])) * s);
    }
}

#define AUTOOPT_INSTANTIATE_KERNELS(T)                                                       \
    template void matmul(const T*, const T*, T*, int64_t, int64_t, int64_t);                 \
    template void dense_forward(const T*, const T*, const T*, T*, int64_t, int64_t,          \
                                int64_t);                                                    \
    template void dense_backward_input(const T*, const T*, T*, int64_t, int64_t, int64_t);   \
    template void dense_grad(const T*, const T*, T*, T*, int64_t, int64_t, int64_t);         \
    template void dense_per_sample_sumsq(const T*, const T*, const T*, const T*, int64_t,    \
                                         int64_t, int64_t, double*, double*);                \
    template void conv2d_forward(const T*, const T*, const T*, T*, const ConvDims&);         \
    template void conv2d_backward_input(const T*, const T*, T*, const ConvDims&);            \
    template void conv2d_grad(const T*, const T*, T*, T*, const ConvDims&);                  \
    template void conv2d_sample_grad(const T*, const T*, T*, T*, const ConvDims&, int64_t);  \
    template void conv2d_per_sample_sumsq(const T*, const T*, const T*, const T*,            \
                                          const ConvDims&, T*, double*, double*);            \
    template void relu_forward(const T*, T*, int64_t);                                       \
    template void relu_backward(const T*, const T*, T*, int64_t);                            \
    template void maxpool_forward(const T*, T*, int32_t*, int64_t, int64_t, int64_t,         \
                                  int64_t, int64_t);                                         \
    template void maxpool_backward(const T*, const int32_t*, T*, int64_t, int64_t, int64_t,  \
                                   int64_t, int64_t);                                        \
    template void logsoftmax_forward(const T*, T*, int64_t, int64_t);                        \
    template void logsoftmax_backward(const T*, const T*, T*, int64_t, int64_t);

AUTOOPT_INSTANTIATE_KERNELS(float)
AUTOOPT_INSTANTIATE_KERNELS(double)

}  // namespace autoopt::kernels

namespace autoopt {

template <typename T>
Tens<T> matmul(const Tens<T>& a, const Tens<T>& b) {
    if (a.dim() != 2 || b.dim() != 2) throw std::invalid_argument("matmul: 2-D tensors required");
    if (a.shape[1] != b.shape[0]) throw std::invalid_argument("matmul: inner dimensions differ");
    Tens<T> c({a.shape[0], b.shape[1]});
    kernels::matmul(a.ptr(), b.ptr(), c.ptr(), a.shape[0], a.shape[1], b.shape[1]);
    return c;
}

template Tens<float> matmul(const Tens<float>&, const Tens<float>&);
template Tens<double> matmul(const Tens<double>&, const Tens<double>&);

}  // namespace autoopt
