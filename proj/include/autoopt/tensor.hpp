#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace autoopt {

inline int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive");
        n *= e;
    }
    return n;
}

// Dense row-major tensor. Training runs default to T = double; the engine is
// also instantiated for float (selected per run via --precision f32).
template <typename T>
struct Tens {
    std::vector<int64_t> shape;
    std::vector<T> data;

    Tens() = default;
    explicit Tens(std::vector<int64_t> s)
        : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), T(0)) {}
    Tens(std::vector<int64_t> s, T fill)
        : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), fill) {}

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    T operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    int64_t dim() const { return static_cast<int64_t>(shape.size()); }

    // bounds-unchecked row-major accessors for cold paths and tests
    T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T& at4(int64_t a, int64_t b, int64_t c, int64_t d) {
        return data[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }
    T at4(int64_t a, int64_t b, int64_t c, int64_t d) const {
        return data[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tens& o) const { return shape == o.shape; }
};

using Tensor = Tens<double>;

template <typename T>
Tens<T> zeros_like(const Tens<T>& t) {
    return Tens<T>(t.shape);
}

template <typename T>
void check_finite(const Tens<T>& t, const std::string& what) {
    for (const T& v : t.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw std::runtime_error("non-finite value in " + what);
}

// plain dot product, accumulated in double regardless of T
template <typename T>
double dot(const Tens<T>& a, const Tens<T>& b) {
    if (a.numel() != b.numel()) throw std::invalid_argument("dot: size mismatch");
    double s = 0;
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    for (int64_t i = 0; i < a.numel(); ++i) s += double(pa[i]) * double(pb[i]);
    return s;
}

// <a, b> weighted by the inverse of a diagonal preconditioner: sum a_i b_i / h_i.
// hdiag == nullptr means identity. Accumulates in double.
template <typename T>
double weighted_dot(const Tens<T>& a, const Tens<T>& b, const Tens<T>* hdiag) {
    if (a.numel() != b.numel()) throw std::invalid_argument("weighted_dot: size mismatch");
    if (hdiag && hdiag->numel() != a.numel())
        throw std::invalid_argument("weighted_dot: preconditioner size mismatch");
    double s = 0;
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    if (!hdiag) {
        for (int64_t i = 0; i < a.numel(); ++i) s += double(pa[i]) * double(pb[i]);
    } else {
        const T* ph = hdiag->ptr();
        for (int64_t i = 0; i < a.numel(); ++i)
            s += double(pa[i]) * double(pb[i]) / double(ph[i]);
    }
    return s;
}

}  // namespace autoopt
