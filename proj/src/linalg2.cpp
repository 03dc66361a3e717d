#include "autoopt/linalg2.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace autoopt {

Vec2 solve2(const Mat2& a, const Vec2& b, double ridge) {
    if (ridge < 0) throw std::invalid_argument("solve2: ridge must be >= 0");
    const double a11 = a.a11 + ridge;
    const double a22 = a.a22 + ridge;
    const double a12 = a.a12;
    const double det = a11 * a22 - a12 * a12;
    const double scale = std::max({std::abs(a11 * a22), std::abs(a12 * a12), 1e-300});
    if (std::abs(det) <= 16 * std::numeric_limits<double>::epsilon() * scale)
        throw std::runtime_error("solve2: singular system");
    return Vec2{(a22 * b.x - a12 * b.y) / det, (a11 * b.y - a12 * b.x) / det};
}

static void require_square(const Tensor& a, const char* what) {
    if (a.dim() != 2 || a.shape[0] != a.shape[1])
        throw std::invalid_argument(std::string(what) + ": square matrix required");
}

Tensor cholesky(const Tensor& a) {
    require_square(a, "cholesky");
    const int64_t p = a.shape[0];
    double max_diag = 0;
    for (int64_t i = 0; i < p; ++i) max_diag = std::max(max_diag, std::abs(a.at2(i, i)));
    const double tol = 1e-12 * std::max(max_diag, 1e-300);

    Tensor l({p, p});
    for (int64_t j = 0; j < p; ++j) {
        double d = a.at2(j, j);
        for (int64_t k = 0; k < j; ++k) d -= l.at2(j, k) * l.at2(j, k);
        if (d < -tol) throw std::runtime_error("cholesky: matrix is not positive semidefinite");
        if (d <= tol) {
            // PSD rank deficiency: null column
            for (int64_t i = j; i < p; ++i) l.at2(i, j) = 0;
            continue;
        }
        const double root = std::sqrt(d);
        l.at2(j, j) = root;
        for (int64_t i = j + 1; i < p; ++i) {
            double s = a.at2(i, j);
            for (int64_t k = 0; k < j; ++k) s -= l.at2(i, k) * l.at2(j, k);
            l.at2(i, j) = s / root;
        }
    }
    return l;
}

Tensor chol_multiply(const Tensor& l, const Tensor& x) {
    require_square(l, "chol_multiply");
    const int64_t p = l.shape[0];
    if (x.numel() != p) throw std::invalid_argument("chol_multiply: size mismatch");
    Tensor y({p});
    for (int64_t i = 0; i < p; ++i) {
        double s = 0;
        for (int64_t k = 0; k <= i; ++k) s += l.at2(i, k) * x[k];
        y[i] = s;
    }
    return y;
}

Tensor chol_forward_solve(const Tensor& l, const Tensor& b) {
    require_square(l, "chol_forward_solve");
    const int64_t p = l.shape[0];
    if (b.numel() != p) throw std::invalid_argument("chol_forward_solve: size mismatch");
    Tensor y({p});
    for (int64_t i = 0; i < p; ++i) {
        double s = b[i];
        for (int64_t k = 0; k < i; ++k) s -= l.at2(i, k) * y[k];
        const double d = l.at2(i, i);
        if (d == 0) {
            if (std::abs(s) > 1e-10 * std::max(1.0, std::abs(b[i])))
                throw std::runtime_error("chol_forward_solve: inconsistent rank-deficient system");
            y[i] = 0;
        } else {
            y[i] = s / d;
        }
    }
    return y;
}

Tensor chol_solve(const Tensor& l, const Tensor& b) {
    const int64_t p = l.shape[0];
    Tensor y = chol_forward_solve(l, b);
    // back substitution with L^T
    Tensor x({p});
    for (int64_t i = p - 1; i >= 0; --i) {
        double s = y[i];
        for (int64_t k = i + 1; k < p; ++k) s -= l.at2(k, i) * x[k];
        const double d = l.at2(i, i);
        if (d == 0) {
            if (std::abs(s) > 1e-10)
                throw std::runtime_error("chol_solve: inconsistent rank-deficient system");
            x[i] = 0;
        } else {
            x[i] = s / d;
        }
    }
    return x;
}

}  // namespace autoopt
