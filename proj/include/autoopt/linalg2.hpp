#pragma once

#include <array>
#include <cstdint>

#include "autoopt/tensor.hpp"

namespace autoopt {

struct Vec2 {
    double x = 0, y = 0;
    double& operator[](int i) { return i == 0 ? x : y; }
    double operator[](int i) const { return i == 0 ? x : y; }
};

// symmetric 2x2
struct Mat2 {
    double a11 = 0, a12 = 0, a22 = 0;
    double trace() const { return a11 + a22; }
};

// Solves (A + ridge*I) x = b for symmetric 2x2 A. `ridge` is the absolute
// diagonal shift (callers scale it by trace(A)/2 beforehand). Throws
// std::runtime_error if the shifted matrix is still singular at machine
// precision relative to its entries.
Vec2 solve2(const Mat2& a, const Vec2& b, double ridge);

// Cholesky factor of a small dense SPD/PSD matrix (row-major p x p): returns
// lower-triangular L with A = L L^T. Pivots below tol * max_diag are treated
// as zero (PSD rank deficiency); negative pivots beyond tolerance throw.
Tensor cholesky(const Tensor& a);

// y = L x  (L lower-triangular p x p)
Tensor chol_multiply(const Tensor& l, const Tensor& x);

// solves L y = b (forward substitution); zero pivot => requires zero rhs
// component (PSD case), else throws
Tensor chol_forward_solve(const Tensor& l, const Tensor& b);

// solves (L L^T) x = b
Tensor chol_solve(const Tensor& l, const Tensor& b);

}  // namespace autoopt
