#pragma once

#include <cstdint>
#include <string>

#include "autoopt/linalg2.hpp"
#include "autoopt/tensor.hpp"

namespace autoopt {

enum class OptKind { sgd, sgd_momentum, adam, adagrad };

OptKind opt_kind_from_string(const std::string& s);
std::string to_string(OptKind k);

struct OptHyper {
    double beta2 = 0.99;  // second-moment smoothing (adam)
    double eps = 1e-8;    // curvature floor (adam, adagrad)
};

template <typename T>
struct OptState {
    int64_t step = 0;
    Tens<T> momentum;       // ghat_{t-1}; empty until the first momentum_gradient call
    Tens<T> second_moment;  // adam: EWMA of g^2; adagrad: running sum of g^2
};

// Diagonal of the curvature proxy H_t for the step `state.step` (which the
// caller advances beforehand). Updates the second-moment buffer exactly once.
// `beta` is the currently active smoothed momentum coefficient, entering only
// Adam's (1 - beta^t) factor.
//   sgd / sgd_momentum: all ones
//   adam:    (1 - beta^t) * (sqrt(v_t / (1 - beta2^t)) + eps),
//            v_t = (1 - beta2) g^2 + beta2 v_{t-1}
//   adagrad: sqrt(sum_t g^2) + eps
template <typename T>
Tens<T> hessian_diag(OptKind kind, const OptHyper& h, OptState<T>& state, const Tens<T>& g,
                     double beta);

// ghat_t = (1 - gamma1 - gamma2) g_t + gamma2 ghat_{t-1}; the result becomes the
// stored buffer and is returned by reference.
template <typename T>
const Tens<T>& momentum_gradient(OptState<T>& state, const Tens<T>& g, const Vec2& gamma);

// w -= ghat / hdiag, elementwise
template <typename T>
void apply_update(Tens<T>& w, const Tens<T>& ghat, const Tens<T>& hdiag);

// gamma vector realizing a fixed textbook setting: gamma1 = 1 - alpha,
// gamma2 = beta * alpha (so beta = gamma2 / (1 - gamma1))
Vec2 classic_gamma(double alpha, double beta);

}  // namespace autoopt
