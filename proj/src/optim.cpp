#include "autoopt/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace autoopt {

OptKind opt_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptKind::sgd;
    if (s == "sgd_momentum") return OptKind::sgd_momentum;
    if (s == "adam") return OptKind::adam;
    if (s == "adagrad") return OptKind::adagrad;
    throw std::invalid_argument("unknown optimizer: " + s);
}

std::string to_string(OptKind k) {
    switch (k) {
        case OptKind::sgd: return "sgd";
        case OptKind::sgd_momentum: return "sgd_momentum";
        case OptKind::adam: return "adam";
        case OptKind::adagrad: return "adagrad";
    }
    return "?";
}

template <typename T>
Tens<T> hessian_diag(OptKind kind, const OptHyper& h, OptState<T>& state, const Tens<T>& g,
                     double beta) {
    if (state.step < 1)
        throw std::runtime_error("hessian_diag: step counter must be advanced first");
    if (h.eps <= 0 || h.beta2 <= 0 || h.beta2 >= 1)
        throw std::invalid_argument("hessian_diag: need eps > 0 and beta2 in (0,1)");
    if (beta < 0 || beta >= 1)
        throw std::invalid_argument("hessian_diag: beta must lie in [0,1)");

    Tens<T> hd(g.shape);
    switch (kind) {
        case OptKind::sgd:
        case OptKind::sgd_momentum:
            hd.fill(T(1));
            break;
        case OptKind::adam: {
            if (state.second_moment.numel() == 0) state.second_moment = zeros_like(g);
            if (!state.second_moment.same_shape(g))
                throw std::invalid_argument("hessian_diag: gradient shape changed");
            const double t = double(state.step);
            const double corr = 1.0 - std::pow(h.beta2, t);
            const double scale = 1.0 - std::pow(beta, t);
            T* v = state.second_moment.ptr();
            const T* gp = g.ptr();
            for (int64_t i = 0; i < g.numel(); ++i) {
                v[i] = T((1.0 - h.beta2) * double(gp[i]) * double(gp[i]) +
                         h.beta2 * double(v[i]));
                hd[i] = T(scale * (std::sqrt(double(v[i]) / corr) + h.eps));
            }
            break;
        }
        case OptKind::adagrad: {
            if (state.second_moment.numel() == 0) state.second_moment = zeros_like(g);
            if (!state.second_moment.same_shape(g))
                throw std::invalid_argument("hessian_diag: gradient shape changed");
            T* v = state.second_moment.ptr();
            const T* gp = g.ptr();
            for (int64_t i = 0; i < g.numel(); ++i) {
                v[i] = T(double(v[i]) + double(gp[i]) * double(gp[i]));
                hd[i] = T(std::sqrt(double(v[i])) + h.eps);
            }
            break;
        }
    }
    check_finite(hd, "curvature diagonal");
    return hd;
}

template <typename T>
const Tens<T>& momentum_gradient(OptState<T>& state, const Tens<T>& g, const Vec2& gamma) {
    const T c1 = T(1.0 - gamma.x - gamma.y);
    const T c2 = T(gamma.y);
    if (state.momentum.numel() == 0) {
        state.momentum = zeros_like(g);  // ghat_0 = 0
    } else if (!state.momentum.same_shape(g)) {
        throw std::invalid_argument("momentum_gradient: gradient shape changed");
    }
    T* m = state.momentum.ptr();
    const T* gp = g.ptr();
    for (int64_t i = 0; i < g.numel(); ++i) m[i] = c1 * gp[i] + c2 * m[i];
    return state.momentum;
}

template <typename T>
void apply_update(Tens<T>& w, const Tens<T>& ghat, const Tens<T>& hdiag) {
    if (!w.same_shape(ghat) || !w.same_shape(hdiag))
        throw std::invalid_argument("apply_update: shape mismatch");
    T* wp = w.ptr();
    const T* gp = ghat.ptr();
    const T* hp = hdiag.ptr();
    for (int64_t i = 0; i < w.numel(); ++i) wp[i] -= gp[i] / hp[i];
    check_finite(w, "updated parameters");
}

Vec2 classic_gamma(double alpha, double beta) { return Vec2{1.0 - alpha, beta * alpha}; }

#define AUTOOPT_INSTANTIATE_OPTIM(T)                                                      \
    template Tens<T> hessian_diag(OptKind, const OptHyper&, OptState<T>&, const Tens<T>&, \
                                  double);                                                \
    template const Tens<T>& momentum_gradient(OptState<T>&, const Tens<T>&, const Vec2&); \
    template void apply_update(Tens<T>&, const Tens<T>&, const Tens<T>&);

AUTOOPT_INSTANTIATE_OPTIM(float)
AUTOOPT_INSTANTIATE_OPTIM(double)

}  // namespace autoopt
