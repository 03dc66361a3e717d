#include "autoopt/controller.hpp"

#include <cmath>
#include <stdexcept>

namespace autoopt {

void ControllerConfig::validate() const {
    if (upsilon < 0 || upsilon >= 1)
        throw std::invalid_argument("controller: upsilon must lie in [0,1)");
    if (ridge < 0) throw std::invalid_argument("controller: ridge must be >= 0");
    if (clamp.alpha_min <= 0 || clamp.alpha_min > clamp.alpha_max)
        throw std::invalid_argument("controller: need 0 < alpha_min <= alpha_max");
    if (clamp.beta_max < 0 || clamp.beta_max >= 1)
        throw std::invalid_argument("controller: beta_max must lie in [0,1)");
    if (init_alpha < clamp.alpha_min || init_alpha > clamp.alpha_max)
        throw std::invalid_argument("controller: init_alpha outside the clamp box");
    if (warmup_steps < 0) throw std::invalid_argument("controller: warmup_steps must be >= 0");
    if (ident_threshold < 0 || ident_threshold >= 1)
        throw std::invalid_argument("controller: ident_threshold must lie in [0,1)");
}

ControllerConfig controller_defaults(OptKind kind) {
    ControllerConfig cfg;
    if (kind == OptKind::sgd) {
        cfg.clamp.alpha_max = 10.0;
        cfg.init_alpha = 0.01;
    } else {
        cfg.clamp.alpha_max = 1.0;
        cfg.init_alpha = 0.001;
    }
    return cfg;
}

double compute_v_hat(double per_sample_sumsq, double g_hinv_g, int64_t n, uint32_t* flags) {
    if (n < 2) throw std::invalid_argument("compute_v_hat: needs at least two samples");
    if (!std::isfinite(per_sample_sumsq) || !std::isfinite(g_hinv_g))
        throw std::runtime_error("compute_v_hat: non-finite inputs");
    double v = (per_sample_sumsq - double(n) * g_hinv_g) / (double(n) * double(n - 1));
    if (v < 0) {
        v = 0;
        if (flags) *flags |= kFlagVhatClamped;
    }
    return v;
}

template <typename T>
Mat2 compute_a_hat(const Tens<T>& g, const Tens<T>& m_prev, const Tens<T>* hdiag) {
    const bool has_m = m_prev.numel() != 0;
    if (has_m && !m_prev.same_shape(g))
        throw std::invalid_argument("compute_a_hat: momentum shape mismatch");
    if (hdiag && !hdiag->same_shape(g))
        throw std::invalid_argument("compute_a_hat: preconditioner shape mismatch");
    const T* gp = g.ptr();
    const T* mp = has_m ? m_prev.ptr() : nullptr;
    const T* hp = hdiag ? hdiag->ptr() : nullptr;
    double a11 = 0, a12 = 0, a22 = 0;
    for (int64_t i = 0; i < g.numel(); ++i) {
        const double gv = double(gp[i]);
        const double dv = gv - (mp ? double(mp[i]) : 0.0);
        const double w = hp ? 1.0 / double(hp[i]) : 1.0;
        a11 += gv * gv * w;
        a12 += gv * dv * w;
        a22 += dv * dv * w;
    }
    return Mat2{a11, a12, a22};
}

Vec2 compute_b_hat(double v_hat) { return Vec2{v_hat, v_hat}; }

Vec2 solve_gamma(const Mat2& a, const Vec2& b, const ControllerConfig& cfg,
                 GammaSolveMode mode, const Vec2& prev_ewma, uint32_t* flags) {
    if (mode == GammaSolveMode::alpha_only) {
        const double denom = a.a11 * (1.0 + cfg.ridge);
        if (!(denom > 0) || !std::isfinite(denom)) {
            if (flags) *flags |= kFlagSingular;
            return prev_ewma;
        }
        return Vec2{b.x / denom, 0.0};
    }
    try {
        return solve2(a, b, cfg.ridge * a.trace() / 2.0);
    } catch (const std::runtime_error&) {
        if (flags) *flags |= kFlagSingular;
        return prev_ewma;
    }
}

void ewma_update(GammaState& state, const Vec2& raw, double upsilon) {
    state.gamma_ewma.x = (1.0 - upsilon) * raw.x + upsilon * state.gamma_ewma.x;
    state.gamma_ewma.y = (1.0 - upsilon) * raw.y + upsilon * state.gamma_ewma.y;
}

void clamp_and_convert(GammaState& state, const ClampConfig& clamp, uint32_t* flags) {
    double alpha = 1.0 - state.gamma_ewma.x;
    if (alpha < clamp.alpha_min) {
        alpha = clamp.alpha_min;
        if (flags) *flags |= kFlagAlphaClamped;
    } else if (alpha > clamp.alpha_max) {
        alpha = clamp.alpha_max;
        if (flags) *flags |= kFlagAlphaClamped;
    }
    double beta = state.gamma_ewma.y / alpha;
    // beta_max also caps gamma2 = beta * alpha: the smoothed-gradient recursion
    // ghat_t = c1 g_t + gamma2 ghat_{t-1} must keep gamma2 < 1 to stay an
    // exponentially weighted average, even when alpha exceeds one
    const double beta_cap = clamp.beta_max / std::max(alpha, 1.0);
    if (beta < 0) {
        beta = 0;
        if (flags) *flags |= kFlagBetaClamped;
    } else if (beta > beta_cap) {
        beta = beta_cap;
        if (flags) *flags |= kFlagBetaClamped;
    }
    state.gamma_ewma = Vec2{1.0 - alpha, beta * alpha};
    state.alpha = alpha;
    state.beta = beta;
}

Vec2 project_gamma(const Vec2& raw, const ClampConfig& clamp, uint32_t* flags) {
    // The window is symmetric about alpha = 0 and beta = 0 on purpose: a raw
    // estimate is one noisy vote, and censoring the negative half of the
    // noise would bias the (linear) EWMA upward. Feasibility of the applied
    // values is enforced after smoothing by clamp_and_convert.
    const double h = std::min(clamp.alpha_max, 1.0);
    Vec2 out{std::clamp(raw.x, 1.0 - h, 1.0 + h),
             std::clamp(raw.y, -clamp.beta_max, clamp.beta_max)};
    if ((out.x != raw.x || out.y != raw.y) && flags) *flags |= kFlagRawClamped;
    return out;
}

template <typename T>
TraceRecord autoopt_step(std::vector<UnitMember<T>>& members, GammaState& gs, OptKind kind,
                         const OptHyper& oh, const ControllerConfig& cfg, int64_t batch_n,
                         const std::function<double(size_t, const Tens<T>&)>& sumsq_fn,
                         const std::string& group_name) {
    if (members.empty()) throw std::invalid_argument("autoopt_step: empty unit");
    cfg.validate();

    uint32_t flags = 0;
    for (auto& m : members) ++m.opt->step;
    const int64_t t = members[0].opt->step;
    for (auto& m : members)
        if (m.opt->step != t) throw std::runtime_error("autoopt_step: unit steps diverged");

    // curvature first (needs only the batch gradient), then statistics against it
    std::vector<Tens<T>> hd;
    hd.reserve(members.size());
    for (auto& m : members) hd.push_back(hessian_diag(kind, oh, *m.opt, *m.grad, gs.beta));

    double sumsq = 0;
    for (size_t i = 0; i < members.size(); ++i) sumsq += sumsq_fn(i, hd[i]);

    Mat2 a{0, 0, 0};
    for (size_t i = 0; i < members.size(); ++i) {
        const Mat2 part = compute_a_hat(*members[i].grad, members[i].opt->momentum, &hd[i]);
        a.a11 += part.a11;
        a.a12 += part.a12;
        a.a22 += part.a22;
    }

    const double v_hat = compute_v_hat(sumsq, a.a11, batch_n, &flags);
    const Vec2 b = compute_b_hat(v_hat);

    if (t <= cfg.warmup_steps) {
        flags |= kFlagWarmup;
        gs.gamma_raw = gs.gamma_ewma;
        // Plain preconditioned step with the initial gamma, through a scratch
        // state so the momentum buffer stays empty. The first solved step then
        // sees ghat_prev = 0 (rank-1 system, minimum-norm solution) instead of
        // a tiny init_alpha-scaled buffer: reusing that buffer's information
        // is worth gamma2 ~ 1/init_alpha to the one-step objective, which
        // pins the clamps and destabilizes training.
        for (size_t i = 0; i < members.size(); ++i) {
            OptState<T> scratch;
            const Tens<T>& ghat =
                momentum_gradient(scratch, *members[i].grad, gs.gamma_ewma);
            apply_update(*members[i].value, ghat, hd[i]);
        }
    } else {
        const GammaSolveMode mode =
            (kind == OptKind::adagrad && cfg.adagrad_mode == AdaGradMode::alpha_only)
                ? GammaSolveMode::alpha_only
                : GammaSolveMode::full;
        // Identifiability gate: the momentum buffer starts empty and then
        // carries applied-update scale, so early on the two G columns are
        // near-collinear, det(A) ~ |m|^2, and the full solve returns a
        // gamma2 proportional to 1/|m| (amplified sampling noise) balanced
        // by a wildly negative gamma1. Those estimates are persistent, not
        // zero-mean, and no EWMA factor filters them. Until the columns
        // separate, re-estimate gamma1 alone around the smoothed gamma2.
        const double det = a.a11 * a.a22 - a.a12 * a.a12;
        const bool identified = det > cfg.ident_threshold * a.a11 * a.a22;
        Vec2 raw;
        if (mode == GammaSolveMode::full && !identified) {
            flags |= kFlagGated;
            const double denom = a.a11 * (1.0 + cfg.ridge);
            if (!(denom > 0) || !std::isfinite(denom)) {
                flags |= kFlagSingular;
                raw = gs.gamma_ewma;
            } else {
                raw = Vec2{(b.x - a.a12 * gs.gamma_ewma.y) / denom, gs.gamma_ewma.y};
            }
        } else {
            raw = solve_gamma(a, b, cfg, mode, gs.gamma_ewma, &flags);
        }
        if (!(flags & kFlagSingular)) {
            gs.gamma_raw = raw;
            ewma_update(gs, project_gamma(raw, cfg.clamp, &flags), cfg.upsilon);
        }
        clamp_and_convert(gs, cfg.clamp, &flags);

        for (size_t i = 0; i < members.size(); ++i) {
            const Tens<T>& ghat = momentum_gradient(*members[i].opt, *members[i].grad,
                                                    gs.gamma_ewma);
            apply_update(*members[i].value, ghat, hd[i]);
        }
    }

    return TraceRecord{t,          group_name, gs.alpha, gs.beta, gs.gamma_ewma.x,
                       gs.gamma_ewma.y, v_hat,  a.a11,    a.a12,   a.a22,
                       flags};
}

template <typename T>
void fixed_step(std::vector<UnitMember<T>>& members, OptKind kind, const OptHyper& oh,
                double alpha, double beta) {
    if (members.empty()) throw std::invalid_argument("fixed_step: empty unit");
    const Vec2 gamma = classic_gamma(alpha, beta);
    for (auto& m : members) {
        ++m.opt->step;
        const Tens<T> hd = hessian_diag(kind, oh, *m.opt, *m.grad, beta);
        const Tens<T>& ghat = momentum_gradient(*m.opt, *m.grad, gamma);
        apply_update(*m.value, ghat, hd);
    }
}

#define AUTOOPT_INSTANTIATE_CONTROLLER(T)                                                    \
    template Mat2 compute_a_hat(const Tens<T>&, const Tens<T>&, const Tens<T>*);             \
    template TraceRecord autoopt_step(std::vector<UnitMember<T>>&, GammaState&, OptKind,     \
                                      const OptHyper&, const ControllerConfig&, int64_t,     \
                                      const std::function<double(size_t, const Tens<T>&)>&,  \
                                      const std::string&);                                   \
    template void fixed_step(std::vector<UnitMember<T>>&, OptKind, const OptHyper&, double,  \
                             double);

AUTOOPT_INSTANTIATE_CONTROLLER(float)
AUTOOPT_INSTANTIATE_CONTROLLER(double)

}  // namespace autoopt
