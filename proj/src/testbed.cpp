#include "autoopt/testbed.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace autoopt {

namespace {

constexpr double kOracleRidge = 1e-10;  // relative; breaks rank-1 ties only

Tensor sym_matvec(const Tensor& a, const Tensor& x) {
    const int64_t p = x.numel();
    Tensor y({p});
    const double* ap = a.ptr();
    for (int64_t i = 0; i < p; ++i) {
        double acc = 0;
        for (int64_t j = 0; j < p; ++j) acc += ap[i * p + j] * x[j];
        y[i] = acc;
    }
    return y;
}

void check_square_symmetric(const Tensor& a, int64_t p, const char* what) {
    if (a.dim() != 2 || a.shape[0] != p || a.shape[1] != p)
        throw std::invalid_argument(std::string("quadratic testbed: ") + what +
                                    " must be p x p");
    double scale = 0;
    for (const double v : a.data) scale = std::max(scale, std::abs(v));
    for (int64_t i = 0; i < p; ++i)
        for (int64_t j = i + 1; j < p; ++j)
            if (std::abs(a.at2(i, j) - a.at2(j, i)) > 1e-12 * std::max(1.0, scale))
                throw std::invalid_argument(std::string("quadratic testbed: ") + what +
                                            " must be symmetric");
}

}  // namespace

void QuadraticProblem::finalize() {
    const int64_t p = dim();
    if (p <= 0 || w_star.dim() != 1)
        throw std::invalid_argument("quadratic testbed: w_star must be a vector");
    check_square_symmetric(hessian, p, "hessian");
    check_square_symmetric(noise_cov, p, "noise_cov");
    chol_h = cholesky(hessian);
    for (int64_t i = 0; i < p; ++i)
        if (!(chol_h.at2(i, i) > 0))
            throw std::invalid_argument("quadratic testbed: hessian must be positive definite");
    chol_noise = cholesky(noise_cov);  // PSD: zero pivots allowed
}

QuadraticProblem random_spd_problem(int64_t p, uint64_t seed, double noise_scale) {
    if (p < 1) throw std::invalid_argument("random_spd_problem: p must be >= 1");
    if (noise_scale < 0) throw std::invalid_argument("random_spd_problem: negative noise scale");
    Rng rng = Rng(seed).derive(0x5bd1e995u);
    QuadraticProblem prob;
    prob.seed = seed;
    prob.w_star = Tensor({p});
    for (auto& v : prob.w_star.data) v = rng.next_normal();

    auto gram = [&](double diag) {
        Tensor z({p, p});
        for (auto& v : z.data) v = rng.next_normal();
        Tensor out({p, p});
        for (int64_t i = 0; i < p; ++i)
            for (int64_t j = 0; j <= i; ++j) {
                double acc = 0;
                for (int64_t k = 0; k < p; ++k) acc += z.at2(k, i) * z.at2(k, j);
                out.at2(i, j) = out.at2(j, i) = acc / double(p) + (i == j ? diag : 0.0);
            }
        return out;
    };
    prob.hessian = gram(0.1);
    prob.noise_cov = gram(0.1);
    for (auto& v : prob.noise_cov.data) v *= noise_scale * noise_scale;
    prob.finalize();
    return prob;
}

double loss(const QuadraticProblem& prob, const Tensor& w) {
    const int64_t p = prob.dim();
    Tensor d({p});
    for (int64_t i = 0; i < p; ++i) d[i] = w[i] - prob.w_star[i];
    return 0.5 * dot(d, sym_matvec(prob.hessian, d));
}

Tensor true_gradient(const QuadraticProblem& prob, const Tensor& w) {
    const int64_t p = prob.dim();
    Tensor d({p});
    for (int64_t i = 0; i < p; ++i) d[i] = w[i] - prob.w_star[i];
    return sym_matvec(prob.hessian, d);
}

std::vector<Tensor> sample_batch_grads(const QuadraticProblem& prob, const Tensor& w,
                                       int64_t n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("sample_batch_grads: n must be >= 1");
    const int64_t p = prob.dim();
    const Tensor g = true_gradient(prob, w);
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(n));
    Tensor z({p});
    for (int64_t i = 0; i < n; ++i) {
        for (auto& v : z.data) v = rng.next_normal();
        Tensor gi = chol_multiply(prob.chol_noise, z);
        for (int64_t e = 0; e < p; ++e) gi[e] += g[e];
        out.push_back(std::move(gi));
    }
    return out;
}

void GammaGrid::validate() const {
    if (!(step > 0)) throw std::invalid_argument("gamma grid: step must be positive");
    if (g1_lo > 0 || g1_hi < 1 || g2_lo > 0 || g2_hi < 1)
        throw std::invalid_argument("gamma grid: must cover the feasible box [0,1]^2");
}

OracleResult analytic_oracle(const QuadraticProblem& prob, const Tensor& w,
                             const Tensor& g_prev, int64_t n, const GammaGrid& grid) {
    if (n < 1) throw std::invalid_argument("analytic_oracle: n must be >= 1");
    grid.validate();
    const int64_t p = prob.dim();
    const bool has_m = g_prev.numel() != 0;
    if (has_m && g_prev.numel() != p)
        throw std::invalid_argument("analytic_oracle: g_prev dimension mismatch");

    const Tensor gbar = true_gradient(prob, w);
    const Tensor hg = chol_solve(prob.chol_h, gbar);
    const double q_g = dot(gbar, hg);
    const double q_gm = has_m ? dot(g_prev, hg) : 0.0;
    const double q_m = has_m ? dot(g_prev, chol_solve(prob.chol_h, g_prev)) : 0.0;

    // v = trace(Hinv noise_cov) / n, column by column
    double tr = 0;
    Tensor col({p});
    for (int64_t j = 0; j < p; ++j) {
        for (int64_t i = 0; i < p; ++i) col[i] = prob.noise_cov.at2(i, j);
        tr += chol_solve(prob.chol_h, col)[j];
    }
    const double v = tr / double(n);

    OracleResult res;
    res.a = Mat2{q_g + v, q_g + v - q_gm, q_g + v - 2.0 * q_gm + q_m};
    res.b = Vec2{v, v};
    // b = 0 makes every stationary point of the surface sit at gamma = 0
    res.gamma_oracle =
        (v == 0.0) ? Vec2{0, 0} : solve2(res.a, res.b, kOracleRidge * res.a.trace() / 2.0);

    // E[J(gamma)] = J0 - q_g + (q_g + v)/2 - gamma.b + gamma.A gamma / 2
    const double j0 = loss(prob, w);
    const double c0 = j0 - q_g + 0.5 * (q_g + v);
    res.expected_loss_surface.reserve(static_cast<size_t>(grid.n1() * grid.n2()));
    for (int64_t i = 0; i < grid.n1(); ++i)
        for (int64_t j = 0; j < grid.n2(); ++j) {
            const Vec2 gm = grid.center(i, j);
            const double val =
                c0 - (gm.x + gm.y) * v +
                0.5 * (gm.x * gm.x * res.a.a11 + 2.0 * gm.x * gm.y * res.a.a12 +
                       gm.y * gm.y * res.a.a22);
            res.expected_loss_surface.push_back({gm.x, gm.y, val});
        }
    return res;
}

Vec2 brute_force_gamma(const QuadraticProblem& prob, const Tensor& w, const Tensor& g_prev,
                       int64_t n, const GammaGrid& grid, int64_t draws,
                       std::vector<SurfacePoint>* surface) {
    if (draws < 1) throw std::invalid_argument("brute_force_gamma: draws must be >= 1");
    if (n < 1) throw std::invalid_argument("brute_force_gamma: n must be >= 1");
    grid.validate();
    const int64_t p = prob.dim();
    const bool has_m = g_prev.numel() != 0;
    if (has_m && g_prev.numel() != p)
        throw std::invalid_argument("brute_force_gamma: g_prev dimension mismatch");

    Tensor d0({p});
    for (int64_t i = 0; i < p; ++i) d0[i] = w[i] - prob.w_star[i];
    const Tensor g_true = true_gradient(prob, w);
    const Tensor m = has_m ? g_prev : Tensor({p});
    const Tensor hv = chol_solve(prob.chol_h, m);
    const double root_n = std::sqrt(double(n));

    // The post-update error for one draw is e(gamma) = r + g1*s1 + g2*s2 with
    // r = d0 - u, s1 = u, s2 = u - Hinv m, u = Hinv gbar, so the realized
    // loss is a quadratic in gamma with six scalar coefficients; those are
    // averaged over draws (H r = g_true - gbar, H s1 = gbar, H s2 = gbar - m
    // spare the matvecs). Draws accumulate into fixed-size blocks combined in
    // index order, so the sum is identical for any thread count.
    constexpr int64_t kBlock = 256;
    const int64_t nblocks = (draws + kBlock - 1) / kBlock;
    std::vector<std::array<double, 6>> partial(static_cast<size_t>(nblocks),
                                               std::array<double, 6>{});
    const Rng base = Rng(prob.seed).derive(0xb1f0u);
#pragma omp parallel for schedule(static) if (nblocks > 4)
    for (int64_t bk = 0; bk < nblocks; ++bk) {
        auto& acc = partial[static_cast<size_t>(bk)];
        Tensor z({p}), gbar({p}), r({p}), s2({p}), hr({p}), hs2({p});
        const int64_t lo = bk * kBlock;
        const int64_t hi = std::min(draws, lo + kBlock);
        for (int64_t d = lo; d < hi; ++d) {
            Rng rng = base.derive(static_cast<uint64_t>(d));
            // mean of n Gaussian per-sample gradients, drawn directly: the
            // batch noise is exactly Normal(0, noise_cov / n)
            for (auto& val : z.data) val = rng.next_normal();
            const Tensor eta = chol_multiply(prob.chol_noise, z);
            for (int64_t e = 0; e < p; ++e) gbar[e] = g_true[e] + eta[e] / root_n;
            const Tensor u = chol_solve(prob.chol_h, gbar);
            for (int64_t e = 0; e < p; ++e) {
                r[e] = d0[e] - u[e];
                s2[e] = u[e] - hv[e];
                hr[e] = g_true[e] - gbar[e];
                hs2[e] = gbar[e] - m[e];
            }
            acc[0] += dot(r, hr);
            acc[1] += dot(r, gbar);
            acc[2] += dot(r, hs2);
            acc[3] += dot(u, gbar);
            acc[4] += dot(u, hs2);
            acc[5] += dot(s2, hs2);
        }
    }
    std::array<double, 6> c{};
    for (const auto& blk : partial)
        for (int k = 0; k < 6; ++k) c[static_cast<size_t>(k)] += blk[static_cast<size_t>(k)];
    for (auto& val : c) val /= double(draws);

    Vec2 best{grid.g1_lo, grid.g2_lo};
    double best_val = 0;
    bool first = true;
    if (surface) {
        surface->clear();
        surface->reserve(static_cast<size_t>(grid.n1() * grid.n2()));
    }
    for (int64_t i = 0; i < grid.n1(); ++i)
        for (int64_t j = 0; j < grid.n2(); ++j) {
            const Vec2 gm = grid.center(i, j);
            const double val = 0.5 * (c[0] + 2.0 * gm.x * c[1] + 2.0 * gm.y * c[2] +
                                      gm.x * gm.x * c[3] + 2.0 * gm.x * gm.y * c[4] +
                                      gm.y * gm.y * c[5]);
            if (surface) surface->push_back({gm.x, gm.y, val});
            if (first || val < best_val) {
                first = false;
                best_val = val;
                best = gm;
            }
        }
    return best;
}

Vec2 controller_gamma_estimate(const QuadraticProblem& prob, const Tensor& w,
                               const Tensor& g_prev, int64_t n, Rng& rng,
                               const ControllerConfig& cfg, uint32_t* flags) {
    if (n < 2) throw std::invalid_argument("controller_gamma_estimate: n must be >= 2");
    const int64_t p = prob.dim();
    const auto grads = sample_batch_grads(prob, w, n, rng);

    Tensor mean({p});
    double sumsq = 0;
    for (const auto& gi : grads) {
        const Tensor wt = chol_forward_solve(prob.chol_h, gi);
        sumsq += dot(wt, wt);
        for (int64_t e = 0; e < p; ++e) mean[e] += wt[e];
    }
    for (int64_t e = 0; e < p; ++e) mean[e] /= double(n);
    const Tensor m_w =
        g_prev.numel() != 0 ? chol_forward_solve(prob.chol_h, g_prev) : Tensor();

    const Mat2 a = compute_a_hat(mean, m_w, static_cast<const Tensor*>(nullptr));
    const double v = compute_v_hat(sumsq, a.a11, n, flags);
    return solve_gamma(a, compute_b_hat(v), cfg, GammaSolveMode::full, Vec2{0, 0}, flags);
}

OracleCheckState make_oracle_state(int64_t p, uint64_t seed, double ratio, int64_t n) {
    if (!(ratio > 0)) throw std::invalid_argument("make_oracle_state: ratio must be positive");
    OracleCheckState st;
    st.prob = random_spd_problem(p, seed, 1.0);
    Rng rng = Rng(seed).derive(77);
    st.w = Tensor({p});
    for (int64_t i = 0; i < p; ++i) st.w[i] = st.prob.w_star[i] + rng.next_normal();
    const double q_g = 2.0 * loss(st.prob, st.w);  // J0 = q_g / 2 under Hinv
    const double tr = analytic_oracle(st.prob, st.w, Tensor(), 1).b.x;
    const double f = ratio * q_g * double(n) / tr;
    for (auto& v : st.prob.noise_cov.data) v *= f;
    st.prob.finalize();
    const Tensor g = true_gradient(st.prob, st.w);
    const double g_rms = std::sqrt(dot(g, g) / double(p));
    st.momentum = Tensor({p});
    for (int64_t i = 0; i < p; ++i)
        st.momentum[i] = 0.6 * g[i] + 0.4 * g_rms * rng.next_normal();
    return st;
}

std::vector<TestbedStep> run_testbed_training(const QuadraticProblem& prob, const Tensor& w0,
                                              const TestbedRunConfig& cfg) {
    cfg.controller.validate();
    if (cfg.steps < 1) throw std::invalid_argument("run_testbed_training: steps must be >= 1");
    if (cfg.batch_n < 1 || (cfg.auto_tune && cfg.batch_n < 2))
        throw std::invalid_argument("run_testbed_training: batch too small");
    const int64_t p = prob.dim();
    if (w0.numel() != p) throw std::invalid_argument("run_testbed_training: w0 dimension mismatch");

    Tensor w = w0;
    Tensor g_hat;  // empty until the first step
    GammaState gs(cfg.controller.init_alpha);
    const double j_init = loss(prob, w0);
    const double limit = 1e6 * std::max(j_init, 1e-12);  // w0 == w_star corner
    Rng rng = Rng(prob.seed).derive(0x7e57bedu);

    std::vector<TestbedStep> out;
    out.reserve(static_cast<size_t>(cfg.steps));
    for (int64_t t = 1; t <= cfg.steps; ++t) {
        const auto grads = sample_batch_grads(prob, w, cfg.batch_n, rng);
        Tensor gbar({p});
        for (const auto& gi : grads)
            for (int64_t e = 0; e < p; ++e) gbar[e] += gi[e];
        for (int64_t e = 0; e < p; ++e) gbar[e] /= double(cfg.batch_n);

        uint32_t flags = 0;
        double vhat = 0, g1, g2, alpha, beta;
        if (cfg.auto_tune) {
            Tensor mean({p});
            double sumsq = 0;
            for (const auto& gi : grads) {
                const Tensor wt = chol_forward_solve(prob.chol_h, gi);
                sumsq += dot(wt, wt);
                for (int64_t e = 0; e < p; ++e) mean[e] += wt[e];
            }
            for (int64_t e = 0; e < p; ++e) mean[e] /= double(cfg.batch_n);
            const Tensor m_w =
                g_hat.numel() != 0 ? chol_forward_solve(prob.chol_h, g_hat) : Tensor();
            const Mat2 a = compute_a_hat(mean, m_w, static_cast<const Tensor*>(nullptr));
            vhat = compute_v_hat(sumsq, a.a11, cfg.batch_n, &flags);
            if (t <= cfg.controller.warmup_steps) {
                flags |= kFlagWarmup;
            } else {
                const Vec2 raw = solve_gamma(a, compute_b_hat(vhat), cfg.controller,
                                             GammaSolveMode::full, gs.gamma_ewma, &flags);
                if (!(flags & kFlagSingular)) {
                    gs.gamma_raw = raw;
                    ewma_update(gs, raw, cfg.controller.upsilon);
                    clamp_and_convert(gs, cfg.controller.clamp, &flags);
                }
            }
            g1 = gs.gamma_ewma.x;
            g2 = gs.gamma_ewma.y;
            alpha = gs.alpha;
            beta = gs.beta;
        } else {
            alpha = cfg.fixed_alpha;
            beta = cfg.fixed_beta;
            g1 = 1.0 - alpha;
            g2 = alpha * beta;
        }

        if (g_hat.numel() == 0) g_hat = Tensor({p});
        for (int64_t e = 0; e < p; ++e) g_hat[e] = (1.0 - g1 - g2) * gbar[e] + g2 * g_hat[e];
        const Tensor stepv = chol_solve(prob.chol_h, g_hat);
        for (int64_t e = 0; e < p; ++e) w[e] -= stepv[e];

        const double j = loss(prob, w);
        out.push_back({t, j, alpha, beta, vhat, flags});
        if (!(j <= limit)) {
            std::ostringstream os;
            os << "testbed diverged at step " << t << ": loss " << j << " exceeds 1e6 x "
               << j_init;
            throw DivergenceError(os.str());
        }
    }
    return out;
}

}  // namespace autoopt
