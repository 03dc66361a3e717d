#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "autoopt/controller.hpp"
#include "autoopt/rng.hpp"

using namespace autoopt;

TEST_CASE("compute_v_hat implements the unbiased divisor and clamps at zero") {
    uint32_t flags = 0;
    CHECK(compute_v_hat(10.0, 1.0, 2, &flags) == doctest::Approx(4.0));
    CHECK(flags == 0);
    // exact cancellation gives zero without the clamp flag
    CHECK(compute_v_hat(1.0, 0.125, 8, &flags) == 0.0);
    CHECK(flags == 0);
    // negative estimate clamps to zero and records it
    CHECK(compute_v_hat(1.0, 1.0, 8, &flags) == 0.0);
    CHECK((flags & kFlagVhatClamped) != 0);
    CHECK_THROWS_AS(compute_v_hat(1.0, 1.0, 1, nullptr), std::invalid_argument);
}

TEST_CASE("compute_a_hat reproduces manual inner products") {
    Rng rng(1);
    Tens<double> g({7}), m({7}), h({7});
    for (auto& v : g.data) v = rng.next_normal();
    for (auto& v : m.data) v = rng.next_normal();
    for (auto& v : h.data) v = 0.5 + rng.next_double();

    double a11 = 0, a12 = 0, a22 = 0;
    for (int64_t i = 0; i < 7; ++i) {
        const double d = g[i] - m[i];
        a11 += g[i] * g[i] / h[i];
        a12 += g[i] * d / h[i];
        a22 += d * d / h[i];
    }
    const Mat2 a = compute_a_hat(g, m, &h);
    CHECK(a.a11 == doctest::Approx(a11).epsilon(1e-13));
    CHECK(a.a12 == doctest::Approx(a12).epsilon(1e-13));
    CHECK(a.a22 == doctest::Approx(a22).epsilon(1e-13));

    // empty momentum acts as zero: a12 = a11 and a22 = a11 under identity
    const Mat2 a0 = compute_a_hat(g, Tens<double>(), (const Tens<double>*)nullptr);
    CHECK(a0.a12 == doctest::Approx(a0.a11).epsilon(1e-13));
    CHECK(a0.a22 == doctest::Approx(a0.a11).epsilon(1e-13));
}

TEST_CASE("solve_gamma solves the 2x2 system and falls back when singular") {
    ControllerConfig cfg;
    cfg.ridge = 0.0;
    uint32_t flags = 0;
    const Mat2 a{2.0, 0.0, 4.0};
    const Vec2 b{1.0, 1.0};
    Vec2 g = solve_gamma(a, b, cfg, GammaSolveMode::full, Vec2{9, 9}, &flags);
    CHECK(flags == 0);
    CHECK(g.x == doctest::Approx(0.5));
    CHECK(g.y == doctest::Approx(0.25));

    const Mat2 sing{1.0, 1.0, 1.0};
    g = solve_gamma(sing, b, cfg, GammaSolveMode::full, Vec2{0.7, 0.1}, &flags);
    CHECK((flags & kFlagSingular) != 0);
    CHECK(g.x == 0.7);
    CHECK(g.y == 0.1);

    flags = 0;
    g = solve_gamma(a, b, cfg, GammaSolveMode::alpha_only, Vec2{0, 0}, &flags);
    CHECK(flags == 0);
    CHECK(g.x == doctest::Approx(0.5));
    CHECK(g.y == 0.0);

    const Mat2 zero{0.0, 0.0, 0.0};
    g = solve_gamma(zero, b, cfg, GammaSolveMode::alpha_only, Vec2{0.3, 0.0}, &flags);
    CHECK((flags & kFlagSingular) != 0);
    CHECK(g.x == 0.3);
}

TEST_CASE("ewma error contracts by exactly upsilon per step") {
    const double upsilon = 0.9;
    const Vec2 target{0.4, 0.1};
    GammaState gs(0.01);  // gamma_ewma = [0.99, 0]
    double prev_err = std::hypot(gs.gamma_ewma.x - target.x, gs.gamma_ewma.y - target.y);
    for (int t = 0; t < 20; ++t) {
        // error is large enough here that rounding cannot disturb the ratio
        ewma_update(gs, target, upsilon);
        const double err = std::hypot(gs.gamma_ewma.x - target.x, gs.gamma_ewma.y - target.y);
        CHECK(err / prev_err == doctest::Approx(upsilon).epsilon(1e-12));
        prev_err = err;
    }
    for (int t = 0; t < 400; ++t) ewma_update(gs, target, upsilon);
    CHECK(std::hypot(gs.gamma_ewma.x - target.x, gs.gamma_ewma.y - target.y) < 1e-12);
}

TEST_CASE("clamp_and_convert writes feasible values back into gamma") {
    ClampConfig clamp;  // alpha in [1e-8, 1], beta in [0, 0.999]
    uint32_t flags = 0;

    GammaState gs;
    gs.gamma_ewma = Vec2{-0.5, 0.1};  // alpha 1.5 -> clamp to 1
    clamp_and_convert(gs, clamp, &flags);
    CHECK((flags & kFlagAlphaClamped) != 0);
    CHECK(gs.alpha == 1.0);
    CHECK(gs.gamma_ewma.x == 0.0);
    CHECK(gs.beta == doctest::Approx(0.1));
    CHECK(gs.gamma_ewma.y == doctest::Approx(0.1));

    flags = 0;
    gs.gamma_ewma = Vec2{1.0 + 1e-9, 0.0};  // alpha slightly negative -> alpha_min
    clamp_and_convert(gs, clamp, &flags);
    CHECK((flags & kFlagAlphaClamped) != 0);
    CHECK(gs.alpha == clamp.alpha_min);

    flags = 0;
    gs.gamma_ewma = Vec2{0.9, -0.05};  // beta negative -> 0
    clamp_and_convert(gs, clamp, &flags);
    CHECK((flags & kFlagBetaClamped) != 0);
    CHECK(gs.beta == 0.0);
    CHECK(gs.gamma_ewma.y == 0.0);

    flags = 0;
    gs.gamma_ewma = Vec2{0.5, 0.9};  // beta = 1.8 -> beta_max
    clamp_and_convert(gs, clamp, &flags);
    CHECK((flags & kFlagBetaClamped) != 0);
    CHECK(gs.beta == clamp.beta_max);
    CHECK(gs.gamma_ewma.y == doctest::Approx(0.999 * 0.5));

    flags = 0;
    gs.gamma_ewma = Vec2{0.99, 0.005};  // already feasible: untouched
    clamp_and_convert(gs, clamp, &flags);
    CHECK(flags == 0);
    CHECK(gs.alpha == doctest::Approx(0.01));
    CHECK(gs.beta == doctest::Approx(0.5));
}

TEST_CASE("controller config validation") {
    ControllerConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.upsilon = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.upsilon = 0.9;
    cfg.init_alpha = 2.0;  // outside [alpha_min, alpha_max]
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("variance estimate is unbiased over many batches") {
    // p = 10, N = 8, identity curvature, unit gradient noise: expectation 10/8
    Rng rng(2024);
    const int64_t p = 10, n = 8;
    Tens<double> g0({p});
    for (auto& v : g0.data) v = rng.next_normal();

    const int batches = 20000;
    double acc = 0, acc_corrupt = 0;
    for (int bt = 0; bt < batches; ++bt) {
        Tens<double> mean({p});
        double sumsq = 0;
        std::vector<Tens<double>> gi(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            Tens<double> s({p});
            for (int64_t e = 0; e < p; ++e) {
                s[e] = g0[e] + rng.next_normal();
                mean[e] += s[e] / double(n);
            }
            gi[static_cast<size_t>(i)] = std::move(s);
        }
        for (int64_t i = 0; i < n; ++i) sumsq += dot(gi[static_cast<size_t>(i)], gi[static_cast<size_t>(i)]);
        const double ggh = dot(mean, mean);
        acc += compute_v_hat(sumsq, ggh, n, nullptr);
        // deliberately wrong divisor N^2 used by the mutation check below
        acc_corrupt += std::max(0.0, (sumsq - double(n) * ggh) / (double(n) * double(n)));
    }
    const double expectation = double(p) / double(n);  // 1.25
    CHECK(std::abs(acc / batches / expectation - 1.0) < 0.01);
    // a corrupted divisor misses the expectation by (N-1)/N and must fail the gate
    CHECK(std::abs(acc_corrupt / batches / expectation - 1.0) > 0.05);
}

TEST_CASE("gamma estimate is invariant to gradient scaling") {
    Rng rng(7);
    const int64_t p = 50, n = 8;
    std::vector<Tens<double>> gi(static_cast<size_t>(n));
    Tens<double> mean({p}), m_prev({p});
    for (auto& v : m_prev.data) v = 0.2 * rng.next_normal();
    for (int64_t i = 0; i < n; ++i) {
        Tens<double> s({p});
        for (auto& v : s.data) v = rng.next_normal();
        for (int64_t e = 0; e < p; ++e) mean[e] += s[e] / double(n);
        gi[static_cast<size_t>(i)] = std::move(s);
    }

    ControllerConfig cfg;  // default relative ridge: scale-free by construction
    auto gamma_of = [&](double c) {
        Tens<double> mc = mean, mp = m_prev;
        for (auto& v : mc.data) v *= c;
        for (auto& v : mp.data) v *= c;
        double sumsq = 0;
        for (int64_t i = 0; i < n; ++i)
            sumsq += c * c * dot(gi[static_cast<size_t>(i)], gi[static_cast<size_t>(i)]);
        const Mat2 a = compute_a_hat(mc, mp, (const Tens<double>*)nullptr);
        const double v = compute_v_hat(sumsq, a.a11, n, nullptr);
        uint32_t flags = 0;
        return solve_gamma(a, compute_b_hat(v), cfg, GammaSolveMode::full, Vec2{0, 0},
                           &flags);
    };

    const Vec2 g1 = gamma_of(1.0), g10 = gamma_of(10.0);
    CHECK(std::abs(g1.x - g10.x) <= 1e-10 * std::max(1.0, std::abs(g1.x)));
    CHECK(std::abs(g1.y - g10.y) <= 1e-10 * std::max(1.0, std::abs(g1.y)));
}

namespace {

// synthetic one-unit stepping harness
struct StepHarness {
    Tens<double> w{{4}};
    OptState<double> opt;
    GammaState gs{0.01};
    ControllerConfig cfg;
    OptKind kind = OptKind::sgd;

    TraceRecord step(const Tens<double>& g, double sumsq, int64_t n) {
        std::vector<UnitMember<double>> members{{&w, &opt, &g}};
        return autoopt_step<double>(
            members, gs, kind, OptHyper{}, cfg, n,
            [&](size_t, const Tens<double>&) { return sumsq; }, "unit");
    }
};

}  // namespace

TEST_CASE("warmup steps keep the initial gamma and apply a plain step") {
    StepHarness h;
    h.cfg.warmup_steps = 2;
    Tens<double> g({4}, 1.0);
    const Tens<double> w0 = h.w;
    const double sumsq = 8.0 * dot(g, g);  // some spread
    TraceRecord r1 = h.step(g, sumsq, 8);
    CHECK((r1.flags & kFlagWarmup) != 0);
    CHECK(r1.alpha == doctest::Approx(0.01));
    CHECK(r1.beta == 0.0);
    for (int64_t i = 0; i < 4; ++i)
        CHECK(h.w[i] == doctest::Approx(w0[i] - 0.01 * g[i]).epsilon(1e-15));
    TraceRecord r2 = h.step(g, sumsq, 8);
    CHECK((r2.flags & kFlagWarmup) != 0);
    TraceRecord r3 = h.step(g, sumsq, 8);
    CHECK((r3.flags & kFlagWarmup) == 0);
    CHECK(r3.step == 3);
}

TEST_CASE("zero within-batch variance drives alpha to one and beta to zero") {
    StepHarness h;
    Rng rng(5);
    Tens<double> g({4});
    for (auto& v : g.data) v = rng.next_normal();
    TraceRecord last{};
    for (int t = 0; t < 300; ++t) {
        // all per-sample gradients identical: sumsq = N g^T g exactly, V = 0
        last = h.step(g, 8.0 * dot(g, g), 8);
    }
    CHECK(last.vhat == 0.0);
    CHECK(last.alpha > 1.0 - 1e-8);
    CHECK(std::abs(last.beta) < 1e-8);
    CHECK(last.gamma1 == doctest::Approx(0.0).scale(1).epsilon(1e-8));
}

TEST_CASE("zero gradients flag a singular step and keep gamma") {
    StepHarness h;
    h.cfg.warmup_steps = 0;
    Tens<double> g({4});  // zeros
    TraceRecord r = h.step(g, 0.0, 8);
    CHECK((r.flags & kFlagSingular) != 0);
    CHECK(r.alpha == doctest::Approx(0.01));
    CHECK(r.gamma1 == doctest::Approx(0.99));
}

TEST_CASE("frozen controller (infinite warmup) reproduces fixed-mode updates bitwise") {
    Rng rng(6);
    Tens<double> wa({6}), wf({6});
    for (int64_t i = 0; i < 6; ++i) wa[i] = wf[i] = rng.next_normal();
    OptState<double> oa, of;
    GammaState gs(0.01);
    ControllerConfig cfg;
    cfg.warmup_steps = INT64_MAX;

    for (int t = 0; t < 20; ++t) {
        Tens<double> g({6});
        for (auto& v : g.data) v = rng.next_normal();
        std::vector<UnitMember<double>> ma{{&wa, &oa, &g}};
        autoopt_step<double>(
            ma, gs, OptKind::adam, OptHyper{}, cfg, 8,
            [&](size_t, const Tens<double>&) { return 8.0 * dot(g, g) + 1.0; }, "u");
        std::vector<UnitMember<double>> mf{{&wf, &of, &g}};
        fixed_step<double>(mf, OptKind::adam, OptHyper{}, 0.01, 0.0);
        for (int64_t i = 0; i < 6; ++i) CHECK(wa[i] == wf[i]);
    }
}

TEST_CASE("a unit split into two members matches the concatenated single member") {
    Rng rng(8);
    Tens<double> w({10}), g({10});
    for (auto& v : w.data) v = rng.next_normal();
    for (auto& v : g.data) v = rng.next_normal();

    // concatenated
    Tens<double> w1 = w, g1 = g;
    OptState<double> o1;
    GammaState gs1(0.01);
    ControllerConfig cfg;
    const double sumsq_total = 8.0 * dot(g, g) + 3.0;

    // split 6 + 4 with sumsq apportioned by squared norm
    Tens<double> wa({6}), wb({4}), ga({6}), gb({4});
    for (int64_t i = 0; i < 6; ++i) {
        wa[i] = w[i];
        ga[i] = g[i];
    }
    for (int64_t i = 0; i < 4; ++i) {
        wb[i] = w[6 + i];
        gb[i] = g[6 + i];
    }
    const double frac_a = dot(ga, ga) / dot(g, g);
    OptState<double> oa, ob;
    GammaState gs2(0.01);

    for (int t = 0; t < 5; ++t) {
        std::vector<UnitMember<double>> m1{{&w1, &o1, &g1}};
        TraceRecord r1 = autoopt_step<double>(
            m1, gs1, OptKind::sgd, OptHyper{}, cfg, 8,
            [&](size_t, const Tens<double>&) { return sumsq_total; }, "joint");

        std::vector<UnitMember<double>> m2{{&wa, &oa, &ga}, {&wb, &ob, &gb}};
        TraceRecord r2 = autoopt_step<double>(
            m2, gs2, OptKind::sgd, OptHyper{}, cfg, 8,
            [&](size_t ix, const Tens<double>&) {
                return ix == 0 ? sumsq_total * frac_a : sumsq_total * (1.0 - frac_a);
            },
            "split");

        CHECK(r1.a11 == doctest::Approx(r2.a11).epsilon(1e-12));
        CHECK(r1.a12 == doctest::Approx(r2.a12).epsilon(1e-12));
        CHECK(r1.a22 == doctest::Approx(r2.a22).epsilon(1e-12));
        CHECK(r1.vhat == doctest::Approx(r2.vhat).epsilon(1e-10));
        CHECK(r1.alpha == doctest::Approx(r2.alpha).epsilon(1e-10));
        CHECK(r1.beta == doctest::Approx(r2.beta).epsilon(1e-10));
    }
    for (int64_t i = 0; i < 6; ++i) CHECK(w1[i] == doctest::Approx(wa[i]).epsilon(1e-12));
    for (int64_t i = 0; i < 4; ++i) CHECK(w1[6 + i] == doctest::Approx(wb[i]).epsilon(1e-12));
}

TEST_CASE("adam second moment advances once per controller step") {
    StepHarness h;
    h.kind = OptKind::adam;
    Tens<double> g({4}, 2.0);
    h.step(g, 8.0 * dot(g, g) + 1.0, 8);
    OptHyper oh;
    CHECK(h.opt.second_moment[0] == doctest::Approx((1.0 - oh.beta2) * 4.0).epsilon(1e-12));
    CHECK(h.opt.step == 1);
}

TEST_CASE("trace record carries the quadratic model entries") {
    StepHarness h;
    h.cfg.warmup_steps = 0;
    Rng rng(9);
    Tens<double> g({4});
    for (auto& v : g.data) v = rng.next_normal();
    const double sumsq = 8.0 * dot(g, g) * 1.5;
    TraceRecord r = h.step(g, sumsq, 8);
    CHECK(r.a11 == doctest::Approx(dot(g, g)).epsilon(1e-12));
    CHECK(r.a12 == doctest::Approx(dot(g, g)).epsilon(1e-12));  // momentum empty: d = g
    CHECK(r.a22 == doctest::Approx(dot(g, g)).epsilon(1e-12));
    CHECK(r.vhat == doctest::Approx((sumsq - 8.0 * dot(g, g)) / 56.0).epsilon(1e-12));
    CHECK(r.group == "unit");
}
