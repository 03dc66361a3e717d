#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "autoopt/controller.hpp"
#include "autoopt/linalg2.hpp"
#include "autoopt/rng.hpp"
#include "autoopt/tensor.hpp"

namespace autoopt {

// raised when a testbed trajectory exceeds 1e6x its initial loss
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Stochastic quadratic J(w) = 1/2 (w - w*)^T H (w - w*) whose per-sample
// gradients are H(w - w*) + eta with eta ~ Normal(0, noise_cov). Both the
// true gradient and the exact curvature are available, so every estimator in
// the controller can be checked against closed forms.
struct QuadraticProblem {
    Tensor hessian;    // p x p, symmetric positive definite
    Tensor w_star;     // p
    Tensor noise_cov;  // p x p, symmetric positive semidefinite
    uint64_t seed = 0;

    // factor caches filled by finalize()
    Tensor chol_h;
    Tensor chol_noise;

    int64_t dim() const { return w_star.numel(); }

    // validates shapes and definiteness and computes the Cholesky factors;
    // must be called again after mutating hessian or noise_cov
    void finalize();
};

// p-dimensional instance with curvature Z^T Z / p + 0.1 I and a noise
// covariance of the same family scaled by noise_scale^2
QuadraticProblem random_spd_problem(int64_t p, uint64_t seed, double noise_scale);

double loss(const QuadraticProblem& prob, const Tensor& w);
Tensor true_gradient(const QuadraticProblem& prob, const Tensor& w);

// n per-sample gradients H(w - w*) + eta_i, eta_i ~ Normal(0, noise_cov)
std::vector<Tensor> sample_batch_grads(const QuadraticProblem& prob, const Tensor& w,
                                       int64_t n, Rng& rng);

// evaluation lattice for the gamma surface; points are cell centers
struct GammaGrid {
    double g1_lo = -0.5, g1_hi = 1.0;
    double g2_lo = -0.5, g2_hi = 1.0;
    double step = 0.02;

    int64_t n1() const { return static_cast<int64_t>(std::llround((g1_hi - g1_lo) / step)) + 1; }
    int64_t n2() const { return static_cast<int64_t>(std::llround((g2_hi - g2_lo) / step)) + 1; }
    Vec2 center(int64_t i, int64_t j) const {
        return Vec2{g1_lo + double(i) * step, g2_lo + double(j) * step};
    }
    void validate() const;
};

struct SurfacePoint {
    double g1 = 0, g2 = 0, value = 0;
};

struct OracleResult {
    Vec2 gamma_oracle;  // minimizer of the expected one-step loss
    Mat2 a;             // closed-form E[G^T Hinv G]
    Vec2 b;             // [v, v] with v = trace(Hinv noise_cov) / n
    std::vector<SurfacePoint> expected_loss_surface;
};

// Closed-form expected one-step loss model at state (w, g_prev) for batch
// size n, evaluated with the exact curvature as preconditioner. A rank-1
// system (zero or collinear g_prev) is resolved to its minimum-norm
// minimizer by a tiny relative ridge; a fully degenerate system throws
// std::runtime_error.
OracleResult analytic_oracle(const QuadraticProblem& prob, const Tensor& w,
                             const Tensor& g_prev, int64_t n,
                             const GammaGrid& grid = GammaGrid{});

// Independent check of the oracle: simulates the one-step update for every
// gamma on the grid, Monte-Carlo averaging the realized loss over `draws`
// batch-gradient draws (common draws across cells), and returns the arg-min
// cell center. Optionally emits the empirical surface.
Vec2 brute_force_gamma(const QuadraticProblem& prob, const Tensor& w, const Tensor& g_prev,
                       int64_t n, const GammaGrid& grid, int64_t draws,
                       std::vector<SurfacePoint>* surface = nullptr);

// One controller estimate gamma_O from a single sampled mini-batch: whitens
// the per-sample gradients with the exact Cholesky factor so the identity
// preconditioner realizes Hinv-weighted statistics, then runs the production
// estimator path (A, V, solve).
Vec2 controller_gamma_estimate(const QuadraticProblem& prob, const Tensor& w,
                               const Tensor& g_prev, int64_t n, Rng& rng,
                               const ControllerConfig& cfg, uint32_t* flags = nullptr);

// Deterministic instance for oracle-equivalence checks: a random SPD problem
// whose noise is rescaled so trace(Hinv noise_cov)/n = ratio * gbar^T Hinv gbar
// at the evaluation point, with momentum 0.6 gbar + 0.4 rms(gbar) z. The ratio
// keeps the estimator in a regime where all three gamma estimates are
// comparable on a 0.02 grid.
struct OracleCheckState {
    QuadraticProblem prob;
    Tensor w;
    Tensor momentum;
};
OracleCheckState make_oracle_state(int64_t p, uint64_t seed, double ratio, int64_t n);

struct TestbedRunConfig {
    int64_t steps = 100;
    int64_t batch_n = 8;
    bool auto_tune = true;     // false: apply fixed_alpha/fixed_beta unclamped
    double fixed_alpha = 1.0;  // 1.0 with zero noise is the exact one-step solve
    double fixed_beta = 0.0;
    ControllerConfig controller;
};

struct TestbedStep {
    int64_t step = 0;
    double loss = 0;
    double alpha = 0, beta = 0;
    double vhat = 0;
    uint32_t flags = 0;
};

// Runs the auto-tuned (or fixed) preconditioned update w -= Hinv g_hat from
// w0, sampling a fresh mini-batch each step. Throws DivergenceError when the
// loss exceeds 1e6x the initial loss.
std::vector<TestbedStep> run_testbed_training(const QuadraticProblem& prob, const Tensor& w0,
                                              const TestbedRunConfig& cfg);

}  // namespace autoopt
