#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "autoopt/linalg2.hpp"
#include "autoopt/optim.hpp"
#include "autoopt/tensor.hpp"

namespace autoopt {

struct ClampConfig {
    double alpha_min = 1e-8;
    double alpha_max = 1.0;  // 10.0 for plain sgd, 1.0 for adaptive optimizers
    double beta_max = 0.999;
};

enum class AdaGradMode { alpha_only, full };

struct ControllerConfig {
    double upsilon = 0.9;  // EWMA factor on the per-step gamma estimate
    double ridge = 1e-8;   // relative diagonal shift: ridge * trace(A)/2
    ClampConfig clamp;
    AdaGradMode adagrad_mode = AdaGradMode::alpha_only;
    double init_alpha = 0.01;  // gamma starts at [1 - init_alpha, 0]
    int64_t warmup_steps = 1;  // steps that keep the initial gamma (no solve)
    // Full 2-D solves need the two G columns measurably non-collinear:
    // det(A) > ident_threshold * a11 * a22. Below that, gamma2 has no leverage
    // on the one-step objective and its estimate is amplified sampling noise,
    // so the step re-estimates gamma1 alone with gamma2 held at the smoothed
    // value (the same restriction as alpha_only, conditioned on gamma2).
    double ident_threshold = 0.05;

    void validate() const;
};

// Per-optimizer defaults: plain sgd tolerates alpha above one (alpha_max 10,
// init_alpha 0.01); the adaptive preconditioners keep alpha within (0, 1]
// and start smaller (init_alpha 0.001).
ControllerConfig controller_defaults(OptKind kind);

// step flags recorded in the trace (bitwise or)
enum : uint32_t {
    kFlagWarmup = 1u << 0,         // within warmup, solver skipped
    kFlagSingular = 1u << 1,       // singular system even after ridge; gamma kept
    kFlagVhatClamped = 1u << 2,    // negative variance estimate clamped to zero
    kFlagAlphaClamped = 1u << 3,   // alpha hit [alpha_min, alpha_max]
    kFlagBetaClamped = 1u << 4,    // beta hit [0, beta_max]
    kFlagGated = 1u << 5,          // G columns near-collinear; gamma2 held
    kFlagRawClamped = 1u << 6,     // raw estimate projected into the box
};

struct GammaState {
    Vec2 gamma_raw{0, 0};   // most recent per-step solution gamma_O
    Vec2 gamma_ewma{0, 0};  // smoothed gamma_E actually applied
    double alpha = 0;       // derived: 1 - gamma1
    double beta = 0;        // derived: gamma2 / (1 - gamma1)

    explicit GammaState(double init_alpha = 0.01) { reset(init_alpha); }
    void reset(double init_alpha) {
        gamma_raw = gamma_ewma = Vec2{1.0 - init_alpha, 0.0};
        alpha = init_alpha;
        beta = 0.0;
    }
};

// Unbiased within-batch gradient variance estimate:
//   V = (sum_i g_i^T Hinv g_i - N gbar^T Hinv gbar) / (N (N - 1)).
// A negative value (floating-point cancellation) clamps to zero and sets
// kFlagVhatClamped. Requires n >= 2.
double compute_v_hat(double per_sample_sumsq, double g_hinv_g, int64_t n, uint32_t* flags);

// A = G^T Hinv G for G = [g, g - m] with m the previous smoothed gradient
// (empty tensor = zero). hdiag: preconditioner diagonal, nullptr = identity.
template <typename T>
Mat2 compute_a_hat(const Tens<T>& g, const Tens<T>& m_prev, const Tens<T>* hdiag);

// b = [v, v]
Vec2 compute_b_hat(double v_hat);

enum class GammaSolveMode { full, alpha_only };

// Solves A gamma = b with the relative ridge from cfg. alpha_only solves the
// 1-D restriction gamma = [b1 / (a11 (1 + ridge)), 0]. On a singular system
// sets kFlagSingular and returns prev_ewma unchanged.
Vec2 solve_gamma(const Mat2& a, const Vec2& b, const ControllerConfig& cfg,
                 GammaSolveMode mode, const Vec2& prev_ewma, uint32_t* flags);

// gamma_E <- (1 - upsilon) raw + upsilon gamma_E
void ewma_update(GammaState& state, const Vec2& raw, double upsilon);

// Derives (alpha, beta) from the smoothed gamma, clamps both to the feasible
// box and writes the clamped values back into gamma_ewma.
void clamp_and_convert(GammaState& state, const ClampConfig& clamp, uint32_t* flags);

// Clips a raw per-step estimate into a bounded sanity window before it
// enters the EWMA, so one noise-amplified solution cannot move the smoothed
// state arbitrarily far. The window spans alpha in [-min(alpha_max,1),
// min(alpha_max,1)] and gamma2 in [-beta_max, beta_max]: symmetric, so
// zero-mean estimation noise still averages out instead of censoring upward.
// Sets kFlagRawClamped when the clip changes the estimate.
Vec2 project_gamma(const Vec2& raw, const ClampConfig& clamp, uint32_t* flags);

struct TraceRecord {
    int64_t step = 0;
    std::string group;
    double alpha = 0, beta = 0;
    double gamma1 = 0, gamma2 = 0;
    double vhat = 0;
    double a11 = 0, a12 = 0, a22 = 0;
    uint32_t flags = 0;
};

// One tensor participating in a jointly tuned unit (a unit is one parameter
// group by default, or a layer's weight+bias when bias merging is enabled).
template <typename T>
struct UnitMember {
    Tens<T>* value = nullptr;
    OptState<T>* opt = nullptr;
    const Tens<T>* grad = nullptr;
};

// One full AutoOpt step for one tuned unit: advances the step counter, forms
// the curvature diagonal per member, pulls per-sample statistics through
// sumsq_fn(member_index, hdiag), estimates V/A/b, solves and smooths gamma
// (after warmup), clamps, then applies the preconditioned momentum update.
template <typename T>
TraceRecord autoopt_step(std::vector<UnitMember<T>>& members, GammaState& gs, OptKind kind,
                         const OptHyper& oh, const ControllerConfig& cfg, int64_t batch_n,
                         const std::function<double(size_t, const Tens<T>&)>& sumsq_fn,
                         const std::string& group_name);

// Fixed-hyperparameter counterpart sharing the same primitives: the unit steps
// with gamma = [1 - alpha, beta * alpha] and no statistics are gathered.
template <typename T>
void fixed_step(std::vector<UnitMember<T>>& members, OptKind kind, const OptHyper& oh,
                double alpha, double beta);

}  // namespace autoopt
