#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autoopt/config.hpp"
#include "autoopt/controller.hpp"
#include "autoopt/data.hpp"
#include "autoopt/nn.hpp"

namespace autoopt {

struct MetricsRow {
    uint64_t seed = 0;
    int64_t epoch = 0;
    int64_t step = 0;  // global step count at the end of the epoch
    double train_loss = 0;
    double train_error = 0;
    double test_error = 0;
    double wall_time_s = 0;
};

struct RunResult {
    std::vector<MetricsRow> metrics;   // one row per epoch
    std::vector<TraceRecord> trace;    // auto mode: one row per step x unit
    std::vector<double> final_params;  // flattened, for equivalence tests
    double final_test_error = 1.0;
};

// the paper's per-dataset stacks plus a small fast one for tests
template <typename T>
Network<T> build_arch(const std::string& arch, const std::vector<int64_t>& input_shape);

// One seeded training run: seeded init, epoch sampling, auto or fixed steps,
// per-epoch evaluation. Throws DivergenceError when the batch loss exceeds
// 1e6 x (initial loss, floored at 1) or stops being finite.
template <typename T>
RunResult run_training(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                       uint64_t seed);

// precision dispatch on cfg.precision
RunResult run_training_dispatch(const ExperimentConfig& cfg, const Dataset& train,
                                const Dataset& test, uint64_t seed);

struct GridCell {
    double alpha = 0;
    double beta = 0;
    // per-seed metric: lowest test (train) error over epochs; divergence counts 1.0
    double mean_test_error = 1.0;
    double std_test_error = 0;
    double mean_train_error = 1.0;
    double std_train_error = 0;
    int64_t diverged = 0;
};

// Fixed-mode sweep over the cross product, all seeds per cell.
std::vector<GridCell> run_grid(const ExperimentConfig& cfg, const std::vector<double>& alphas,
                               const std::vector<double>& betas, const Dataset& train,
                               const Dataset& test);

// index of the winning cell (lowest mean test error, first on ties)
size_t best_cell(const std::vector<GridCell>& cells);

// CSV emission. Every float is printed with %.17g so equal doubles give
// equal bytes; wall_time_s is the only non-reproducible column.
void write_metrics_csv(const std::string& path, const std::vector<RunResult>& runs,
                       const std::vector<uint64_t>& seeds);
void write_trace_csv(const std::string& path, const std::vector<RunResult>& runs,
                     const std::vector<uint64_t>& seeds);
void write_grid_csv(const std::string& path, const std::vector<GridCell>& cells);

std::string format_csv_double(double v);

}  // namespace autoopt
