#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "autoopt/controller.hpp"
#include "autoopt/optim.hpp"

namespace autoopt {

// Flat key=value manifest with dotted section names ("controller.upsilon").
// '#' starts a comment, blank lines are skipped, later assignments win.
struct KeyValues {
    std::map<std::string, std::string> kv;

    static KeyValues parse_file(const std::string& path);
    static KeyValues parse_text(const std::string& text, const std::string& origin);

    void set(const std::string& key, const std::string& value) { kv[key] = value; }
    bool has(const std::string& key) const { return kv.count(key) != 0; }
};

struct ExperimentConfig {
    std::string dataset = "mnist";  // mnist | cifar10
    std::string data_dir = "data";
    int64_t subset = 0;  // retained training samples; 0 = all
    int64_t test_subset = 0;
    uint64_t subset_seed = 9001;  // shared across seeds and grid cells
    std::string arch = "mnist_cnn";  // mnist_cnn | cifar_cnn | tiny_cnn
    std::string optimizer = "sgd";   // sgd | sgd_momentum | adam | adagrad
    std::string mode = "auto";       // auto | fixed
    double alpha = 0.01;             // fixed mode
    double beta = 0.0;               // fixed mode
    int64_t batch_size = 64;
    int64_t epochs = 3;
    std::vector<uint64_t> seeds = {1};
    std::string out = "out";
    std::string precision = "f64";  // f32 | f64
    bool merge_bias_groups = false;  // true: tune a layer's weight+bias as one unit
    int64_t threads = 0;             // 0 = library default
    ControllerConfig controller = controller_defaults(OptKind::sgd);
    // Default EWMA horizon: per-step raw-estimate noise grows as batches
    // shrink, so the smoothing window holds ~3200 samples rather than a fixed
    // step count. An explicit controller.upsilon (or --upsilon) wins.
    bool upsilon_explicit = false;
    OptHyper opt_hyper;  // keys optimizer.beta2 / optimizer.eps

    OptKind opt_kind() const { return opt_kind_from_string(optimizer); }
    // Controller settings with the sample-horizon upsilon resolved for this
    // run's batch size (identity when upsilon was given explicitly).
    ControllerConfig resolved_controller() const;
    void validate() const;
};

// Applies every recognized key; throws std::invalid_argument on unknown keys
// or unparseable values (typo protection for manifests and flag overrides).
ExperimentConfig config_from_kv(const KeyValues& kv);

}  // namespace autoopt
