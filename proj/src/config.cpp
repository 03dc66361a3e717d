#include "autoopt/config.hpp"

#include <cstdio>
#include <stdexcept>

namespace autoopt {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty())
        throw std::invalid_argument("config: bad real for " + key + ": '" + v + "'");
    return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
    size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty())
        throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
    std::vector<uint64_t> out;
    size_t pos = 0;
    while (pos <= v.size()) {
        size_t comma = v.find(',', pos);
        if (comma == std::string::npos) comma = v.size();
        const std::string item = trim(v.substr(pos, comma - pos));
        if (!item.empty()) out.push_back(uint64_t(parse_int(key, item)));
        pos = comma + 1;
    }
    if (out.empty()) throw std::invalid_argument("config: empty seed list for " + key);
    return out;
}

}  // namespace

KeyValues KeyValues::parse_text(const std::string& text, const std::string& origin) {
    KeyValues out;
    size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: " + origin + ":" + std::to_string(lineno) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config: " + origin + ":" + std::to_string(lineno) +
                                        ": empty key");
        out.kv[key] = value;
    }
    return out;
}

KeyValues KeyValues::parse_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::string text;
    char buf[4096];
    size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
    std::fclose(f);
    return parse_text(text, path);
}

ExperimentConfig config_from_kv(const KeyValues& kvs) {
    ExperimentConfig c;
    // the optimizer choice sets the controller's default clamp box and
    // init_alpha; explicit controller.* keys below still override them
    if (kvs.has("optimizer")) c.optimizer = kvs.kv.at("optimizer");
    c.controller = controller_defaults(c.opt_kind());
    for (const auto& [key, v] : kvs.kv) {
        if (key == "dataset") c.dataset = v;
        else if (key == "data_dir") c.data_dir = v;
        else if (key == "subset") c.subset = parse_int(key, v);
        else if (key == "test_subset") c.test_subset = parse_int(key, v);
        else if (key == "subset_seed") c.subset_seed = uint64_t(parse_int(key, v));
        else if (key == "arch") c.arch = v;
        else if (key == "optimizer") c.optimizer = v;
        else if (key == "mode") c.mode = v;
        else if (key == "alpha") c.alpha = parse_double(key, v);
        else if (key == "beta") c.beta = parse_double(key, v);
        else if (key == "batch_size") c.batch_size = parse_int(key, v);
        else if (key == "epochs") c.epochs = parse_int(key, v);
        else if (key == "seeds") c.seeds = parse_seed_list(key, v);
        else if (key == "out") c.out = v;
        else if (key == "precision") c.precision = v;
        else if (key == "merge_bias_groups") c.merge_bias_groups = parse_bool(key, v);
        else if (key == "threads") c.threads = parse_int(key, v);
        else if (key == "controller.upsilon") {
            c.controller.upsilon = parse_double(key, v);
            c.upsilon_explicit = true;
        }
        else if (key == "controller.ridge") c.controller.ridge = parse_double(key, v);
        else if (key == "controller.init_alpha") c.controller.init_alpha = parse_double(key, v);
        else if (key == "controller.warmup_steps") c.controller.warmup_steps = parse_int(key, v);
        else if (key == "controller.alpha_min") c.controller.clamp.alpha_min = parse_double(key, v);
        else if (key == "controller.alpha_max") c.controller.clamp.alpha_max = parse_double(key, v);
        else if (key == "controller.beta_max") c.controller.clamp.beta_max = parse_double(key, v);
        else if (key == "controller.ident_threshold")
            c.controller.ident_threshold = parse_double(key, v);
        else if (key == "controller.adagrad_mode") {
            if (v == "alpha_only") c.controller.adagrad_mode = AdaGradMode::alpha_only;
            else if (v == "full") c.controller.adagrad_mode = AdaGradMode::full;
            else throw std::invalid_argument("config: bad controller.adagrad_mode '" + v + "'");
        } else if (key == "optimizer.beta2") c.opt_hyper.beta2 = parse_double(key, v);
        else if (key == "optimizer.eps") c.opt_hyper.eps = parse_double(key, v);
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

ControllerConfig ExperimentConfig::resolved_controller() const {
    ControllerConfig ctrl = controller;
    if (!upsilon_explicit) {
        // hold the smoothing window at ~3200 samples across batch sizes so the
        // smoothed estimate carries the same evidence regardless of N
        ctrl.upsilon = std::clamp(1.0 - double(batch_size) / 3200.0, 0.9, 0.995);
    }
    return ctrl;
}

void ExperimentConfig::validate() const {
    if (dataset != "mnist" && dataset != "cifar10")
        throw std::invalid_argument("config: dataset must be mnist or cifar10");
    if (arch != "mnist_cnn" && arch != "cifar_cnn" && arch != "tiny_cnn")
        throw std::invalid_argument("config: unknown arch '" + arch + "'");
    opt_kind_from_string(optimizer);  // throws on unknown
    if (mode != "auto" && mode != "fixed")
        throw std::invalid_argument("config: mode must be auto or fixed");
    if (mode == "fixed" && !(alpha > 0))
        throw std::invalid_argument("config: fixed mode needs alpha > 0");
    if (beta < 0 || beta >= 1) throw std::invalid_argument("config: beta must be in [0, 1)");
    const int64_t min_batch = mode == "auto" ? 2 : 1;
    if (batch_size < min_batch)
        throw std::invalid_argument("config: batch_size must be >= " + std::to_string(min_batch));
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("config: seeds must be nonempty");
    if (subset < 0 || test_subset < 0)
        throw std::invalid_argument("config: subset sizes must be >= 0");
    if (precision != "f32" && precision != "f64")
        throw std::invalid_argument("config: precision must be f32 or f64");
    if (threads < 0) throw std::invalid_argument("config: threads must be >= 0");
    if (!(opt_hyper.beta2 > 0 && opt_hyper.beta2 < 1))
        throw std::invalid_argument("config: optimizer.beta2 must be in (0, 1)");
    if (!(opt_hyper.eps > 0)) throw std::invalid_argument("config: optimizer.eps must be > 0");
    controller.validate();
}

}  // namespace autoopt
