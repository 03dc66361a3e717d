#include "autoopt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "autoopt/optim.hpp"
#include "autoopt/testbed.hpp"  // DivergenceError

namespace autoopt {

namespace {

// one jointly tuned unit: parameter group indices sharing a GammaState
struct Unit {
    std::string name;
    std::vector<int> groups;
};

template <typename T>
std::vector<Unit> make_units(const Network<T>& net, bool merge_bias) {
    std::vector<Unit> units;
    if (!merge_bias) {
        for (size_t g = 0; g < net.params.size(); ++g)
            units.push_back({net.params[g].name, {int(g)}});
        return units;
    }
    for (size_t g = 0; g < net.params.size(); ++g) {
        const int layer = net.param_refs[g].layer;
        if (!units.empty() && net.param_refs[size_t(units.back().groups[0])].layer == layer) {
            units.back().groups.push_back(int(g));
            continue;
        }
        // unit carries the layer-level name: "conv1.weight" -> "conv1"
        std::string name = net.params[g].name;
        const size_t dotpos = name.rfind('.');
        if (dotpos != std::string::npos) name = name.substr(0, dotpos);
        units.push_back({name, {int(g)}});
    }
    return units;
}

template <typename T>
void gather_batch(const Tensor& images, const std::vector<int64_t>& labels, Tens<T>& x,
                  std::vector<int>& targets) {
    if (x.shape != images.shape) x = Tens<T>(images.shape);
    for (size_t i = 0; i < images.data.size(); ++i) x.data[i] = T(images.data[i]);
    targets.resize(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) targets[i] = int(labels[i]);
}

template <typename T>
double evaluate_error(const Network<T>& net, const Dataset& data, Rng& rng) {
    const int64_t m = data.count();
    const int64_t chunk = std::min<int64_t>(m, 256);
    ForwardCache<T> cache;
    Tens<T> x;
    std::vector<int> targets;
    Tensor images;
    std::vector<int64_t> labels;
    double wrong = 0;
    for (int64_t at = 0; at < m; at += chunk) {
        const int64_t n = std::min(chunk, m - at);
        const int64_t c = data.channels(), hw = data.height() * data.width();
        if (images.dim() != 4 || images.shape[0] != n)
            images = Tensor({n, c, data.height(), data.width()});
        labels.resize(size_t(n));
        std::copy_n(data.images.ptr() + at * c * hw, n * c * hw, images.ptr());
        for (int64_t i = 0; i < n; ++i) labels[size_t(i)] = data.labels[size_t(at + i)];
        gather_batch(images, labels, x, targets);
        const Tens<T>& logp = forward(net, x, Mode::eval, rng, cache);
        wrong += error_rate(logp, targets) * double(n);
    }
    return wrong / double(m);
}

}  // namespace

template <typename T>
Network<T> build_arch(const std::string& arch, const std::vector<int64_t>& input_shape) {
    std::vector<LayerSpec> layers;
    if (arch == "mnist_cnn") {
        // conv(10,k5)/conv(20,k5) with pool 2 -> 320 features, fc 50 -> 10,
        // channel dropout after the second conv stack, element dropout after fc1
        layers = {LayerSpec::conv2d(10, 5),  LayerSpec::maxpool2d(2),
                  LayerSpec::relu(),         LayerSpec::conv2d(20, 5),
                  LayerSpec::dropout2d(0.5), LayerSpec::maxpool2d(2),
                  LayerSpec::relu(),         LayerSpec::flatten(),
                  LayerSpec::dense(50),      LayerSpec::relu(),
                  LayerSpec::dropout(0.5),   LayerSpec::dense(10),
                  LayerSpec::logsoftmax()};
    } else if (arch == "cifar_cnn") {
        // conv(6,k5)/conv(16,k5) with pool 2 -> 400 features, fc 120 -> 84 -> 10
        layers = {LayerSpec::conv2d(6, 5),  LayerSpec::maxpool2d(2), LayerSpec::relu(),
                  LayerSpec::conv2d(16, 5), LayerSpec::maxpool2d(2), LayerSpec::relu(),
                  LayerSpec::flatten(),     LayerSpec::dense(120),   LayerSpec::relu(),
                  LayerSpec::dense(84),     LayerSpec::relu(),       LayerSpec::dense(10),
                  LayerSpec::logsoftmax()};
    } else if (arch == "tiny_cnn") {
        layers = {LayerSpec::conv2d(4, 3), LayerSpec::relu(), LayerSpec::maxpool2d(2),
                  LayerSpec::flatten(),    LayerSpec::dense(10), LayerSpec::logsoftmax()};
    } else {
        throw std::invalid_argument("trainer: unknown arch '" + arch + "'");
    }
    return build_network<T>(input_shape, std::move(layers));
}

template <typename T>
RunResult run_training(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                       uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    Network<T> net = build_arch<T>(
        cfg.arch, {train.channels(), train.height(), train.width()});
    Rng root(seed);
    Rng init_rng = root.derive(0);
    init_params(net, init_rng);
    MiniBatchSampler sampler(train, cfg.batch_size, root.derive(1));
    Rng dropout_rng = root.derive(2);

    const OptKind kind = cfg.opt_kind();
    const bool auto_mode = cfg.mode == "auto";
    const std::vector<Unit> units = make_units(net, cfg.merge_bias_groups);
    std::vector<OptState<T>> opt_states(net.params.size());
    std::vector<GammaState> gamma_states(units.size(), GammaState(cfg.controller.init_alpha));

    RunResult out;
    ForwardCache<T> cache;
    Tens<T> x;
    std::vector<int> targets;
    Tensor images;
    std::vector<int64_t> labels;
    double initial_loss = -1;
    int64_t global_step = 0;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0, err_sum = 0;
        const int64_t batches = sampler.batches_per_epoch();
        for (int64_t b = 0; b < batches; ++b) {
            sampler.next_batch(images, labels);
            gather_batch(images, labels, x, targets);
            const Tens<T>& logp = forward(net, x, Mode::train, dropout_rng, cache);
            const double loss = nll_loss(logp, targets);
            if (initial_loss < 0) initial_loss = loss;
            if (!std::isfinite(loss) || loss > 1e6 * std::max(initial_loss, 1.0))
                throw DivergenceError("training diverged at step " +
                                      std::to_string(global_step) + ": loss " +
                                      std::to_string(loss));
            loss_sum += loss;
            err_sum += error_rate(logp, targets);

            std::vector<Tens<T>> grads = backward_grads(net, cache, targets);
            ++global_step;
            for (size_t u = 0; u < units.size(); ++u) {
                std::vector<UnitMember<T>> members;
                members.reserve(units[u].groups.size());
                for (int g : units[u].groups)
                    members.push_back({&net.params[size_t(g)].value, &opt_states[size_t(g)],
                                       &grads[size_t(g)]});
                if (auto_mode) {
                    TraceRecord tr = autoopt_step<T>(
                        members, gamma_states[u], kind, cfg.opt_hyper, cfg.controller,
                        cfg.batch_size,
                        [&](size_t mi, const Tens<T>& hd) {
                            return group_per_sample_sumsq(net, cache, units[u].groups[mi], &hd);
                        },
                        units[u].name);
                    tr.step = global_step;
                    out.trace.push_back(std::move(tr));
                } else {
                    fixed_step<T>(members, kind, cfg.opt_hyper, cfg.alpha, cfg.beta);
                }
            }
        }
        MetricsRow row;
        row.seed = seed;
        row.epoch = epoch;
        row.step = global_step;
        row.train_loss = loss_sum / double(batches);
        row.train_error = err_sum / double(batches);
        row.test_error = evaluate_error(net, test, dropout_rng);
        row.wall_time_s = elapsed();
        out.metrics.push_back(row);
    }
    out.final_test_error = out.metrics.back().test_error;
    for (const auto& p : net.params)
        for (const T v : p.value.data) out.final_params.push_back(double(v));
    return out;
}

RunResult run_training_dispatch(const ExperimentConfig& cfg, const Dataset& train,
                                const Dataset& test, uint64_t seed) {
    if (cfg.precision == "f32") return run_training<float>(cfg, train, test, seed);
    return run_training<double>(cfg, train, test, seed);
}

std::vector<GridCell> run_grid(const ExperimentConfig& cfg, const std::vector<double>& alphas,
                               const std::vector<double>& betas, const Dataset& train,
                               const Dataset& test) {
    if (alphas.empty() || betas.empty())
        throw std::invalid_argument("grid: alpha and beta lists must be nonempty");
    std::vector<GridCell> cells;
    for (const double alpha : alphas)
        for (const double beta : betas) {
            ExperimentConfig run_cfg = cfg;
            run_cfg.mode = "fixed";
            run_cfg.alpha = alpha;
            run_cfg.beta = beta;
            GridCell cell;
            cell.alpha = alpha;
            cell.beta = beta;
            std::vector<double> test_errs, train_errs;
            for (const uint64_t seed : cfg.seeds) {
                double te = 1.0, tr = 1.0;
                try {
                    const RunResult r = run_training_dispatch(run_cfg, train, test, seed);
                    te = 1.0;
                    tr = 1.0;
                    for (const auto& m : r.metrics) {  // lowest error over epochs
                        te = std::min(te, m.test_error);
                        tr = std::min(tr, m.train_error);
                    }
                } catch (const DivergenceError&) {
                    ++cell.diverged;
                }
                test_errs.push_back(te);
                train_errs.push_back(tr);
            }
            const auto mean_std = [](const std::vector<double>& v, double* mean, double* sd) {
                double s = 0;
                for (const double x : v) s += x;
                *mean = s / double(v.size());
                double q = 0;
                for (const double x : v) q += (x - *mean) * (x - *mean);
                *sd = v.size() > 1 ? std::sqrt(q / double(v.size() - 1)) : 0.0;
            };
            mean_std(test_errs, &cell.mean_test_error, &cell.std_test_error);
            mean_std(train_errs, &cell.mean_train_error, &cell.std_train_error);
            cells.push_back(cell);
        }
    return cells;
}

size_t best_cell(const std::vector<GridCell>& cells) {
    if (cells.empty()) throw std::invalid_argument("grid: no cells");
    size_t best = 0;
    for (size_t i = 1; i < cells.size(); ++i)
        if (cells[i].mean_test_error < cells[best].mean_test_error) best = i;
    return best;
}

std::string format_csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

struct FileCloser {
    std::FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

std::FILE* open_csv(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("csv: cannot create " + path);
    return f;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<RunResult>& runs,
                       const std::vector<uint64_t>& seeds) {
    if (runs.size() != seeds.size()) throw std::invalid_argument("csv: runs/seeds mismatch");
    std::FILE* f = open_csv(path);
    FileCloser closer{f};
    std::fputs("# schema: autoopt.metrics.v1\n", f);
    std::fputs("seed,epoch,step,train_loss,train_error,test_error,wall_time_s\n", f);
    for (size_t r = 0; r < runs.size(); ++r)
        for (const MetricsRow& m : runs[r].metrics)
            std::fprintf(f, "%llu,%lld,%lld,%s,%s,%s,%s\n",
                         (unsigned long long)seeds[r], (long long)m.epoch, (long long)m.step,
                         format_csv_double(m.train_loss).c_str(),
                         format_csv_double(m.train_error).c_str(),
                         format_csv_double(m.test_error).c_str(),
                         format_csv_double(m.wall_time_s).c_str());
}

void write_trace_csv(const std::string& path, const std::vector<RunResult>& runs,
                     const std::vector<uint64_t>& seeds) {
    if (runs.size() != seeds.size()) throw std::invalid_argument("csv: runs/seeds mismatch");
    std::FILE* f = open_csv(path);
    FileCloser closer{f};
    std::fputs("# schema: autoopt.trace.v1\n", f);
    std::fputs("seed,step,group,alpha,beta,gamma1,gamma2,vhat,a11,a12,a22,flags\n", f);
    for (size_t r = 0; r < runs.size(); ++r)
        for (const TraceRecord& t : runs[r].trace)
            std::fprintf(f, "%llu,%lld,%s,%s,%s,%s,%s,%s,%s,%s,%s,%u\n",
                         (unsigned long long)seeds[r], (long long)t.step, t.group.c_str(),
                         format_csv_double(t.alpha).c_str(), format_csv_double(t.beta).c_str(),
                         format_csv_double(t.gamma1).c_str(),
                         format_csv_double(t.gamma2).c_str(), format_csv_double(t.vhat).c_str(),
                         format_csv_double(t.a11).c_str(), format_csv_double(t.a12).c_str(),
                         format_csv_double(t.a22).c_str(), t.flags);
}

void write_grid_csv(const std::string& path, const std::vector<GridCell>& cells) {
    std::FILE* f = open_csv(path);
    FileCloser closer{f};
    std::fputs("# schema: autoopt.grid.v1\n", f);
    std::fputs(
        "alpha,beta,mean_test_error,std_test_error,mean_train_error,std_train_error,diverged,"
        "best\n",
        f);
    const size_t best = best_cell(cells);
    for (size_t i = 0; i < cells.size(); ++i) {
        const GridCell& c = cells[i];
        std::fprintf(f, "%s,%s,%s,%s,%s,%s,%lld,%d\n", format_csv_double(c.alpha).c_str(),
                     format_csv_double(c.beta).c_str(),
                     format_csv_double(c.mean_test_error).c_str(),
                     format_csv_double(c.std_test_error).c_str(),
                     format_csv_double(c.mean_train_error).c_str(),
                     format_csv_double(c.std_train_error).c_str(), (long long)c.diverged,
                     i == best ? 1 : 0);
    }
}

template Network<float> build_arch<float>(const std::string&, const std::vector<int64_t>&);
template Network<double> build_arch<double>(const std::string&, const std::vector<int64_t>&);
template RunResult run_training<float>(const ExperimentConfig&, const Dataset&, const Dataset&,
                                       uint64_t);
template RunResult run_training<double>(const ExperimentConfig&, const Dataset&, const Dataset&,
                                        uint64_t);

}  // namespace autoopt
