#include "autoopt/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "autoopt/kernels.hpp"

namespace autoopt {

using kernels::ConvDims;

LayerSpec LayerSpec::dense(int64_t out) { return {LayerKind::dense, out, 0, 0, 0.0}; }
LayerSpec LayerSpec::conv2d(int64_t channels, int64_t kernel) {
    return {LayerKind::conv2d, 0, channels, kernel, 0.0};
}
LayerSpec LayerSpec::maxpool2d(int64_t kernel) {
    return {LayerKind::maxpool2d, 0, 0, kernel, 0.0};
}
LayerSpec LayerSpec::relu() { return {LayerKind::relu, 0, 0, 0, 0.0}; }
LayerSpec LayerSpec::dropout(double rate) { return {LayerKind::dropout, 0, 0, 0, rate}; }
LayerSpec LayerSpec::dropout2d(double rate) { return {LayerKind::dropout2d, 0, 0, 0, rate}; }
LayerSpec LayerSpec::flatten() { return {LayerKind::flatten, 0, 0, 0, 0.0}; }
LayerSpec LayerSpec::logsoftmax() { return {LayerKind::logsoftmax, 0, 0, 0, 0.0}; }

static int64_t shape_numel(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

template <typename T>
Network<T> build_network(std::vector<int64_t> input_shape, std::vector<LayerSpec> layers) {
    if (input_shape.empty()) throw std::invalid_argument("build_network: empty input shape");
    for (int64_t e : input_shape)
        if (e <= 0) throw std::invalid_argument("build_network: nonpositive input extent");

    Network<T> net;
    net.input_shape = input_shape;
    net.layers = std::move(layers);
    net.layer_params.assign(net.layers.size(), {-1, -1});

    std::vector<int64_t> shape = input_shape;
    int conv_count = 0, fc_count = 0;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& ls = net.layers[l];
        switch (ls.kind) {
            case LayerKind::dense: {
                if (shape.size() != 1)
                    throw std::invalid_argument("dense layer needs a flat input");
                if (ls.out_features <= 0)
                    throw std::invalid_argument("dense layer needs out_features > 0");
                const std::string base = "fc" + std::to_string(++fc_count);
                net.layer_params[l][0] = static_cast<int>(net.params.size());
                net.params.push_back({base + ".weight", Tens<T>({ls.out_features, shape[0]})});
                net.param_refs.push_back({static_cast<int>(l), false});
                net.layer_params[l][1] = static_cast<int>(net.params.size());
                net.params.push_back({base + ".bias", Tens<T>({ls.out_features})});
                net.param_refs.push_back({static_cast<int>(l), true});
                shape = {ls.out_features};
                break;
            }
            case LayerKind::conv2d: {
                if (shape.size() != 3)
                    throw std::invalid_argument("conv2d layer needs a C,H,W input");
                if (ls.out_channels <= 0 || ls.kernel <= 0)
                    throw std::invalid_argument("conv2d layer needs channels and kernel > 0");
                if (ls.kernel > shape[1] || ls.kernel > shape[2])
                    throw std::invalid_argument("conv2d kernel exceeds the input extent");
                const std::string base = "conv" + std::to_string(++conv_count);
                net.layer_params[l][0] = static_cast<int>(net.params.size());
                net.params.push_back(
                    {base + ".weight", Tens<T>({ls.out_channels, shape[0], ls.kernel, ls.kernel})});
                net.param_refs.push_back({static_cast<int>(l), false});
                net.layer_params[l][1] = static_cast<int>(net.params.size());
                net.params.push_back({base + ".bias", Tens<T>({ls.out_channels})});
                net.param_refs.push_back({static_cast<int>(l), true});
                shape = {ls.out_channels, shape[1] - ls.kernel + 1, shape[2] - ls.kernel + 1};
                break;
            }
            case LayerKind::maxpool2d: {
                if (shape.size() != 3)
                    throw std::invalid_argument("maxpool2d layer needs a C,H,W input");
                if (ls.kernel <= 0 || shape[1] / ls.kernel < 1 || shape[2] / ls.kernel < 1)
                    throw std::invalid_argument("maxpool2d kernel exceeds the input extent");
                shape = {shape[0], shape[1] / ls.kernel, shape[2] / ls.kernel};
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::dropout2d:
                if (shape.size() != 3)
                    throw std::invalid_argument("dropout2d layer needs a C,H,W input");
                [[fallthrough]];
            case LayerKind::dropout:
                if (ls.rate < 0.0 || ls.rate >= 1.0)
                    throw std::invalid_argument("dropout rate must lie in [0, 1)");
                break;
            case LayerKind::flatten:
                shape = {shape_numel(shape)};
                break;
            case LayerKind::logsoftmax:
                if (shape.size() != 1 || shape[0] < 2)
                    throw std::invalid_argument("logsoftmax needs a flat input of >= 2 classes");
                break;
        }
        net.out_shapes.push_back(shape);
        if (net.layer_params[l][0] >= 0 && net.lowest_param_layer < 0)
            net.lowest_param_layer = static_cast<int>(l);
    }
    return net;
}

template <typename T>
void init_params(Network<T>& net, Rng& rng) {
    for (size_t g = 0; g < net.params.size(); ++g) {
        const ParamRef& ref = net.param_refs[g];
        const LayerSpec& ls = net.layers[static_cast<size_t>(ref.layer)];
        int64_t fan_in;
        if (ls.kind == LayerKind::dense) {
            const int wix = net.layer_params[static_cast<size_t>(ref.layer)][0];
            fan_in = net.params[static_cast<size_t>(wix)].value.shape[1];
        } else {  // conv2d
            const int wix = net.layer_params[static_cast<size_t>(ref.layer)][0];
            const auto& ws = net.params[static_cast<size_t>(wix)].value.shape;
            fan_in = ws[1] * ws[2] * ws[3];
        }
        const double s = 1.0 / std::sqrt(double(fan_in));
        for (auto& v : net.params[g].value.data) v = T(rng.next_uniform(-s, s));
    }
}

template <typename T>
static void validate_batch_input(const Network<T>& net, const Tens<T>& x) {
    if (x.dim() != static_cast<int64_t>(net.input_shape.size()) + 1 || x.shape[0] < 1)
        throw std::invalid_argument("forward: batch shape mismatch");
    for (size_t i = 0; i < net.input_shape.size(); ++i)
        if (x.shape[i + 1] != net.input_shape[i])
            throw std::invalid_argument("forward: sample shape mismatch");
}

template <typename T>
static std::vector<int64_t> with_batch(int64_t n, const std::vector<int64_t>& sample) {
    std::vector<int64_t> s;
    s.reserve(sample.size() + 1);
    s.push_back(n);
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

template <typename T>
static ConvDims conv_dims(const Tens<T>& in, const LayerSpec& ls) {
    return ConvDims{in.shape[0], in.shape[1], in.shape[2], in.shape[3], ls.out_channels,
                    ls.kernel};
}

template <typename T>
const Tens<T>& forward(const Network<T>& net, const Tens<T>& x, Mode mode, Rng& rng,
                       ForwardCache<T>& cache, const ForwardCache<T>* reuse_masks) {
    validate_batch_input(net, x);
    const size_t L = net.layers.size();
    const int64_t n = x.shape[0];

    cache.batch = n;
    cache.mode = mode;
    cache.act.assign(L + 1, Tens<T>());
    cache.dropout_scale.assign(L, Tens<T>());
    cache.pool_argmax.assign(L, {});
    cache.dz.assign(L, Tens<T>());
    cache.act[0] = x;

    for (size_t l = 0; l < L; ++l) {
        const LayerSpec& ls = net.layers[l];
        const Tens<T>& in = cache.act[l];
        Tens<T> out(with_batch<T>(n, net.out_shapes[l]));
        switch (ls.kind) {
            case LayerKind::dense: {
                const auto& w = net.params[static_cast<size_t>(net.layer_params[l][0])].value;
                const auto& b = net.params[static_cast<size_t>(net.layer_params[l][1])].value;
                kernels::dense_forward(in.ptr(), w.ptr(), b.ptr(), out.ptr(), n, in.shape[1],
                                       out.shape[1]);
                break;
            }
            case LayerKind::conv2d: {
                const auto& w = net.params[static_cast<size_t>(net.layer_params[l][0])].value;
                const auto& b = net.params[static_cast<size_t>(net.layer_params[l][1])].value;
                kernels::conv2d_forward(in.ptr(), w.ptr(), b.ptr(), out.ptr(),
                                        conv_dims(in, ls));
                break;
            }
            case LayerKind::maxpool2d: {
                cache.pool_argmax[l].assign(static_cast<size_t>(out.numel()), 0);
                kernels::maxpool_forward(in.ptr(), out.ptr(), cache.pool_argmax[l].data(), n,
                                         in.shape[1], in.shape[2], in.shape[3], ls.kernel);
                break;
            }
            case LayerKind::relu:
                kernels::relu_forward(in.ptr(), out.ptr(), in.numel());
                break;
            case LayerKind::dropout:
            case LayerKind::dropout2d: {
                if (mode == Mode::eval) {
                    out.data = in.data;
                    break;
                }
                if (reuse_masks) {
                    if (reuse_masks->dropout_scale[l].numel() != in.numel())
                        throw std::invalid_argument("forward: reuse mask shape mismatch");
                    cache.dropout_scale[l] = reuse_masks->dropout_scale[l];
                } else {
                    Tens<T> scale(in.shape);
                    const T keep_inv = T(1.0 / (1.0 - ls.rate));
                    if (ls.kind == LayerKind::dropout) {
                        // independent per sample and element
                        for (auto& v : scale.data)
                            v = rng.next_double() >= ls.rate ? keep_inv : T(0);
                    } else {
                        // independent per sample and channel: whole feature maps drop
                        const int64_t hw = in.shape[2] * in.shape[3];
                        for (int64_t nc = 0; nc < n * in.shape[1]; ++nc) {
                            const T s = rng.next_double() >= ls.rate ? keep_inv : T(0);
                            std::fill_n(scale.ptr() + nc * hw, hw, s);
                        }
                    }
                    cache.dropout_scale[l] = std::move(scale);
                }
                const T* sc = cache.dropout_scale[l].ptr();
                for (int64_t i = 0; i < in.numel(); ++i) out[i] = in[i] * sc[i];
                break;
            }
            case LayerKind::flatten:
                out.data = in.data;  // same storage order, new shape
                break;
            case LayerKind::logsoftmax:
                kernels::logsoftmax_forward(in.ptr(), out.ptr(), n, in.shape[1]);
                break;
        }
        check_finite(out, "forward layer " + std::to_string(l));
        cache.act[l + 1] = std::move(out);
    }
    return cache.act[L];
}

template <typename T>
static void validate_targets(const Tens<T>& logprobs, const std::vector<int>& targets) {
    if (logprobs.dim() != 2) throw std::invalid_argument("expected [N, classes] log probabilities");
    if (static_cast<int64_t>(targets.size()) != logprobs.shape[0])
        throw std::invalid_argument("target count does not match the batch");
    for (int t : targets)
        if (t < 0 || t >= logprobs.shape[1])
            throw std::out_of_range("target class out of range");
}

template <typename T>
double nll_loss(const Tens<T>& logprobs, const std::vector<int>& targets) {
    validate_targets(logprobs, targets);
    double s = 0;
    for (int64_t i = 0; i < logprobs.shape[0]; ++i)
        s -= double(logprobs.at2(i, targets[static_cast<size_t>(i)]));
    return s / double(logprobs.shape[0]);
}

template <typename T>
double error_rate(const Tens<T>& logprobs, const std::vector<int>& targets) {
    validate_targets(logprobs, targets);
    int64_t wrong = 0;
    for (int64_t i = 0; i < logprobs.shape[0]; ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < logprobs.shape[1]; ++j)
            if (logprobs.at2(i, j) > logprobs.at2(i, best)) best = j;
        if (best != targets[static_cast<size_t>(i)]) ++wrong;
    }
    return double(wrong) / double(logprobs.shape[0]);
}

template <typename T>
static void validate_cache(const Network<T>& net, const ForwardCache<T>& cache) {
    if (cache.act.size() != net.layers.size() + 1 || cache.batch < 1)
        throw std::runtime_error("backward: forward pass has not populated the cache");
}

template <typename T>
std::vector<Tens<T>> backward_grads(const Network<T>& net, ForwardCache<T>& cache,
                                    const std::vector<int>& targets) {
    validate_cache(net, cache);
    const size_t L = net.layers.size();
    const int64_t n = cache.batch;
    const Tens<T>& out = cache.act[L];
    validate_targets(out, targets);

    std::vector<Tens<T>> grads(net.params.size());
    for (size_t g = 0; g < net.params.size(); ++g) grads[g] = zeros_like(net.params[g].value);
    if (net.lowest_param_layer < 0) return grads;

    // seed: d(per-sample NLL)/d(logprob) = -onehot, unreduced
    Tens<T> g = zeros_like(out);
    for (int64_t i = 0; i < n; ++i) g.at2(i, targets[static_cast<size_t>(i)]) = T(-1);

    for (int l = static_cast<int>(L) - 1; l >= net.lowest_param_layer; --l) {
        const LayerSpec& ls = net.layers[static_cast<size_t>(l)];
        const Tens<T>& in = cache.act[static_cast<size_t>(l)];
        const Tens<T>& outl = cache.act[static_cast<size_t>(l) + 1];
        switch (ls.kind) {
            case LayerKind::logsoftmax: {
                Tens<T> dx = zeros_like(in);
                kernels::logsoftmax_backward(g.ptr(), outl.ptr(), dx.ptr(), n, in.shape[1]);
                g = std::move(dx);
                break;
            }
            case LayerKind::relu: {
                Tens<T> dx = zeros_like(in);
                kernels::relu_backward(g.ptr(), in.ptr(), dx.ptr(), in.numel());
                g = std::move(dx);
                break;
            }
            case LayerKind::dropout:
            case LayerKind::dropout2d: {
                if (cache.mode == Mode::train) {
                    const T* sc = cache.dropout_scale[static_cast<size_t>(l)].ptr();
                    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= sc[i];
                }
                break;
            }
            case LayerKind::flatten:
                g.shape = in.shape;
                break;
            case LayerKind::maxpool2d: {
                Tens<T> dx = zeros_like(in);
                kernels::maxpool_backward(g.ptr(), cache.pool_argmax[static_cast<size_t>(l)].data(),
                                          dx.ptr(), n, in.shape[1], in.shape[2], in.shape[3],
                                          ls.kernel);
                g = std::move(dx);
                break;
            }
            case LayerKind::dense: {
                const int wix = net.layer_params[static_cast<size_t>(l)][0];
                const int bix = net.layer_params[static_cast<size_t>(l)][1];
                cache.dz[static_cast<size_t>(l)] = std::move(g);
                const Tens<T>& dz = cache.dz[static_cast<size_t>(l)];
                kernels::dense_grad(dz.ptr(), in.ptr(), grads[static_cast<size_t>(wix)].ptr(),
                                    grads[static_cast<size_t>(bix)].ptr(), n, in.shape[1],
                                    dz.shape[1]);
                if (l > net.lowest_param_layer) {
                    Tens<T> dx = zeros_like(in);
                    const auto& w = net.params[static_cast<size_t>(wix)].value;
                    kernels::dense_backward_input(dz.ptr(), w.ptr(), dx.ptr(), n, in.shape[1],
                                                  dz.shape[1]);
                    g = std::move(dx);
                }
                break;
            }
            case LayerKind::conv2d: {
                const int wix = net.layer_params[static_cast<size_t>(l)][0];
                const int bix = net.layer_params[static_cast<size_t>(l)][1];
                cache.dz[static_cast<size_t>(l)] = std::move(g);
                const Tens<T>& dz = cache.dz[static_cast<size_t>(l)];
                const ConvDims d = conv_dims(in, ls);
                kernels::conv2d_grad(dz.ptr(), in.ptr(), grads[static_cast<size_t>(wix)].ptr(),
                                     grads[static_cast<size_t>(bix)].ptr(), d);
                if (l > net.lowest_param_layer) {
                    Tens<T> dx = zeros_like(in);
                    const auto& w = net.params[static_cast<size_t>(wix)].value;
                    kernels::conv2d_backward_input(dz.ptr(), w.ptr(), dx.ptr(), d);
                    g = std::move(dx);
                }
                break;
            }
        }
    }
    for (size_t gix = 0; gix < grads.size(); ++gix)
        check_finite(grads[gix], "gradient of " + net.params[gix].name);
    return grads;
}

template <typename T>
double group_per_sample_sumsq(const Network<T>& net, const ForwardCache<T>& cache,
                              int group_ix, const Tens<T>* hdiag) {
    validate_cache(net, cache);
    if (group_ix < 0 || group_ix >= static_cast<int>(net.params.size()))
        throw std::invalid_argument("group_per_sample_sumsq: bad group index");
    const ParamRef& ref = net.param_refs[static_cast<size_t>(group_ix)];
    const LayerSpec& ls = net.layers[static_cast<size_t>(ref.layer)];
    const Tens<T>& in = cache.act[static_cast<size_t>(ref.layer)];
    const Tens<T>& dz = cache.dz[static_cast<size_t>(ref.layer)];
    if (dz.numel() == 0)
        throw std::runtime_error("group_per_sample_sumsq: backward_grads must run first");

    const Tens<T>& param = net.params[static_cast<size_t>(group_ix)].value;
    Tens<T> hinv;
    const T* hptr = nullptr;
    if (hdiag) {
        if (!hdiag->same_shape(param))
            throw std::invalid_argument("group_per_sample_sumsq: preconditioner shape mismatch");
        hinv = Tens<T>(hdiag->shape);
        for (int64_t i = 0; i < hinv.numel(); ++i) hinv[i] = T(1) / (*hdiag)[i];
        hptr = hinv.ptr();
    }

    double s = 0;
    if (ls.kind == LayerKind::dense) {
        const int64_t n = cache.batch, infeat = in.shape[1], out = dz.shape[1];
        if (!ref.is_bias)
            kernels::dense_per_sample_sumsq(dz.ptr(), in.ptr(), hptr, (const T*)nullptr, n,
                                            infeat, out, &s, nullptr);
        else
            kernels::dense_per_sample_sumsq(dz.ptr(), in.ptr(), (const T*)nullptr, hptr, n,
                                            infeat, out, nullptr, &s);
    } else {
        const ConvDims d = conv_dims(in, ls);
        if (!ref.is_bias) {
            Tens<T> scratch({d.weight_count()});
            kernels::conv2d_per_sample_sumsq(dz.ptr(), in.ptr(), hptr, (const T*)nullptr, d,
                                             scratch.ptr(), &s, nullptr);
        } else {
            kernels::conv2d_per_sample_sumsq(dz.ptr(), in.ptr(), (const T*)nullptr, hptr, d,
                                             (T*)nullptr, nullptr, &s);
        }
    }
    if (!std::isfinite(s))
        throw std::runtime_error("group_per_sample_sumsq: non-finite statistic");
    return s;
}

template <typename T>
std::vector<BatchGradStats<T>> backward(const Network<T>& net, ForwardCache<T>& cache,
                                        const std::vector<int>& targets,
                                        const std::vector<const Tens<T>*>& hdiag) {
    if (!hdiag.empty() && hdiag.size() != net.params.size())
        throw std::invalid_argument("backward: one preconditioner entry per group required");
    std::vector<Tens<T>> grads = backward_grads(net, cache, targets);
    std::vector<BatchGradStats<T>> out(net.params.size());
    for (size_t g = 0; g < net.params.size(); ++g) {
        out[g].grad = std::move(grads[g]);
        out[g].per_sample_sumsq = group_per_sample_sumsq(
            net, cache, static_cast<int>(g), hdiag.empty() ? nullptr : hdiag[g]);
        out[g].sample_count = cache.batch;
    }
    return out;
}

// ---------------------------------------------------------------------------
// naive per-sample oracle
// ---------------------------------------------------------------------------

template <typename T>
std::vector<std::vector<Tens<T>>> materialize_per_sample_grads(
    const Network<T>& net, const ForwardCache<T>& cache, const std::vector<int>& targets,
    int64_t param_ceiling) {
    validate_cache(net, cache);
    if (net.param_count() > param_ceiling)
        throw std::runtime_error("materialize_per_sample_grads: parameter-count ceiling exceeded");
    const size_t L = net.layers.size();
    const int64_t n = cache.batch;
    validate_targets(cache.act[L], targets);

    std::vector<std::vector<Tens<T>>> result(net.params.size());
    for (size_t g = 0; g < net.params.size(); ++g)
        result[g].assign(static_cast<size_t>(n), Tens<T>());

    for (int64_t i = 0; i < n; ++i) {
        // slice this sample's activations
        std::vector<Tens<T>> a(L + 1);
        for (size_t l = 0; l <= L; ++l) {
            const Tens<T>& full = cache.act[l];
            std::vector<int64_t> sshape(full.shape.begin() + 1, full.shape.end());
            Tens<T> s(sshape);
            const int64_t stride = s.numel();
            for (int64_t e = 0; e < stride; ++e) s[e] = full[i * stride + e];
            a[l] = std::move(s);
        }

        Tens<T> dy = zeros_like(a[L]);
        dy[targets[static_cast<size_t>(i)]] = T(-1);

        for (int l = static_cast<int>(L) - 1; l >= 0; --l) {
            const LayerSpec& ls = net.layers[static_cast<size_t>(l)];
            const Tens<T>& in = a[static_cast<size_t>(l)];
            const Tens<T>& out = a[static_cast<size_t>(l) + 1];
            switch (ls.kind) {
                case LayerKind::logsoftmax: {
                    double s = 0;
                    for (int64_t j = 0; j < dy.numel(); ++j) s += double(dy[j]);
                    Tens<T> dx = zeros_like(in);
                    for (int64_t j = 0; j < dx.numel(); ++j)
                        dx[j] = dy[j] - T(std::exp(double(out[j])) * s);
                    dy = std::move(dx);
                    break;
                }
                case LayerKind::relu: {
                    Tens<T> dx = zeros_like(in);
                    for (int64_t j = 0; j < dx.numel(); ++j)
                        dx[j] = in[j] > T(0) ? dy[j] : T(0);
                    dy = std::move(dx);
                    break;
                }
                case LayerKind::dropout:
                case LayerKind::dropout2d: {
                    if (cache.mode == Mode::train) {
                        const Tens<T>& sc = cache.dropout_scale[static_cast<size_t>(l)];
                        const int64_t stride = dy.numel();
                        for (int64_t j = 0; j < stride; ++j) dy[j] *= sc[i * stride + j];
                    }
                    break;
                }
                case LayerKind::flatten:
                    dy.shape = in.shape;
                    break;
                case LayerKind::maxpool2d: {
                    const int64_t c = in.shape[0], h = in.shape[1], w = in.shape[2];
                    const int64_t k = ls.kernel, ho = h / k, wo = w / k;
                    Tens<T> dx = zeros_like(in);
                    for (int64_t ch = 0; ch < c; ++ch)
                        for (int64_t oy = 0; oy < ho; ++oy)
                            for (int64_t ox = 0; ox < wo; ++ox) {
                                // recompute the argmax; ties to the lowest linear index
                                int64_t best = -1;
                                T bv = T(0);
                                for (int64_t ky = 0; ky < k; ++ky)
                                    for (int64_t kx = 0; kx < k; ++kx) {
                                        const int64_t off =
                                            (ch * h + oy * k + ky) * w + ox * k + kx;
                                        if (best < 0 || in[off] > bv) {
                                            bv = in[off];
                                            best = off;
                                        }
                                    }
                                dx[best] += dy[(ch * ho + oy) * wo + ox];
                            }
                    dy = std::move(dx);
                    break;
                }
                case LayerKind::dense: {
                    const int wix = net.layer_params[static_cast<size_t>(l)][0];
                    const int bix = net.layer_params[static_cast<size_t>(l)][1];
                    const auto& w = net.params[static_cast<size_t>(wix)].value;
                    const int64_t infeat = in.shape[0], outfeat = dy.shape[0];
                    Tens<T> gw({outfeat, infeat}), gb({outfeat});
                    for (int64_t o = 0; o < outfeat; ++o) {
                        for (int64_t j = 0; j < infeat; ++j) gw.at2(o, j) = dy[o] * in[j];
                        gb[o] = dy[o];
                    }
                    result[static_cast<size_t>(wix)][static_cast<size_t>(i)] = std::move(gw);
                    result[static_cast<size_t>(bix)][static_cast<size_t>(i)] = std::move(gb);
                    Tens<T> dx = zeros_like(in);
                    for (int64_t j = 0; j < infeat; ++j) {
                        double s = 0;
                        for (int64_t o = 0; o < outfeat; ++o)
                            s += double(dy[o]) * double(w.at2(o, j));
                        dx[j] = T(s);
                    }
                    dy = std::move(dx);
                    break;
                }
                case LayerKind::conv2d: {
                    const int wix = net.layer_params[static_cast<size_t>(l)][0];
                    const int bix = net.layer_params[static_cast<size_t>(l)][1];
                    const auto& w = net.params[static_cast<size_t>(wix)].value;
                    const int64_t cin = in.shape[0], h = in.shape[1], ww = in.shape[2];
                    const int64_t cout = ls.out_channels, k = ls.kernel;
                    const int64_t ho = h - k + 1, wo = ww - k + 1;
                    Tens<T> gw({cout, cin, k, k}), gb({cout});
                    for (int64_t co = 0; co < cout; ++co) {
                        T bs = T(0);
                        for (int64_t y = 0; y < ho; ++y)
                            for (int64_t px = 0; px < wo; ++px)
                                bs += dy[(co * ho + y) * wo + px];
                        gb[co] = bs;
                        for (int64_t ci = 0; ci < cin; ++ci)
                            for (int64_t ky = 0; ky < k; ++ky)
                                for (int64_t kx = 0; kx < k; ++kx) {
                                    T s = T(0);
                                    for (int64_t y = 0; y < ho; ++y)
                                        for (int64_t px = 0; px < wo; ++px)
                                            s += dy[(co * ho + y) * wo + px] *
                                                 in[(ci * h + y + ky) * ww + px + kx];
                                    gw.at4(co, ci, ky, kx) = s;
                                }
                    }
                    result[static_cast<size_t>(wix)][static_cast<size_t>(i)] = std::move(gw);
                    result[static_cast<size_t>(bix)][static_cast<size_t>(i)] = std::move(gb);
                    Tens<T> dx = zeros_like(in);
                    for (int64_t ci = 0; ci < cin; ++ci)
                        for (int64_t y = 0; y < h; ++y)
                            for (int64_t px = 0; px < ww; ++px) {
                                double s = 0;
                                for (int64_t co = 0; co < cout; ++co)
                                    for (int64_t ky = 0; ky < k; ++ky)
                                        for (int64_t kx = 0; kx < k; ++kx) {
                                            const int64_t oy = y - ky, ox = px - kx;
                                            if (oy < 0 || oy >= ho || ox < 0 || ox >= wo)
                                                continue;
                                            s += double(w.at4(co, ci, ky, kx)) *
                                                 double(dy[(co * ho + oy) * wo + ox]);
                                        }
                                dx[(ci * h + y) * ww + px] = T(s);
                            }
                    dy = std::move(dx);
                    break;
                }
            }
        }
    }
    return result;
}

#define AUTOOPT_INSTANTIATE_NN(T)                                                            \
    template Network<T> build_network(std::vector<int64_t>, std::vector<LayerSpec>);         \
    template void init_params(Network<T>&, Rng&);                                            \
    template const Tens<T>& forward(const Network<T>&, const Tens<T>&, Mode, Rng&,           \
                                    ForwardCache<T>&, const ForwardCache<T>*);               \
    template double nll_loss(const Tens<T>&, const std::vector<int>&);                       \
    template double error_rate(const Tens<T>&, const std::vector<int>&);                     \
    template std::vector<Tens<T>> backward_grads(const Network<T>&, ForwardCache<T>&,        \
                                                 const std::vector<int>&);                   \
    template double group_per_sample_sumsq(const Network<T>&, const ForwardCache<T>&, int,   \
                                           const Tens<T>*);                                  \
    template std::vector<BatchGradStats<T>> backward(const Network<T>&, ForwardCache<T>&,    \
                                                     const std::vector<int>&,                \
                                                     const std::vector<const Tens<T>*>&);    \
    template std::vector<std::vector<Tens<T>>> materialize_per_sample_grads(                 \
        const Network<T>&, const ForwardCache<T>&, const std::vector<int>&, int64_t);

AUTOOPT_INSTANTIATE_NN(float)
AUTOOPT_INSTANTIATE_NN(double)

}  // namespace autoopt
