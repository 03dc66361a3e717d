#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "autoopt/rng.hpp"
#include "autoopt/tensor.hpp"

namespace autoopt {

enum class LayerKind { dense, conv2d, maxpool2d, relu, dropout, dropout2d, flatten, logsoftmax };

struct LayerSpec {
    LayerKind kind{};
    int64_t out_features = 0;  // dense
    int64_t out_channels = 0;  // conv2d
    int64_t kernel = 0;        // conv2d / maxpool2d
    double rate = 0.0;         // dropout / dropout2d

    static LayerSpec dense(int64_t out);
    static LayerSpec conv2d(int64_t channels, int64_t kernel);
    static LayerSpec maxpool2d(int64_t kernel);
    static LayerSpec relu();
    static LayerSpec dropout(double rate);
    static LayerSpec dropout2d(double rate);  // drops whole feature maps per sample
    static LayerSpec flatten();
    static LayerSpec logsoftmax();
};

template <typename T>
struct ParamGroup {
    std::string name;  // e.g. "conv1.weight", "fc2.bias"
    Tens<T> value;
};

// which layer a parameter group belongs to
struct ParamRef {
    int layer = -1;
    bool is_bias = false;
};

template <typename T>
struct Network {
    std::vector<int64_t> input_shape;  // per-sample shape: {C,H,W} or {features}
    std::vector<LayerSpec> layers;
    std::vector<ParamGroup<T>> params;
    std::vector<ParamRef> param_refs;                 // aligned with params
    std::vector<std::array<int, 2>> layer_params;     // per layer {weight ix, bias ix} or -1
    std::vector<std::vector<int64_t>> out_shapes;     // per layer, per-sample output shape
    int lowest_param_layer = -1;

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params) n += p.value.numel();
        return n;
    }
    int64_t num_classes() const { return out_shapes.back()[0]; }
};

// validates the layer chain against the input shape and allocates parameters
template <typename T>
Network<T> build_network(std::vector<int64_t> input_shape, std::vector<LayerSpec> layers);

// uniform init in (-1/sqrt(fan_in), 1/sqrt(fan_in)), group by group in order
template <typename T>
void init_params(Network<T>& net, Rng& rng);

enum class Mode { train, eval };

template <typename T>
struct ForwardCache {
    int64_t batch = 0;
    Mode mode = Mode::eval;
    std::vector<Tens<T>> act;                      // act[0] = input, act[l+1] = layer l output
    std::vector<Tens<T>> dropout_scale;            // per layer; 0 or 1/(1-rate) per element
    std::vector<std::vector<int32_t>> pool_argmax; // per layer
    std::vector<Tens<T>> dz;                       // per param layer: d(loss_i)/d(output), unreduced
};

// Runs the network on a batch [N, input_shape...]. In train mode dropout masks
// are drawn from `rng` independently per sample and element, unless
// `reuse_masks` supplies a previous cache whose masks are reused (used by
// finite-difference checks to hold the stochastic pass fixed).
template <typename T>
const Tens<T>& forward(const Network<T>& net, const Tens<T>& x, Mode mode, Rng& rng,
                       ForwardCache<T>& cache, const ForwardCache<T>* reuse_masks = nullptr);

// mean negative log likelihood of the targets under row-wise log probabilities
template <typename T>
double nll_loss(const Tens<T>& logprobs, const std::vector<int>& targets);

// fraction of rows whose argmax differs from the target
template <typename T>
double error_rate(const Tens<T>& logprobs, const std::vector<int>& targets);

// Phase 1: batch-mean gradients for every parameter group. Retains the
// unreduced per-sample backward signals dz in the cache for phase 2.
template <typename T>
std::vector<Tens<T>> backward_grads(const Network<T>& net, ForwardCache<T>& cache,
                                    const std::vector<int>& targets);

// Phase 2: sum_i g_i^T Hinv g_i for one parameter group, streamed from the
// cached dz without materializing per-sample gradients. hdiag is the diagonal
// of the preconditioner for that group (nullptr = identity).
template <typename T>
double group_per_sample_sumsq(const Network<T>& net, const ForwardCache<T>& cache,
                              int group_ix, const Tens<T>* hdiag);

template <typename T>
struct BatchGradStats {
    Tens<T> grad;                 // batch mean
    double per_sample_sumsq = 0;  // against the supplied preconditioner diagonal
    int64_t sample_count = 0;
};

// Both phases bundled: gradients plus per-sample statistics for every group.
// hdiag holds one entry per group (nullptr entries = identity); an empty
// vector means identity everywhere.
template <typename T>
std::vector<BatchGradStats<T>> backward(const Network<T>& net, ForwardCache<T>& cache,
                                        const std::vector<int>& targets,
                                        const std::vector<const Tens<T>*>& hdiag = {});

// Test oracle: full per-sample gradients [group][sample], computed by an
// independent naive single-sample backward walk (plain loops, shares no code
// with the batched kernels). Guarded by a parameter-count ceiling.
template <typename T>
std::vector<std::vector<Tens<T>>> materialize_per_sample_grads(
    const Network<T>& net, const ForwardCache<T>& cache, const std::vector<int>& targets,
    int64_t param_ceiling = 100000);

}  // namespace autoopt
