#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "autoopt/nn.hpp"
#include "autoopt/rng.hpp"

using namespace autoopt;

namespace {

Tens<double> random_batch(Rng& rng, std::vector<int64_t> shape) {
    Tens<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.next_normal();
    return t;
}

std::vector<int> random_targets(Rng& rng, int64_t n, int64_t classes) {
    std::vector<int> t(static_cast<size_t>(n));
    for (auto& v : t) v = static_cast<int>(rng.next_below(static_cast<uint64_t>(classes)));
    return t;
}

// max relative error between analytic gradients and central differences
double fd_check(Network<double>& net, const Tens<double>& x, const std::vector<int>& y,
                Mode mode) {
    Rng rng(99);
    ForwardCache<double> base;
    forward(net, x, mode, rng, base);
    ForwardCache<double> cache = base;
    auto grads = backward_grads(net, cache, y);

    auto loss_at = [&]() {
        Rng r2(0);  // unused: masks are reused
        ForwardCache<double> c;
        const auto& lp = forward(net, x, mode, r2, c, mode == Mode::train ? &base : nullptr);
        return nll_loss(lp, y);
    };

    const double h = 1e-5;
    double worst = 0;
    for (size_t g = 0; g < net.params.size(); ++g) {
        Tens<double>& p = net.params[g].value;
        for (int64_t e = 0; e < p.numel(); ++e) {
            const double saved = p[e];
            p[e] = saved + h;
            const double lp_ = loss_at();
            p[e] = saved - h;
            const double lm = loss_at();
            p[e] = saved;
            const double fd = (lp_ - lm) / (2 * h);
            const double an = grads[g][e];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("build_network computes shapes and parameter groups") {
    auto net = build_network<double>({1, 28, 28}, {LayerSpec::conv2d(10, 5),
                                                   LayerSpec::maxpool2d(2), LayerSpec::relu(),
                                                   LayerSpec::conv2d(20, 5),
                                                   LayerSpec::dropout(0.5),
                                                   LayerSpec::maxpool2d(2), LayerSpec::relu(),
                                                   LayerSpec::flatten(), LayerSpec::dense(50),
                                                   LayerSpec::relu(), LayerSpec::dropout(0.5),
                                                   LayerSpec::dense(10),
                                                   LayerSpec::logsoftmax()});
    CHECK(net.params.size() == 8);
    CHECK(net.params[0].name == "conv1.weight");
    CHECK(net.params[0].value.shape == std::vector<int64_t>{10, 1, 5, 5});
    CHECK(net.params[2].name == "conv2.weight");
    CHECK(net.params[2].value.shape == std::vector<int64_t>{20, 10, 5, 5});
    CHECK(net.params[4].name == "fc1.weight");
    CHECK(net.params[4].value.shape == std::vector<int64_t>{50, 320});
    CHECK(net.params[7].name == "fc2.bias");
    CHECK(net.num_classes() == 10);
    CHECK(net.param_count() == 10 * 25 + 10 + 20 * 10 * 25 + 20 + 50 * 320 + 50 + 500 + 10);
    CHECK(net.lowest_param_layer == 0);
}

TEST_CASE("build_network rejects invalid chains") {
    CHECK_THROWS_AS(build_network<double>({4}, {LayerSpec::conv2d(2, 3)}),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_network<double>({1, 4, 4}, {LayerSpec::conv2d(2, 5)}),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_network<double>({1, 4, 4}, {LayerSpec::dense(3)}),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_network<double>({4}, {LayerSpec::dropout(1.0)}),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_network<double>({1}, {LayerSpec::logsoftmax()}),
                    std::invalid_argument);
}

TEST_CASE("zero-weight network outputs uniform log probabilities") {
    auto net = build_network<double>(
        {4}, {LayerSpec::dense(10), LayerSpec::logsoftmax()});
    Rng rng(1);
    Tens<double> x = random_batch(rng, {3, 4});
    ForwardCache<double> cache;
    const auto& lp = forward(net, x, Mode::eval, rng, cache);
    for (int64_t i = 0; i < lp.numel(); ++i)
        CHECK(lp[i] == doctest::Approx(std::log(0.1)).epsilon(1e-12));
}

TEST_CASE("single dense unit with known weight and bias") {
    auto net = build_network<double>({1}, {LayerSpec::dense(1)});
    net.params[0].value[0] = 2.0;
    net.params[1].value[0] = 1.0;
    Rng rng(1);
    Tens<double> x({1, 1});
    x[0] = 3.0;
    ForwardCache<double> cache;
    const auto& out = forward(net, x, Mode::eval, rng, cache);
    CHECK(out[0] == 7.0);
}

TEST_CASE("nll_loss on uniform predictions is log C, on perfect predictions near zero") {
    Tens<double> lp({2, 10}, std::log(0.1));
    CHECK(nll_loss(lp, {3, 7}) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

    Tens<double> sharp({1, 4}, -30.0);
    sharp.at2(0, 2) = -1e-9;
    CHECK(nll_loss(sharp, {2}) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(error_rate(sharp, {2}) == 0.0);
    CHECK(error_rate(sharp, {1}) == 1.0);
}

TEST_CASE("nll_loss validates targets") {
    Tens<double> lp({2, 3}, std::log(1.0 / 3));
    CHECK_THROWS_AS(nll_loss(lp, {0, 3}), std::out_of_range);
    CHECK_THROWS_AS(nll_loss(lp, {0}), std::invalid_argument);
}

TEST_CASE("finite differences confirm dense-chain gradients") {
    Rng rng(5);
    auto net = build_network<double>(
        {6}, {LayerSpec::dense(5), LayerSpec::relu(), LayerSpec::dense(3),
              LayerSpec::logsoftmax()});
    init_params(net, rng);
    Tens<double> x = random_batch(rng, {4, 6});
    CHECK(fd_check(net, x, {0, 2, 1, 2}, Mode::eval) < 1e-5);
}

TEST_CASE("finite differences confirm conv/pool/flatten gradients") {
    Rng rng(6);
    auto net = build_network<double>(
        {2, 6, 6}, {LayerSpec::conv2d(3, 3), LayerSpec::relu(), LayerSpec::maxpool2d(2),
                    LayerSpec::flatten(), LayerSpec::dense(4), LayerSpec::logsoftmax()});
    init_params(net, rng);
    Tens<double> x = random_batch(rng, {3, 2, 6, 6});
    CHECK(fd_check(net, x, {1, 3, 0}, Mode::eval) < 1e-5);
}

TEST_CASE("finite differences confirm gradients through frozen dropout masks") {
    Rng rng(7);
    auto net = build_network<double>(
        {1, 6, 6},
        {LayerSpec::conv2d(2, 3), LayerSpec::dropout(0.4), LayerSpec::maxpool2d(2),
         LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(3),
         LayerSpec::dropout(0.3), LayerSpec::dense(3), LayerSpec::logsoftmax()});
    init_params(net, rng);
    Tens<double> x = random_batch(rng, {4, 1, 6, 6});
    CHECK(fd_check(net, x, {0, 1, 2, 1}, Mode::train) < 1e-5);
}

TEST_CASE("dropout is identity in eval mode and masks scale in train mode") {
    auto net = build_network<double>({8}, {LayerSpec::dropout(0.5)});
    Rng rng(8);
    Tens<double> x = random_batch(rng, {2, 8});
    ForwardCache<double> cache;
    const auto& out = forward(net, x, Mode::eval, rng, cache);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(out[i] == x[i]);

    ForwardCache<double> tc;
    const auto& tout = forward(net, x, Mode::train, rng, tc);
    int zeros = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const bool dropped = tout[i] == 0.0;
        if (dropped) ++zeros;
        if (!dropped) CHECK(tout[i] == doctest::Approx(2.0 * x[i]));
    }
    CHECK(zeros > 0);
    CHECK(zeros < 16);

    // reusing the cache reproduces the same realization
    ForwardCache<double> rc;
    Rng other(12345);
    const auto& rout = forward(net, x, Mode::train, other, rc, &tc);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(rout[i] == tout[i]);
}

TEST_CASE("mean of materialized per-sample gradients equals the batch gradient") {
    Rng rng(9);
    auto net = build_network<double>(
        {1, 8, 8},
        {LayerSpec::conv2d(3, 3), LayerSpec::maxpool2d(2), LayerSpec::relu(),
         LayerSpec::flatten(), LayerSpec::dense(5), LayerSpec::relu(), LayerSpec::dense(4),
         LayerSpec::logsoftmax()});
    init_params(net, rng);
    const int64_t n = 16;
    Tens<double> x = random_batch(rng, {n, 1, 8, 8});
    auto y = random_targets(rng, n, 4);

    ForwardCache<double> cache;
    forward(net, x, Mode::eval, rng, cache);
    auto grads = backward_grads(net, cache, y);
    auto per_sample = materialize_per_sample_grads(net, cache, y);

    for (size_t g = 0; g < net.params.size(); ++g) {
        Tens<double> mean = zeros_like(net.params[g].value);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t e = 0; e < mean.numel(); ++e)
                mean[e] += per_sample[g][static_cast<size_t>(i)][e];
        for (int64_t e = 0; e < mean.numel(); ++e) {
            mean[e] /= double(n);
            CHECK(std::abs(mean[e] - grads[g][e]) < 1e-10);
        }
    }
}

TEST_CASE("streaming per-sample statistics equal the materialized reduction") {
    Rng rng(10);
    auto net = build_network<double>(
        {2, 7, 7},
        {LayerSpec::conv2d(3, 3), LayerSpec::relu(), LayerSpec::flatten(),
         LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(3),
         LayerSpec::logsoftmax()});
    init_params(net, rng);
    const int64_t n = 12;
    Tens<double> x = random_batch(rng, {n, 2, 7, 7});
    auto y = random_targets(rng, n, 3);

    ForwardCache<double> cache;
    forward(net, x, Mode::eval, rng, cache);
    auto grads = backward_grads(net, cache, y);
    auto per_sample = materialize_per_sample_grads(net, cache, y);

    // random positive preconditioner diagonals per group
    std::vector<Tens<double>> hdiag(net.params.size());
    std::vector<const Tens<double>*> hptr(net.params.size());
    for (size_t g = 0; g < net.params.size(); ++g) {
        hdiag[g] = zeros_like(net.params[g].value);
        for (auto& v : hdiag[g].data) v = 0.25 + rng.next_double();
        hptr[g] = &hdiag[g];
    }

    for (size_t g = 0; g < net.params.size(); ++g) {
        for (const Tens<double>* h : {static_cast<const Tens<double>*>(nullptr), hptr[g]}) {
            double expect = 0;
            for (int64_t i = 0; i < n; ++i) {
                const auto& gi = per_sample[g][static_cast<size_t>(i)];
                for (int64_t e = 0; e < gi.numel(); ++e)
                    expect += gi[e] * gi[e] / (h ? (*h)[e] : 1.0);
            }
            const double got = group_per_sample_sumsq(net, cache, static_cast<int>(g), h);
            CHECK(got == doctest::Approx(expect).epsilon(1e-9));

            // Cauchy-Schwarz floor: sumsq >= N * g^T Hinv g
            double gg = 0;
            for (int64_t e = 0; e < grads[g].numel(); ++e)
                gg += grads[g][e] * grads[g][e] / (h ? (*h)[e] : 1.0);
            CHECK(got >= double(n) * gg - 1e-9);
        }
    }

    // the bundled call reports the same statistics
    ForwardCache<double> cache2;
    forward(net, x, Mode::eval, rng, cache2);
    auto stats = backward(net, cache2, y, hptr);
    for (size_t g = 0; g < net.params.size(); ++g) {
        CHECK(stats[g].sample_count == n);
        const double direct = group_per_sample_sumsq(net, cache, static_cast<int>(g), hptr[g]);
        CHECK(stats[g].per_sample_sumsq == doctest::Approx(direct).epsilon(1e-12));
        for (int64_t e = 0; e < grads[g].numel(); ++e)
            CHECK(stats[g].grad[e] == grads[g][e]);
    }
}

TEST_CASE("per-sample statistics honor the shared dropout realization") {
    Rng rng(11);
    auto net = build_network<double>(
        {5}, {LayerSpec::dense(6), LayerSpec::dropout(0.5), LayerSpec::dense(3),
              LayerSpec::logsoftmax()});
    init_params(net, rng);
    const int64_t n = 8;
    Tens<double> x = random_batch(rng, {n, 5});
    auto y = random_targets(rng, n, 3);

    ForwardCache<double> cache;
    forward(net, x, Mode::train, rng, cache);
    auto grads = backward_grads(net, cache, y);
    auto per_sample = materialize_per_sample_grads(net, cache, y);
    for (size_t g = 0; g < net.params.size(); ++g) {
        double expect = 0;
        Tens<double> mean = zeros_like(grads[g]);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t e = 0; e < mean.numel(); ++e) {
                const double v = per_sample[g][static_cast<size_t>(i)][e];
                mean[e] += v;
                expect += v * v;
            }
        for (int64_t e = 0; e < mean.numel(); ++e)
            CHECK(std::abs(mean[e] / n - grads[g][e]) < 1e-10);
        CHECK(group_per_sample_sumsq(net, cache, static_cast<int>(g), (const Tens<double>*)nullptr) ==
              doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("materialize guard rejects oversized networks") {
    Rng rng(12);
    auto net = build_network<double>(
        {4}, {LayerSpec::dense(8), LayerSpec::logsoftmax()});
    init_params(net, rng);
    Tens<double> x = random_batch(rng, {2, 4});
    ForwardCache<double> cache;
    forward(net, x, Mode::eval, rng, cache);
    backward_grads(net, cache, {0, 1});
    CHECK_THROWS_AS(materialize_per_sample_grads(net, cache, {0, 1}, 10),
                    std::runtime_error);
}

TEST_CASE("statistics require a completed backward pass") {
    Rng rng(13);
    auto net = build_network<double>({4}, {LayerSpec::dense(3), LayerSpec::logsoftmax()});
    init_params(net, rng);
    Tens<double> x = random_batch(rng, {2, 4});
    ForwardCache<double> cache;
    forward(net, x, Mode::eval, rng, cache);
    CHECK_THROWS_AS(group_per_sample_sumsq(net, cache, 0, (const Tens<double>*)nullptr), std::runtime_error);
}

TEST_CASE("float engine tracks the double engine closely") {
    Rng rng_d(14), rng_f(14);
    auto netd = build_network<double>(
        {1, 6, 6}, {LayerSpec::conv2d(2, 3), LayerSpec::relu(), LayerSpec::flatten(),
                    LayerSpec::dense(3), LayerSpec::logsoftmax()});
    auto netf = build_network<float>(
        {1, 6, 6}, {LayerSpec::conv2d(2, 3), LayerSpec::relu(), LayerSpec::flatten(),
                    LayerSpec::dense(3), LayerSpec::logsoftmax()});
    init_params(netd, rng_d);
    init_params(netf, rng_f);  // same draw sequence, rounded to float

    Rng rng(15);
    Tens<double> xd = random_batch(rng, {4, 1, 6, 6});
    Tens<float> xf(xd.shape);
    for (int64_t i = 0; i < xd.numel(); ++i) xf[i] = float(xd[i]);
    std::vector<int> y = {0, 1, 2, 0};

    ForwardCache<double> cd;
    ForwardCache<float> cf;
    Rng r1(0), r2(0);
    const auto& lpd = forward(netd, xd, Mode::eval, r1, cd);
    const auto& lpf = forward(netf, xf, Mode::eval, r2, cf);
    CHECK(nll_loss(lpf, y) == doctest::Approx(nll_loss(lpd, y)).epsilon(1e-4));

    auto gd = backward_grads(netd, cd, y);
    auto gf = backward_grads(netf, cf, y);
    for (size_t g = 0; g < gd.size(); ++g)
        for (int64_t e = 0; e < gd[g].numel(); ++e)
            CHECK(std::abs(double(gf[g][e]) - gd[g][e]) < 1e-4);
}
