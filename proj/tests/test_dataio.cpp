#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "autoopt/data.hpp"
#include "autoopt/synth.hpp"

using namespace autoopt;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

void write_raw(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    if (!bytes.empty()) std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
}

std::vector<uint8_t> read_raw(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    REQUIRE(f != nullptr);
    std::fseek(f, 0, SEEK_END);
    std::vector<uint8_t> b(size_t(std::ftell(f)));
    std::fseek(f, 0, SEEK_SET);
    if (!b.empty()) REQUIRE(std::fread(b.data(), 1, b.size(), f) == b.size());
    std::fclose(f);
    return b;
}

}  // namespace

TEST_CASE("idx fixture round trip reproduces exact k/255 values") {
    // 2 images of 2 x 3 with every byte distinct
    std::vector<uint8_t> pixels(12);
    std::iota(pixels.begin(), pixels.end(), uint8_t(1));
    pixels[11] = 255;
    const std::vector<uint8_t> labels = {4, 9};
    TempFile fi("fixture_idx_images"), fl("fixture_idx_labels");
    write_idx_images(fi.path, pixels, 2, 2, 3);
    write_idx_labels(fl.path, labels);

    Dataset d = load_idx(fi.path, fl.path, "train");
    CHECK(d.split == "train");
    CHECK(d.count() == 2);
    CHECK(d.channels() == 1);
    CHECK(d.height() == 2);
    CHECK(d.width() == 3);
    for (size_t i = 0; i < pixels.size(); ++i)
        CHECK(d.images.data[i] == double(pixels[i]) / 255.0);  // bit-exact
    CHECK(d.labels == std::vector<int64_t>{4, 9});

    // header layout is the documented big-endian IDX
    const std::vector<uint8_t> bytes = read_raw(fi.path);
    REQUIRE(bytes.size() == 16 + 12);
    const uint8_t header[16] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3};
    for (int i = 0; i < 16; ++i) CHECK(bytes[size_t(i)] == header[i]);
}

TEST_CASE("idx loader rejects malformed files") {
    std::vector<uint8_t> pixels(4, 7);
    const std::vector<uint8_t> labels = {1, 2};
    TempFile fi("fixture_bad_images"), fl("fixture_bad_labels");
    write_idx_images(fi.path, pixels, 2, 2, 1);
    write_idx_labels(fl.path, labels);

    CHECK_THROWS_WITH_AS(load_idx("no_such_file", fl.path, "train"),
                         doctest::Contains("cannot open"), std::runtime_error);

    // magic 0x00000802 instead of 0x00000803
    std::vector<uint8_t> bad = read_raw(fi.path);
    bad[3] = 2;
    TempFile fb("fixture_bad_magic");
    write_raw(fb.path, bad);
    CHECK_THROWS_WITH_AS(load_idx(fb.path, fl.path, "train"), doctest::Contains("magic"),
                         std::runtime_error);

    // payload shorter than the header promises
    bad = read_raw(fi.path);
    bad.pop_back();
    TempFile ft("fixture_truncated");
    write_raw(ft.path, bad);
    CHECK_THROWS_WITH_AS(load_idx(ft.path, fl.path, "train"), doctest::Contains("truncated"),
                         std::runtime_error);

    // 2 images vs 3 labels
    TempFile fl3("fixture_three_labels");
    write_idx_labels(fl3.path, {1, 2, 3});
    CHECK_THROWS_WITH_AS(load_idx(fi.path, fl3.path, "train"), doctest::Contains("mismatch"),
                         std::runtime_error);

    // label byte outside [0, 10)
    std::vector<uint8_t> lb = read_raw(fl.path);
    lb[8] = 11;
    TempFile flb("fixture_bad_label");
    write_raw(flb.path, lb);
    CHECK_THROWS_WITH_AS(load_idx(fi.path, flb.path, "train"), doctest::Contains("label"),
                         std::runtime_error);
}

TEST_CASE("cifar-10 fixture with ramp pixels round trips exactly") {
    // two records: label 7 with an ascending ramp, label 3 constant
    std::vector<uint8_t> rec(3073 * 2);
    rec[0] = 7;
    for (int i = 0; i < 3072; ++i) rec[size_t(1 + i)] = uint8_t(i % 256);
    rec[3073] = 3;
    for (int i = 0; i < 3072; ++i) rec[size_t(3074 + i)] = 50;
    TempFile fc("fixture_cifar.bin");
    write_cifar10(fc.path, rec);

    Dataset d = load_cifar10({fc.path}, "test");
    CHECK(d.count() == 2);
    CHECK(d.channels() == 3);
    CHECK(d.height() == 32);
    CHECK(d.width() == 32);
    CHECK(d.labels == std::vector<int64_t>{7, 3});
    for (int i = 0; i < 3072; ++i)
        CHECK(d.images.data[size_t(i)] == double(i % 256) / 255.0);
    for (int i = 0; i < 3072; ++i)
        CHECK(d.images.data[size_t(3072 + i)] == 50.0 / 255.0);

    // channel-major layout: pixel (ch, row, col) = byte 1 + ch*1024 + row*32 + col
    CHECK(d.images.at4(0, 1, 0, 5) == double((1024 + 5) % 256) / 255.0);

    rec.resize(3073 * 2 - 1);
    TempFile fb("fixture_cifar_short.bin");
    write_raw(fb.path, rec);
    CHECK_THROWS_WITH_AS(load_cifar10({fb.path}, "test"), doctest::Contains("3073"),
                         std::runtime_error);
}

TEST_CASE("standardization zeroes channel means and unit-scales channel stds") {
    std::vector<uint8_t> rec(3073 * 4);
    Rng rng(5);
    for (size_t r = 0; r < 4; ++r) {
        rec[r * 3073] = uint8_t(r);
        for (int i = 0; i < 3072; ++i)
            rec[r * 3073 + 1 + size_t(i)] = uint8_t(rng.next_below(256));
    }
    TempFile fc("fixture_cifar_std.bin");
    write_cifar10(fc.path, rec);
    Dataset d = load_cifar10({fc.path}, "train");

    ChannelStats s = channel_stats(d);
    REQUIRE(s.mean.size() == 3);
    standardize(d, s);
    ChannelStats after = channel_stats(d);
    for (int ch = 0; ch < 3; ++ch) {
        CHECK(std::abs(after.mean[size_t(ch)]) <= 1e-12);
        CHECK(after.stddev[size_t(ch)] == doctest::Approx(1.0).epsilon(1e-12));
    }

    ChannelStats wrong;
    wrong.mean = {0.0};
    wrong.stddev = {1.0};
    CHECK_THROWS_AS(standardize(d, wrong), std::invalid_argument);
}

TEST_CASE("subset is deterministic, order-preserving, and bounds-checked") {
    std::vector<uint8_t> pixels(40 * 4);
    std::vector<uint8_t> labels(40);
    for (size_t i = 0; i < 40; ++i) {
        labels[i] = uint8_t(i % 10);
        for (size_t k = 0; k < 4; ++k) pixels[i * 4 + k] = uint8_t(i);
    }
    TempFile fi("fixture_subset_images"), fl("fixture_subset_labels");
    write_idx_images(fi.path, pixels, 40, 2, 2);
    write_idx_labels(fl.path, labels);
    Dataset d = load_idx(fi.path, fl.path, "train");

    Rng r1(7), r2(7);
    Dataset a = subset(d, 12, r1);
    Dataset b = subset(d, 12, r2);
    CHECK(a.count() == 12);
    CHECK(a.labels == b.labels);
    CHECK(a.images.data == b.images.data);  // identical seed, identical subset

    // order preserved: the image payload identifies the source row
    for (int64_t i = 1; i < a.count(); ++i)
        CHECK(a.images.at4(i, 0, 0, 0) > a.images.at4(i - 1, 0, 0, 0));

    Rng r3(7);
    Dataset full = subset(d, 40, r3);
    CHECK(full.images.data == d.images.data);
    CHECK(full.labels == d.labels);

    Rng r4(7);
    CHECK_THROWS_AS(subset(d, 41, r4), std::invalid_argument);
    CHECK_THROWS_AS(subset(d, 0, r4), std::invalid_argument);
}

TEST_CASE("sampler epochs cover the dataset and drop the short remainder") {
    std::vector<uint8_t> pixels(50 * 1, 0);
    std::vector<uint8_t> labels(50);
    for (size_t i = 0; i < 50; ++i) labels[i] = uint8_t(i % 10);
    TempFile fi("fixture_samp_images"), fl("fixture_samp_labels");
    write_idx_images(fi.path, pixels, 50, 1, 1);
    write_idx_labels(fl.path, labels);
    Dataset d = load_idx(fi.path, fl.path, "train");

    SUBCASE("exact coverage when batch size divides the count") {
        MiniBatchSampler s(d, 10, Rng(3));
        CHECK(s.batches_per_epoch() == 5);
        std::vector<int64_t> seen;
        for (int b = 0; b < 5; ++b) {
            const auto& idx = s.next_indices();
            seen.insert(seen.end(), idx.begin(), idx.end());
        }
        CHECK(s.epoch() == 0);
        std::sort(seen.begin(), seen.end());
        for (int64_t i = 0; i < 50; ++i) CHECK(seen[size_t(i)] == i);  // permutation
        s.next_indices();
        CHECK(s.epoch() == 1);
    }

    SUBCASE("short remainder dropped") {
        MiniBatchSampler s(d, 8, Rng(3));
        CHECK(s.batches_per_epoch() == 6);  // floor(50 / 8)
        std::vector<int64_t> seen;
        for (int b = 0; b < 6; ++b) {
            const auto& idx = s.next_indices();
            seen.insert(seen.end(), idx.begin(), idx.end());
        }
        CHECK(s.epoch() == 0);
        std::sort(seen.begin(), seen.end());
        CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());  // disjoint
        s.next_indices();
        CHECK(s.epoch() == 1);
    }

    SUBCASE("identical seed gives the identical batch sequence") {
        MiniBatchSampler s1(d, 8, Rng(11)), s2(d, 8, Rng(11));
        Tensor im1, im2;
        std::vector<int64_t> lb1, lb2;
        for (int b = 0; b < 20; ++b) {
            s1.next_batch(im1, lb1);
            s2.next_batch(im2, lb2);
            CHECK(lb1 == lb2);
            CHECK(im1.data == im2.data);
        }
        CHECK(im1.shape == std::vector<int64_t>{8, 1, 1, 1});
    }

    CHECK_THROWS_AS(MiniBatchSampler(d, 0, Rng(1)), std::invalid_argument);
    CHECK_THROWS_AS(MiniBatchSampler(d, 51, Rng(1)), std::invalid_argument);
}

TEST_CASE("sampler batches gather the right rows") {
    std::vector<uint8_t> pixels(30);
    std::vector<uint8_t> labels(30);
    for (size_t i = 0; i < 30; ++i) {
        pixels[i] = uint8_t(i * 3);
        labels[i] = uint8_t(i % 10);
    }
    TempFile fi("fixture_gather_images"), fl("fixture_gather_labels");
    write_idx_images(fi.path, pixels, 30, 1, 1);
    write_idx_labels(fl.path, labels);
    Dataset d = load_idx(fi.path, fl.path, "train");

    MiniBatchSampler probe(d, 6, Rng(9));
    MiniBatchSampler gather(d, 6, Rng(9));
    for (int b = 0; b < 10; ++b) {
        const std::vector<int64_t> idx = probe.next_indices();
        Tensor im;
        std::vector<int64_t> lb;
        gather.next_batch(im, lb);
        for (int64_t i = 0; i < 6; ++i) {
            CHECK(im.at4(i, 0, 0, 0) == double(pixels[size_t(idx[size_t(i)])]) / 255.0);
            CHECK(lb[size_t(i)] == d.labels[size_t(idx[size_t(i)])]);
        }
    }
}

TEST_CASE("synthetic digits are deterministic, balanced, and loadable") {
    std::vector<uint8_t> la, lb;
    std::vector<uint8_t> a = synth_images(200, 42, &la);
    std::vector<uint8_t> b = synth_images(200, 42, &lb);
    CHECK(a == b);
    CHECK(la == lb);
    std::vector<uint8_t> c = synth_images(200, 43, nullptr);
    CHECK(a != c);

    int64_t counts[10] = {0};
    for (uint8_t v : la) ++counts[v];
    for (int64_t n : counts) CHECK(n == 20);

    // images carry signal: two classes differ, ink pixels exist, range is sane
    auto energy = [&](int i) {
        int64_t s = 0;
        for (int k = 0; k < 784; ++k) s += a[size_t(i * 784 + k)];
        return s;
    };
    CHECK(energy(0) > 784);             // glyph 0 has substantial ink
    CHECK(energy(1) < energy(8));       // "1" uses less ink than "8"
    bool any_diff = false;
    for (int k = 0; k < 784; ++k) any_diff |= a[size_t(k)] != a[size_t(10 * 784 + k)];
    CHECK(any_diff);  // same class, different jitter

    SynthConfig cfg;
    cfg.train_n = 60;
    cfg.test_n = 30;
    cfg.seed = 7;
    write_synth_idx(".", cfg);
    TempFile f1("./train-images-idx3-ubyte"), f2("./train-labels-idx1-ubyte");
    TempFile f3("./t10k-images-idx3-ubyte"), f4("./t10k-labels-idx1-ubyte");
    Dataset train = load_idx(f1.path, f2.path, "train");
    Dataset test = load_idx(f3.path, f4.path, "test");
    CHECK(train.count() == 60);
    CHECK(test.count() == 30);
    CHECK(train.height() == 28);
    CHECK(train.width() == 28);
    // train and test streams are disjoint draws
    bool differs = false;
    for (int k = 0; k < 784; ++k)
        differs |= train.images.data[size_t(k)] != test.images.data[size_t(k)];
    CHECK(differs);
}
