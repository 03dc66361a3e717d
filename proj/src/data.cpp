#include "autoopt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace autoopt {

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;
constexpr int64_t kCifarRecord = 3073;  // 1 label byte + 3 * 32 * 32 pixels

std::vector<uint8_t> read_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("data: cannot open " + path);
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    const size_t got = size ? std::fread(bytes.data(), 1, bytes.size(), f) : 0;
    std::fclose(f);
    if (got != bytes.size()) throw std::runtime_error("data: short read on " + path);
    return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("data: cannot create " + path);
    const size_t put = bytes.empty() ? 0 : std::fwrite(bytes.data(), 1, bytes.size(), f);
    const bool flushed = std::fclose(f) == 0;
    if (put != bytes.size() || !flushed) throw std::runtime_error("data: short write on " + path);
}

uint32_t read_be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
    if (off + 4 > b.size()) throw std::runtime_error("data: truncated header in " + path);
    return uint32_t(b[off]) << 24 | uint32_t(b[off + 1]) << 16 | uint32_t(b[off + 2]) << 8 |
           uint32_t(b[off + 3]);
}

void push_be32(std::vector<uint8_t>& b, uint32_t v) {
    b.push_back(uint8_t(v >> 24));
    b.push_back(uint8_t(v >> 16));
    b.push_back(uint8_t(v >> 8));
    b.push_back(uint8_t(v));
}

void check_label(int64_t v, const std::string& path) {
    if (v < 0 || v >= 10)
        throw std::runtime_error("data: label " + std::to_string(v) + " out of [0,10) in " + path);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::string& split) {
    const std::vector<uint8_t> ib = read_file(images_path);
    const uint32_t imagic = read_be32(ib, 0, images_path);
    if (imagic != kImagesMagic)
        throw std::runtime_error("data: bad images magic in " + images_path);
    const int64_t m = read_be32(ib, 4, images_path);
    const int64_t h = read_be32(ib, 8, images_path);
    const int64_t w = read_be32(ib, 12, images_path);
    if (int64_t(ib.size()) != 16 + m * h * w)
        throw std::runtime_error("data: truncated image payload in " + images_path);

    const std::vector<uint8_t> lb = read_file(labels_path);
    const uint32_t lmagic = read_be32(lb, 0, labels_path);
    if (lmagic != kLabelsMagic)
        throw std::runtime_error("data: bad labels magic in " + labels_path);
    const int64_t lm = read_be32(lb, 4, labels_path);
    if (int64_t(lb.size()) != 8 + lm)
        throw std::runtime_error("data: truncated label payload in " + labels_path);
    if (lm != m)
        throw std::runtime_error("data: image/label count mismatch (" + std::to_string(m) +
                                 " vs " + std::to_string(lm) + ")");

    Dataset d;
    d.split = split;
    d.images = Tensor({m, 1, h, w});
    for (int64_t i = 0; i < m * h * w; ++i)
        d.images.data[size_t(i)] = double(ib[size_t(16 + i)]) / 255.0;
    d.labels.resize(size_t(m));
    for (int64_t i = 0; i < m; ++i) {
        d.labels[size_t(i)] = lb[size_t(8 + i)];
        check_label(d.labels[size_t(i)], labels_path);
    }
    return d;
}

Dataset load_cifar10(const std::vector<std::string>& bin_paths, const std::string& split) {
    if (bin_paths.empty()) throw std::runtime_error("data: no cifar-10 files given");
    Dataset d;
    d.split = split;
    std::vector<double> pixels;
    for (const auto& path : bin_paths) {
        const std::vector<uint8_t> b = read_file(path);
        if (b.empty() || b.size() % size_t(kCifarRecord) != 0)
            throw std::runtime_error("data: " + path + " is not a multiple of 3073 bytes");
        const int64_t recs = int64_t(b.size()) / kCifarRecord;
        for (int64_t r = 0; r < recs; ++r) {
            const size_t off = size_t(r * kCifarRecord);
            d.labels.push_back(b[off]);
            check_label(d.labels.back(), path);
            for (int64_t k = 0; k < kCifarRecord - 1; ++k)
                pixels.push_back(double(b[off + 1 + size_t(k)]) / 255.0);
        }
    }
    const int64_t m = int64_t(d.labels.size());
    d.images = Tensor({m, 3, 32, 32});
    d.images.data = std::move(pixels);
    return d;
}

void write_idx_images(const std::string& path, const std::vector<uint8_t>& pixels, int64_t m,
                      int64_t h, int64_t w) {
    if (int64_t(pixels.size()) != m * h * w)
        throw std::invalid_argument("data: pixel count does not match m*h*w");
    std::vector<uint8_t> b;
    b.reserve(pixels.size() + 16);
    push_be32(b, kImagesMagic);
    push_be32(b, uint32_t(m));
    push_be32(b, uint32_t(h));
    push_be32(b, uint32_t(w));
    b.insert(b.end(), pixels.begin(), pixels.end());
    write_file(path, b);
}

void write_idx_labels(const std::string& path, const std::vector<uint8_t>& labels) {
    for (uint8_t v : labels) check_label(v, path);
    std::vector<uint8_t> b;
    b.reserve(labels.size() + 8);
    push_be32(b, kLabelsMagic);
    push_be32(b, uint32_t(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    write_file(path, b);
}

void write_cifar10(const std::string& path, const std::vector<uint8_t>& records) {
    if (records.empty() || records.size() % size_t(kCifarRecord) != 0)
        throw std::invalid_argument("data: records must be a positive multiple of 3073 bytes");
    write_file(path, records);
}

ChannelStats channel_stats(const Dataset& d) {
    const int64_t m = d.count(), c = d.channels(), hw = d.height() * d.width();
    ChannelStats s;
    s.mean.assign(size_t(c), 0.0);
    s.stddev.assign(size_t(c), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* px = d.images.ptr() + (i * c + ch) * hw;
            for (int64_t k = 0; k < hw; ++k) s.mean[size_t(ch)] += px[k];
        }
    for (int64_t ch = 0; ch < c; ++ch) s.mean[size_t(ch)] /= double(m * hw);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* px = d.images.ptr() + (i * c + ch) * hw;
            for (int64_t k = 0; k < hw; ++k) {
                const double r = px[k] - s.mean[size_t(ch)];
                s.stddev[size_t(ch)] += r * r;
            }
        }
    for (int64_t ch = 0; ch < c; ++ch)
        s.stddev[size_t(ch)] = std::max(std::sqrt(s.stddev[size_t(ch)] / double(m * hw)), 1e-12);
    return s;
}

void standardize(Dataset& d, const ChannelStats& stats) {
    const int64_t m = d.count(), c = d.channels(), hw = d.height() * d.width();
    if (int64_t(stats.mean.size()) != c || int64_t(stats.stddev.size()) != c)
        throw std::invalid_argument("data: channel stats size mismatch");
    for (int64_t i = 0; i < m; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            double* px = d.images.ptr() + (i * c + ch) * hw;
            for (int64_t k = 0; k < hw; ++k)
                px[k] = (px[k] - stats.mean[size_t(ch)]) / stats.stddev[size_t(ch)];
        }
}

Dataset subset(const Dataset& d, int64_t n, Rng& rng) {
    const int64_t m = d.count();
    if (n < 1 || n > m) throw std::invalid_argument("data: subset size out of range");
    if (n == m) return d;
    // first n of a permutation, re-sorted so the subset keeps dataset order
    std::vector<int64_t> pick = rng.permutation(m);
    pick.resize(size_t(n));
    std::sort(pick.begin(), pick.end());

    const int64_t c = d.channels(), hw = d.height() * d.width();
    Dataset out;
    out.split = d.split;
    out.images = Tensor({n, c, d.height(), d.width()});
    out.labels.resize(size_t(n));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t src = pick[size_t(i)];
        std::copy_n(d.images.ptr() + src * c * hw, c * hw, out.images.ptr() + i * c * hw);
        out.labels[size_t(i)] = d.labels[size_t(src)];
    }
    return out;
}

MiniBatchSampler::MiniBatchSampler(const Dataset& d, int64_t batch_n, const Rng& rng)
    : data_(&d), batch_n_(batch_n), rng_(rng) {
    if (batch_n < 1 || batch_n > d.count())
        throw std::invalid_argument("data: batch size out of range");
    perm_ = rng_.permutation(data_->count());
    current_.reserve(size_t(batch_n));
}

const std::vector<int64_t>& MiniBatchSampler::next_indices() {
    if (cursor_ + batch_n_ > int64_t(perm_.size())) {  // drop the short remainder
        perm_ = rng_.permutation(data_->count());
        cursor_ = 0;
        ++epoch_;
    }
    current_.assign(perm_.begin() + cursor_, perm_.begin() + cursor_ + batch_n_);
    cursor_ += batch_n_;
    return current_;
}

void MiniBatchSampler::next_batch(Tensor& images, std::vector<int64_t>& labels) {
    const std::vector<int64_t>& idx = next_indices();
    const int64_t c = data_->channels(), hw = data_->height() * data_->width();
    if (images.dim() != 4 || images.shape[0] != batch_n_ || images.shape[1] != c ||
        images.shape[2] != data_->height() || images.shape[3] != data_->width())
        images = Tensor({batch_n_, c, data_->height(), data_->width()});
    labels.resize(size_t(batch_n_));
    for (int64_t i = 0; i < batch_n_; ++i) {
        std::copy_n(data_->images.ptr() + idx[size_t(i)] * c * hw, c * hw,
                    images.ptr() + i * c * hw);
        labels[size_t(i)] = data_->labels[size_t(idx[size_t(i)])];
    }
}

}  // namespace autoopt
