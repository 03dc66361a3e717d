#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autoopt/rng.hpp"
#include "autoopt/tensor.hpp"

namespace autoopt {

// Image classification split held fully in memory. Images are M x C x H x W
// reals: in [0, 1] straight after loading (pixel byte / 255), optionally
// standardized per channel afterwards. Labels are class indices in [0, 10).
struct Dataset {
    Tensor images;  // M x C x H x W
    std::vector<int64_t> labels;
    std::string split;  // "train" or "test"

    int64_t count() const { return images.dim() == 4 ? images.shape[0] : 0; }
    int64_t channels() const { return images.shape[1]; }
    int64_t height() const { return images.shape[2]; }
    int64_t width() const { return images.shape[3]; }
};

// MNIST IDX pair: big-endian headers, images magic 0x00000803 (M x H x W
// unsigned bytes), labels magic 0x00000801. Pixels are scaled by 1/255.
// Throws std::runtime_error on bad magic, truncation, or a count mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::string& split);

// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072 pixel
// bytes in channel-major order (3 x 32 x 32). Throws std::runtime_error when
// a file's length is not a positive multiple of 3073.
Dataset load_cifar10(const std::vector<std::string>& bin_paths, const std::string& split);

// Writers for the same two formats (fixtures and the synthetic dataset).
// Image bytes are row-major M x H x W; labels one byte each, values < 10.
void write_idx_images(const std::string& path, const std::vector<uint8_t>& pixels, int64_t m,
                      int64_t h, int64_t w);
void write_idx_labels(const std::string& path, const std::vector<uint8_t>& labels);
// records = concatenated 3073-byte CIFAR-10 records
void write_cifar10(const std::string& path, const std::vector<uint8_t>& records);

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // population std, floored at 1e-12
};

// Per-channel moments over every pixel of every image (train-split statistics
// are applied to both splits by the harness).
ChannelStats channel_stats(const Dataset& d);
void standardize(Dataset& d, const ChannelStats& stats);

// Deterministic n-sample subset (without replacement, original order kept).
// n = count() returns the dataset unchanged. Throws std::invalid_argument
// when n is out of range.
Dataset subset(const Dataset& d, int64_t n, Rng& rng);

// Seeded epoch sampler: a fresh Fisher-Yates permutation per epoch, batches
// cut in order, final short batch dropped (constant N keeps V-hat defined).
struct MiniBatchSampler {
    MiniBatchSampler(const Dataset& d, int64_t batch_n, const Rng& rng);

    int64_t batches_per_epoch() const { return data_->count() / batch_n_; }
    int64_t epoch() const { return epoch_; }
    int64_t batch_n() const { return batch_n_; }

    // indices of the next batch; starts a new epoch (reshuffle) when fewer
    // than batch_n indices remain
    const std::vector<int64_t>& next_indices();

    // gathers the indexed images/labels into batch-major tensors
    void next_batch(Tensor& images, std::vector<int64_t>& labels);

private:
    const Dataset* data_;
    int64_t batch_n_;
    Rng rng_;
    std::vector<int64_t> perm_;
    std::vector<int64_t> current_;
    int64_t cursor_ = 0;
    int64_t epoch_ = 0;
};

}  // namespace autoopt
