#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace autoopt {

// Deterministic stand-in for handwritten digits: ten stroke glyphs rendered
// at 28 x 28 with seeded per-sample rotation/shear/scale/shift, stroke
// thickness and intensity jitter, and additive pixel noise. Labels cycle
// 0..9 so every class has (almost) equal count.
struct SynthConfig {
    int64_t train_n = 10000;
    int64_t test_n = 2000;
    uint64_t seed = 1234;
};

// n images of 28 x 28 = 784 bytes each; labels filled when non-null.
// Image i depends only on (seed, i), so any prefix is reproducible.
std::vector<uint8_t> synth_images(int64_t n, uint64_t seed, std::vector<uint8_t>* labels);

// Writes the four standard-named IDX files (train-images-idx3-ubyte,
// train-labels-idx1-ubyte, t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte)
// into dir. Train and test use disjoint derived seeds.
void write_synth_idx(const std::string& dir, const SynthConfig& cfg);

}  // namespace autoopt
