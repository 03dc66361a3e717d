#include "autoopt/synth.hpp"

#include <algorithm>
#include <cmath>

#include "autoopt/data.hpp"
#include "autoopt/rng.hpp"

namespace autoopt {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Seg {
    double x0, y0, x1, y1;
};

// seven-segment endpoints in a unit glyph box (y grows downward)
constexpr Seg kA{0.2, 0.15, 0.8, 0.15};  // top
constexpr Seg kB{0.8, 0.15, 0.8, 0.50};  // top right
constexpr Seg kC{0.8, 0.50, 0.8, 0.85};  // bottom right
constexpr Seg kD{0.2, 0.85, 0.8, 0.85};  // bottom
constexpr Seg kE{0.2, 0.50, 0.2, 0.85};  // bottom left
constexpr Seg kF{0.2, 0.15, 0.2, 0.50};  // top left
constexpr Seg kG{0.2, 0.50, 0.8, 0.50};  // middle

const std::vector<Seg> kGlyphs[10] = {
    {kA, kB, kC, kD, kE, kF},      // 0
    {kB, kC},                      // 1
    {kA, kB, kG, kE, kD},          // 2
    {kA, kB, kG, kC, kD},          // 3
    {kF, kG, kB, kC},              // 4
    {kA, kF, kG, kC, kD},          // 5
    {kA, kF, kE, kD, kC, kG},      // 6
    {kA, kB, kC},                  // 7
    {kA, kB, kC, kD, kE, kF, kG},  // 8
    {kA, kB, kC, kD, kF, kG},      // 9
};

// second handwriting style for some classes (empty = unimodal); each variant
// stays separable from every other class's shapes, but the class-conditional
// pixel distribution turns multimodal, like print vs cursive forms
const std::vector<Seg> kGlyphsAlt[10] = {
    {},  // 0
    {Seg{0.5, 0.15, 0.5, 0.85}, Seg{0.5, 0.15, 0.32, 0.33},
     Seg{0.3, 0.85, 0.7, 0.85}},  // print 1: stem, flag, base
    {kA, Seg{0.8, 0.15, 0.2, 0.85}, kD},  // z-style 2
    {},                                   // 3
    {Seg{0.62, 0.15, 0.2, 0.55}, Seg{0.2, 0.55, 0.8, 0.55},
     Seg{0.62, 0.15, 0.62, 0.85}},  // closed 4: diagonal, bar, stem
    {},                             // 5
    {kF, kE, kD, kC, kG},           // topless 6
    {kA, Seg{0.8, 0.15, 0.35, 0.85}, Seg{0.33, 0.5, 0.72, 0.5}},  // barred 7
    {},                                                           // 8
    {kA, kB, kC, kF, kG},                                         // tail-less 9
};

double seg_distance(const Seg& s, double x, double y) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((x - s.x0) * dx + (y - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double rx = x - (s.x0 + t * dx), ry = y - (s.y0 + t * dy);
    return std::sqrt(rx * rx + ry * ry);
}

void render_one(uint8_t* out, int label, Rng& rng) {
    const bool alt = !kGlyphsAlt[label].empty() && rng.next_uniform(0.0, 1.0) < 0.5;
    std::vector<Seg> glyph = alt ? kGlyphsAlt[label] : kGlyphs[label];
    // a heavy tail of barely-legible samples, like the long tail of
    // handwriting styles; they carry most of the late-training gradient spread
    const bool hard = rng.next_uniform(0.0, 1.0) < 0.06;
    const double mag = hard ? 1.5 : 1.0;
    // handwriting wobble: every segment endpoint wanders independently and
    // every segment gets its own stroke weight
    std::vector<double> seg_thick(glyph.size());
    for (size_t s = 0; s < glyph.size(); ++s) {
        const double j = 0.045 * mag;
        glyph[s].x0 += rng.next_uniform(-j, j);
        glyph[s].y0 += rng.next_uniform(-j, j);
        glyph[s].x1 += rng.next_uniform(-j, j);
        glyph[s].y1 += rng.next_uniform(-j, j);
        seg_thick[s] = rng.next_uniform(0.7, 1.35);
    }
    // affine pixel->glyph map: rotation, shear, per-axis scale, shift. Digits
    // land anywhere in the frame at any size, like un-centered scans; the
    // class-conditional pixel distribution is multimodal on purpose.
    const double rot = rng.next_uniform(-0.15, 0.15) * mag;
    const double shear = rng.next_uniform(-0.13, 0.13) * mag;
    const double sx = rng.next_uniform(0.70, 1.15);
    const double sy = sx * rng.next_uniform(0.85, 1.18);
    const double tx = rng.next_uniform(-0.10, 0.10);
    const double ty = rng.next_uniform(-0.10, 0.10);
    const double thick = rng.next_uniform(0.05, 0.11);
    const double peak = rng.next_uniform(hard ? 0.40 : 0.55, 1.0);
    const double soft = rng.next_uniform(0.030, 0.070);  // edge softness
    const double noise = rng.next_uniform(4.0, 16.0);    // per-image sensor noise
    // per-image elastic bend: slow sine warp of the glyph frame, like curved
    // pen strokes; a large style factor at little cost to legibility
    const double wx = rng.next_uniform(0.0, 0.04) * mag;
    const double wy = rng.next_uniform(0.0, 0.04) * mag;
    const double wfx = rng.next_uniform(0.6, 1.4), wpx = rng.next_uniform(0.0, 1.0);
    const double wfy = rng.next_uniform(0.6, 1.4), wpy = rng.next_uniform(0.0, 1.0);
    // per-image low-frequency illumination: offset plus gradient, like uneven
    // scanner lighting; label-independent clutter the first conv layer sees raw
    const double bg0 = rng.next_uniform(0.0, 22.0);
    const double bgx = rng.next_uniform(-20.0, 20.0);
    const double bgy = rng.next_uniform(-20.0, 20.0);
    // one faint label-irrelevant scratch as clutter
    Seg scratch{rng.next_uniform(0.1, 0.9), rng.next_uniform(0.1, 0.9), 0, 0};
    scratch.x1 = scratch.x0 + rng.next_uniform(-0.25, 0.25);
    scratch.y1 = scratch.y0 + rng.next_uniform(-0.25, 0.25);
    const double scratch_ink = rng.next_uniform(0.0, 0.45);
    const double cr = std::cos(rot), sr = std::sin(rot);

    for (int py = 0; py < 28; ++py)
        for (int px = 0; px < 28; ++px) {
            // pixel center -> centered coords -> rotate/shear/scale -> glyph box
            const double u0 = (px + 0.5) / 28.0 - 0.5;
            const double v0 = (py + 0.5) / 28.0 - 0.5;
            const double u = u0 - tx;
            const double v = v0 - ty;
            const double xr = cr * u + sr * v;
            const double yr = -sr * u + cr * v;
            double xg = xr / sx + shear * yr + 0.5;
            double yg = yr / sy + 0.5;
            xg += wx * std::sin(2.0 * kPi * (wfy * yg + wpy));
            yg += wy * std::sin(2.0 * kPi * (wfx * xg + wpx));
            double ink = 0;
            for (size_t s = 0; s < glyph.size(); ++s) {
                const double d = seg_distance(glyph[s], xg, yg);
                ink = std::max(
                    ink, std::clamp((thick * seg_thick[s] - d) / soft + 1.0, 0.0, 1.0));
            }
            const double ds = seg_distance(scratch, xg, yg);
            ink = std::max(ink,
                           scratch_ink * std::clamp((0.035 - ds) / soft + 1.0, 0.0, 1.0));
            double val = 255.0 * peak * ink + bg0 + bgx * u0 + bgy * v0 +
                         noise * rng.next_normal();
            out[py * 28 + px] = uint8_t(std::clamp(val, 0.0, 255.0));
        }
}

}  // namespace

std::vector<uint8_t> synth_images(int64_t n, uint64_t seed, std::vector<uint8_t>* labels) {
    std::vector<uint8_t> pixels(size_t(n) * 784);
    if (labels) labels->resize(size_t(n));
    const Rng base(seed);
#pragma omp parallel for schedule(static) if (n > 256)
    for (int64_t i = 0; i < n; ++i) {
        const int label = int(i % 10);
        Rng rng = base.derive(uint64_t(i));
        render_one(pixels.data() + i * 784, label, rng);
        if (labels) (*labels)[size_t(i)] = uint8_t(label);
    }
    return pixels;
}

void write_synth_idx(const std::string& dir, const SynthConfig& cfg) {
    std::vector<uint8_t> labels;
    const Rng root(cfg.seed);
    std::vector<uint8_t> train = synth_images(cfg.train_n, root.derive(1).seed(), &labels);
    write_idx_images(dir + "/train-images-idx3-ubyte", train, cfg.train_n, 28, 28);
    write_idx_labels(dir + "/train-labels-idx1-ubyte", labels);
    std::vector<uint8_t> test = synth_images(cfg.test_n, root.derive(2).seed(), &labels);
    write_idx_images(dir + "/t10k-images-idx3-ubyte", test, cfg.test_n, 28, 28);
    write_idx_labels(dir + "/t10k-labels-idx1-ubyte", labels);
}

}  // namespace autoopt
