#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lns/features.hpp"
#include "lns/image_io.hpp"
#include "support/helpers.hpp"

// Deterministic synthetic scenes for the trainer and acceptance suites:
// piecewise-constant color regions with optional Gaussian noise, plus their
// ground-truth region labels.

namespace lnstest {

struct SyntheticScene {
    lns::Raster raster;
    std::vector<int> gt_labels;  // region index per pixel
};

inline double gaussian(std::mt19937_64& rng) {
    // Box-Muller on hand-mapped uniforms, deterministic across platforms
    const double u1 = std::max(uniform_unit(rng), 1e-12);
    const double u2 = uniform_unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Four constant-color regions split by a vertical edge at `split_x` and a
/// horizontal edge at `split_y` (deliberately off any regular grid), with
/// additive Gaussian noise of strength `sigma` (on the 0..1 scale).
inline SyntheticScene four_region_scene(int height, int width, int split_y, int split_x,
                                        double sigma, std::uint64_t seed,
                                        const std::array<std::array<int, 3>, 4>& colors = {
                                            {{220, 60, 50}, {60, 180, 70}, {50, 80, 210},
                                             {230, 210, 60}}}) {
    SyntheticScene scene;
    scene.raster.height = height;
    scene.raster.width = width;
    scene.raster.rgb.resize(static_cast<std::size_t>(height) * width * 3);
    scene.gt_labels.resize(static_cast<std::size_t>(height) * width);
    std::mt19937_64 rng(seed);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int region = (y >= split_y ? 2 : 0) + (x >= split_x ? 1 : 0);
            scene.gt_labels[static_cast<std::size_t>(y) * width + x] = region;
            for (int c = 0; c < 3; ++c) {
                double v = colors[static_cast<std::size_t>(region)][static_cast<std::size_t>(c)] /
                           255.0;
                v += sigma * gaussian(rng);
                v = std::clamp(v, 0.0, 1.0);
                scene.raster.rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return scene;
}

/// Writes a raster as a binary PPM (P6); handy for CLI round trips.
inline void write_ppm(const std::string& path, const lns::Raster& r) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw lns::Error("cannot write " + path);
    std::fprintf(f, "P6\n%d %d\n255\n", r.width, r.height);
    std::fwrite(r.rgb.data(), 1, r.rgb.size(), f);
    std::fclose(f);
}

}  // namespace lnstest
