#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "lns/image_io.hpp"
#include "lns/tensor.hpp"

// Per-pixel network input: 3 color channels plus 2 normalized position
// channels, everything in [0,1], and the Sobel contour map that steers the
// bi-directional gradient layer.

namespace lns {

enum class ColorSpace { lab, rgb };

inline std::string to_string(ColorSpace cs) { return cs == ColorSpace::lab ? "lab" : "rgb"; }

inline ColorSpace color_space_from_string(const std::string& s) {
    if (s == "lab") return ColorSpace::lab;
    if (s == "rgb") return ColorSpace::rgb;
    throw InvalidArgument("unknown color space '" + s + "' (expected lab or rgb)");
}

/// Network-ready image: features[5,H,W] = {color, position}, contour[H,W].
struct FeatureImage {
    int height = 0;
    int width = 0;
    Tensor features;  // [5,H,W], all values in [0,1]
    Tensor contour;   // [H,W], min-max normalized to [0,1]
    ColorSpace color_space = ColorSpace::lab;

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
};

namespace detail {

inline double srgb_to_linear(double c) {
    return c > 0.04045 ? std::pow((c + 0.055) / 1.055, 2.4) : c / 12.92;
}

inline double lab_f(double t) {
    return t > 0.008856 ? std::cbrt(t) : 7.787 * t + 16.0 / 116.0;
}

/// sRGB (D65) to CIELAB, L in [0,100], a/b roughly [-128,127].
inline void srgb_to_lab(double r, double g, double b, double& L, double& A, double& B) {
    const double rl = srgb_to_linear(r), gl = srgb_to_linear(g), bl = srgb_to_linear(b);
    const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    const double fx = lab_f(x / 0.95047), fy = lab_f(y / 1.0), fz = lab_f(z / 1.08883);
    L = 116.0 * fy - 16.0;
    A = 500.0 * (fx - fy);
    B = 200.0 * (fy - fz);
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace detail

/// Builds the 5-channel input: color (LAB normalized to [0,1], or plain RGB
/// in [0,1]) plus position channels p_x = col/(W-1), p_y = row/(H-1).
/// The contour map is left all-zero; see sobel_contour.
inline FeatureImage build_features(const Raster& raster, ColorSpace cs) {
    FeatureImage img;
    img.height = raster.height;
    img.width = raster.width;
    img.color_space = cs;
    img.features = Tensor({5, raster.height, raster.width});
    img.contour = Tensor({raster.height, raster.width});
    const double inv_w = raster.width > 1 ? 1.0 / (raster.width - 1) : 0.0;
    const double inv_h = raster.height > 1 ? 1.0 / (raster.height - 1) : 0.0;
    for (int y = 0; y < raster.height; ++y) {
        for (int x = 0; x < raster.width; ++x) {
            const double r = raster.at(y, x, 0) / 255.0;
            const double g = raster.at(y, x, 1) / 255.0;
            const double b = raster.at(y, x, 2) / 255.0;
            if (cs == ColorSpace::rgb) {
                img.features(0, y, x) = r;
                img.features(1, y, x) = g;
                img.features(2, y, x) = b;
            } else {
                double L, A, B;
                detail::srgb_to_lab(r, g, b, L, A, B);
                img.features(0, y, x) = detail::clamp01(L / 100.0);
                img.features(1, y, x) = detail::clamp01((A + 128.0) / 255.0);
                img.features(2, y, x) = detail::clamp01((B + 128.0) / 255.0);
            }
            img.features(3, y, x) = x * inv_w;
            img.features(4, y, x) = y * inv_h;
        }
    }
    return img;
}

/// Sobel gradient magnitude of the luma, replicate-padded at the borders and
/// min-max normalized to [0,1]. A constant image yields all zeros.
inline Tensor sobel_contour(const Raster& raster) {
    const int H = raster.height, W = raster.width;
    Tensor luma({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            luma(y, x) = 0.299 * raster.at(y, x, 0) + 0.587 * raster.at(y, x, 1) +
                         0.114 * raster.at(y, x, 2);

    auto at = [&](int y, int x) {  // replicate padding
        return luma(std::clamp(y, 0, H - 1), std::clamp(x, 0, W - 1));
    };
    Tensor mag({H, W});
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double gx = -at(y - 1, x - 1) + at(y - 1, x + 1) - 2.0 * at(y, x - 1) +
                              2.0 * at(y, x + 1) - at(y + 1, x - 1) + at(y + 1, x + 1);
            const double gy = -at(y - 1, x - 1) - 2.0 * at(y - 1, x) - at(y - 1, x + 1) +
                              at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1);
            const double m = std::sqrt(gx * gx + gy * gy);
            mag(y, x) = m;
            lo = std::min(lo, m);
            hi = std::max(hi, m);
        }
    }
    if (hi > lo) {
        const double inv = 1.0 / (hi - lo);
        for (auto& v : mag.data) v = (v - lo) * inv;
    } else {
        std::fill(mag.data.begin(), mag.data.end(), 0.0);
    }
    return mag;
}

/// Convenience: features plus contour in one step.
inline FeatureImage prepare_image(const Raster& raster, ColorSpace cs) {
    FeatureImage img = build_features(raster, cs);
    img.contour = sobel_contour(raster);
    return img;
}

}  // namespace lns
